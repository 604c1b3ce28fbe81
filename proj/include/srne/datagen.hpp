#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "srne/expr.hpp"
#include "srne/rng.hpp"

namespace srne {

enum class CorpusKind { Pretrain, Evolve, Test, UnseenTest };

std::string_view to_string(CorpusKind k);
CorpusKind corpus_kind_from_string(std::string_view s);

struct GenParams {
    std::size_t max_len = kMaxLength;
    std::size_t n_points = 30;
    double x_lo = 0.1;
    double x_hi = 4.0;
    double y_cap = 1e6;
    double leaf_base = 0.3;  // leaf probability at depth 0
    double leaf_step = 0.1;  // added per level of depth
    double leaf_max = 0.9;
    double exponent_var_prob = 0.25; // pow exponent is x rather than a constant

    friend bool operator==(const GenParams&, const GenParams&) = default;
};

nlohmann::json to_json(const GenParams& p);
GenParams gen_params_from_json(const nlohmann::json& j);

struct DataEquationPair {
    Expression equation;
    std::vector<double> xs;
    std::vector<double> ys;
    TokenSequence tokens;
};

struct Corpus {
    CorpusKind kind = CorpusKind::Evolve;
    std::uint64_t seed = 0;
    GenParams params;
    std::vector<DataEquationPair> pairs;
};

enum class DatagenErrc { GenerationExhausted, DomainRejected, BadSize, BadFile };

class DatagenError : public std::runtime_error {
public:
    DatagenError(DatagenErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    DatagenErrc code() const noexcept { return code_; }

private:
    DatagenErrc code_;
};

Expression random_equation(Rng& rng, const GenParams& params = {});

/// Draws `params.n_points` xs uniformly and evaluates. Retries up to 100
/// x-draws; throws DomainRejected when none is finite and within y_cap.
DataEquationPair sample_pair(Rng& rng, const Expression& e, const GenParams& params = {});

/// Random corpus for the pretrain / evolve kinds, benchmark corpus for the
/// test kinds (size is then fixed by the benchmark).
Corpus build_corpus(std::uint64_t seed, CorpusKind kind, std::size_t size, const GenParams& params = {});

/// The five benchmark targets, in order.
std::vector<Expression> benchmark_equations();
/// 20 X-sets per benchmark equation; UnseenTest drops sin(x*exp(x)).
Corpus benchmark_corpus(std::uint64_t seed, bool unseen = false, const GenParams& params = {});

/// Throws DatagenError(BadFile) when a stored pair violates its invariants.
void validate_pair(const DataEquationPair& p, const GenParams& params);

// Line-delimited JSON: one header object, then one object per pair.
inline constexpr int kCorpusFormatVersion = 1;
std::string corpus_to_jsonl(const Corpus& c);
Corpus corpus_from_jsonl(std::string_view text);
void save_corpus(const Corpus& c, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

} // namespace srne
