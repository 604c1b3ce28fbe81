#pragma once

// Command implementations behind the `srne` executable. Every command reads
// a resolved RunConfig and writes plain files under RunConfig::out.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "srne/datagen.hpp"
#include "srne/evolve.hpp"
#include "srne/model.hpp"
#include "srne/pretrain.hpp"
#include "srne/stats.hpp"

namespace srne {

struct RunConfig {
    std::string preset = "desk";
    std::uint64_t seed = 1;
    std::size_t trials = 10;
    std::filesystem::path out = "runs/desk";
    std::size_t threads = 1;
    GenParams data;
    ModelConfig model;
    PretrainConfig pretrain;
    EvolveConfig evolve;
    std::size_t evolve_corpus_size = 20;

    static RunConfig desk();
    static RunConfig paper();
    static RunConfig from_preset(const std::string& name); // throws ConfigError
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Overlays the keys of `j` onto `base`. Unknown keys, wrong types and
/// invalid values throw ConfigError naming the offending key.
RunConfig apply_overrides(RunConfig base, const nlohmann::json& j);

struct CliOverrides {
    std::optional<std::filesystem::path> config;
    std::optional<std::string> preset;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trials;
    std::optional<std::filesystem::path> out;
    std::optional<std::size_t> threads;
};

/// preset (flag, else the config file's "preset", else desk) -> config file
/// -> command-line flags.
RunConfig resolve_config(const CliOverrides& o);

nlohmann::json to_json(const RunConfig& c);

/// Output layout under RunConfig::out.
struct RunPaths {
    std::filesystem::path root;
    std::filesystem::path data_dir() const { return root / "data"; }
    std::filesystem::path corpus(CorpusKind k) const { return data_dir() / (std::string(to_string(k)) + ".jsonl"); }
    std::filesystem::path pool_dir() const { return root / "pool"; }
    std::filesystem::path pool_manifest() const { return pool_dir() / "manifest.json"; }
    std::filesystem::path trials_dir() const { return root / "trials"; }
    std::filesystem::path trial_dir(std::size_t t) const;
    std::filesystem::path test_dir(CorpusKind k) const { return root / "test" / std::string(to_string(k)); }
    std::filesystem::path report_dir() const { return root / "report"; }
};

std::uint64_t corpus_seed(std::uint64_t run_seed, CorpusKind k);
std::uint64_t trial_seed(std::uint64_t run_seed, std::size_t trial);
std::size_t default_corpus_size(const RunConfig& c, CorpusKind k);

/// Reads the corpus file when present (checking it matches the config),
/// otherwise builds and saves it.
Corpus load_or_build_corpus(const RunConfig& c, CorpusKind k);

// ------------------------------------------------------------ test tables

struct ReportRow {
    std::string method;
    std::size_t pairs = 0;
    std::size_t valid = 0;      // syntactically valid and finite predictions
    double ce_mean = 0.0;       // over all pairs
    std::optional<double> ted_mean;            // over syntactically valid predictions
    std::optional<double> nmse_median;         // over finite predictions
    std::optional<double> one_minus_r2_median; // over finite predictions with non-constant targets
};

struct EquationRecord {
    std::string method;
    std::size_t index = 0;
    std::string target;
    PairOutcome outcome;
};

ReportRow aggregate_rows(const std::string& method, std::span<const PairOutcome> outcomes);
std::string report_table_csv(std::span<const ReportRow> rows);
std::string equation_records_csv(std::span<const EquationRecord> records);

double median(std::vector<double> v);

// --------------------------------------------------------- trial summaries

/// Generation-indexed aggregates over a set of trial histories.
struct EmergencePoint {
    std::size_t generation = 0;
    double mean_valid_fraction = 0.0; // mean over trials of the member valid fraction
    double trials_started = 0.0;      // fraction of trials fully valid at some generation <= this one
};

std::vector<EmergencePoint> emergence_curve(std::span<const std::vector<GenerationStats>> histories);

/// Mean of consecutive non-overlapping windows.
std::vector<double> window_means(std::span<const double> v, std::size_t window);

/// First generation whose whole population is valid.
std::optional<std::size_t> first_full_validity(std::span<const GenerationStats> h);

struct Comparison {
    std::string label_a;
    std::string label_b;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    Alternative alternative = Alternative::TwoSided;
    MannWhitneyResult result;
    double p_bonferroni = 1.0;
};

/// Generation 0 vs final best CE, and best MSE at first full validity vs
/// final best MSE (trials without both values are left out). One-sided
/// ("final is lower"), Bonferroni over the comparisons that could be made.
std::vector<Comparison> evolution_comparisons(std::span<const std::vector<GenerationStats>> histories);

nlohmann::json to_json(const Comparison& c);

// ---------------------------------------------------------------- commands

struct GenDataOptions {
    std::optional<CorpusKind> kind; // all kinds when empty
};

struct TestOptions {
    CorpusKind kind = CorpusKind::Test;
    std::optional<std::filesystem::path> checkpoint;
};

/// Return process exit codes; errors are reported on `err`.
int cmd_gen_data(const RunConfig& c, const GenDataOptions& o, std::ostream& log, std::ostream& err);
int cmd_pretrain(const RunConfig& c, std::ostream& log, std::ostream& err);
int cmd_evolve(const RunConfig& c, std::ostream& log, std::ostream& err);
int cmd_test(const RunConfig& c, const TestOptions& o, std::ostream& log, std::ostream& err);
int cmd_report(const RunConfig& c, std::ostream& log, std::ostream& err);

} // namespace srne
