#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srne/datagen.hpp"
#include "srne/model.hpp"

namespace srne {

/// CE charged when a teacher-forced pass overflows. Large but finite so that
/// CE sorting still works.
inline constexpr double kCePenalty = 1e6;
inline constexpr double kNmseEpsilon = 1e-8;

struct FitnessRecord {
    double ce = 0.0;
    std::optional<double> mse; // absent exactly when !valid
    bool valid = false;
    std::optional<double> nmse;
    std::optional<double> one_minus_r2;
    std::optional<double> ted;

    friend bool operator==(const FitnessRecord&, const FitnessRecord&) = default;
};

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ZeroVariance : public MetricError {
public:
    ZeroVariance() : MetricError("1 - R^2 is undefined: all targets are equal") {}
};

/// PAD-masked mean CE; the same routine tensor::cross_entropy_loss uses.
double symbolic_ce(const Tensor& logits, std::span<const int> target);

/// Mean squared error; nullopt ("Invalid") if any prediction is non-finite.
std::optional<double> numeric_mse(std::span<const double> ys, std::span<const EvalResult> yhat);
double numeric_mse(std::span<const double> ys, std::span<const double> yhat);

/// mean((y - yhat)^2 / |y + eps|).
double nmse(std::span<const double> ys, std::span<const double> yhat);

/// Throws ZeroVariance when all ys are equal.
double one_minus_r2(std::span<const double> ys, std::span<const double> yhat);

/// Evaluates e at every x.
std::vector<EvalResult> evaluate_all(const Expression& e, std::span<const double> xs);

/// Everything measured for one pair during testing.
struct PairOutcome {
    double ce = 0.0;
    TokenSequence decoded;
    std::optional<Expression> predicted; // absent when syntactically invalid
    bool finite = false;                 // predicted evaluates finitely on all xs
    std::optional<double> mse;
    std::optional<double> nmse;
    std::optional<double> one_minus_r2;
    std::optional<double> ted;
    double decode_seconds = 0.0;
};

PairOutcome evaluate_pair(const NetworkGenome& g, const DataEquationPair& pair, bool with_test_metrics);

/// Mean CE and mean MSE over the corpus; valid only if every pair decodes to
/// a valid, finitely evaluating equation.
FitnessRecord evaluate_individual(const NetworkGenome& g, const Corpus& corpus);

/// Evaluates each genome with up to `threads` workers. Results are in input
/// order and do not depend on the worker count.
std::vector<FitnessRecord> evaluate_many(std::span<const NetworkGenome* const> genomes, const Corpus& corpus,
                                         std::size_t threads);

} // namespace srne
