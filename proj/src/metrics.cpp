#include "srne/metrics.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

namespace srne {

double symbolic_ce(const Tensor& logits, std::span<const int> target)
{
    if (logits.rank() != 2 || logits.dim(0) != target.size()) {
        throw MetricError("symbolic_ce: logits rows must match target length");
    }
    return cross_entropy(logits, target, kPad);
}

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what)
{
    if (a != b) {
        throw MetricError(std::string(what) + ": length mismatch");
    }
}

} // namespace

std::optional<double> numeric_mse(std::span<const double> ys, std::span<const EvalResult> yhat)
{
    require_same_length(ys.size(), yhat.size(), "numeric_mse");
    std::vector<double> v;
    v.reserve(yhat.size());
    for (const auto& r : yhat) {
        if (!r.finite) {
            return std::nullopt;
        }
        v.push_back(r.value);
    }
    const double m = numeric_mse(ys, v);
    if (!std::isfinite(m)) {
        return std::nullopt;
    }
    return m;
}

double numeric_mse(std::span<const double> ys, std::span<const double> yhat)
{
    require_same_length(ys.size(), yhat.size(), "numeric_mse");
    if (ys.empty()) {
        throw MetricError("numeric_mse: empty input");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const double d = ys[i] - yhat[i];
        s += d * d;
    }
    return s / static_cast<double>(ys.size());
}

double nmse(std::span<const double> ys, std::span<const double> yhat)
{
    require_same_length(ys.size(), yhat.size(), "nmse");
    if (ys.empty()) {
        throw MetricError("nmse: empty input");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        const double d = ys[i] - yhat[i];
        s += d * d / std::abs(ys[i] + kNmseEpsilon);
    }
    return s / static_cast<double>(ys.size());
}

double one_minus_r2(std::span<const double> ys, std::span<const double> yhat)
{
    require_same_length(ys.size(), yhat.size(), "one_minus_r2");
    if (ys.size() < 2) {
        throw MetricError("one_minus_r2: need at least two samples");
    }
    double mean = 0.0;
    for (double y : ys) {
        mean += y;
    }
    mean /= static_cast<double>(ys.size());
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        ss_res += (ys[i] - yhat[i]) * (ys[i] - yhat[i]);
        ss_tot += (ys[i] - mean) * (ys[i] - mean);
    }
    if (ss_tot == 0.0) {
        throw ZeroVariance();
    }
    return ss_res / ss_tot;
}

std::vector<EvalResult> evaluate_all(const Expression& e, std::span<const double> xs)
{
    std::vector<EvalResult> out;
    out.reserve(xs.size());
    for (double x : xs) {
        out.push_back(evaluate(e, x));
    }
    return out;
}

PairOutcome evaluate_pair(const NetworkGenome& g, const DataEquationPair& pair, bool with_test_metrics)
{
    PairOutcome r;
    try {
        r.ce = symbolic_ce(forward_logits(g, pair.xs, pair.ys, pair.tokens), pair.tokens);
    } catch (const TensorError&) {
        r.ce = kCePenalty;
    } catch (const ModelError& e) {
        if (e.code() != ModelErrc::NonFiniteActivation) {
            throw;
        }
        r.ce = kCePenalty;
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        r.decoded = decode_greedy(g, pair.xs, pair.ys, g.config().max_seq);
    } catch (const TensorError&) {
        r.decoded.clear();
    } catch (const ModelError& e) {
        if (e.code() != ModelErrc::NonFiniteActivation) {
            throw;
        }
        r.decoded.clear();
    }
    r.decode_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (r.decoded.empty()) {
        return r;
    }
    try {
        r.predicted = detokenize(r.decoded);
    } catch (const ExprError&) {
        return r;
    }
    const auto yhat = evaluate_all(*r.predicted, pair.xs);
    r.mse = numeric_mse(pair.ys, yhat);
    r.finite = r.mse.has_value();
    if (with_test_metrics) {
        r.ted = static_cast<double>(tree_edit_distance(*r.predicted, pair.equation));
        if (r.finite) {
            std::vector<double> v;
            for (const auto& e : yhat) {
                v.push_back(e.value);
            }
            r.nmse = nmse(pair.ys, v);
            try {
                r.one_minus_r2 = one_minus_r2(pair.ys, v);
            } catch (const ZeroVariance&) {
                r.one_minus_r2.reset();
            }
        }
    }
    return r;
}

FitnessRecord evaluate_individual(const NetworkGenome& g, const Corpus& corpus)
{
    FitnessRecord f;
    if (corpus.pairs.empty()) {
        throw MetricError("evaluate_individual: empty corpus");
    }
    double ce = 0.0;
    double mse = 0.0;
    bool valid = true;
    for (const auto& pair : corpus.pairs) {
        const PairOutcome o = evaluate_pair(g, pair, false);
        ce += o.ce;
        if (o.mse) {
            mse += *o.mse;
        } else {
            valid = false;
        }
    }
    const double n = static_cast<double>(corpus.pairs.size());
    f.ce = ce / n;
    f.valid = valid && std::isfinite(mse);
    if (f.valid) {
        f.mse = mse / n;
    }
    return f;
}

std::vector<FitnessRecord> evaluate_many(std::span<const NetworkGenome* const> genomes, const Corpus& corpus,
                                         std::size_t threads)
{
    std::vector<FitnessRecord> out(genomes.size());
    threads = std::max<std::size_t>(1, std::min(threads, genomes.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            out[i] = evaluate_individual(*genomes[i], corpus);
        }
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(genomes.size());
    auto worker = [&] {
        for (std::size_t i = next++; i < genomes.size(); i = next++) {
            try {
                out[i] = evaluate_individual(*genomes[i], corpus);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    pool.clear();
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

} // namespace srne
