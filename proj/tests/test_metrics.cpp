#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles/fixed_genome.hpp"
#include "srne/metrics.hpp"

using namespace srne;
using testing::E;

namespace {

bool close(double a, double b, double rel = 1e-9) { return std::abs(a - b) <= rel * std::max(std::abs(b), 1e-300); }

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("MSE, NMSE and 1 - R^2 on a hand example")
{
    const std::vector<double> ys{1.0, 2.0, 3.0};
    const std::vector<double> yhat{1.0, 2.0, 5.0};
    // squared errors 0, 0, 4
    CHECK(close(numeric_mse(ys, yhat), 4.0 / 3.0));
    CHECK(close(nmse(ys, yhat), (4.0 / (3.0 + kNmseEpsilon)) / 3.0));
    // mean 2, total sum of squares 2, residual 4
    CHECK(close(one_minus_r2(ys, yhat), 2.0));
}

TEST_CASE("perfect and mean predictors")
{
    const std::vector<double> ys{0.5, -1.0, 4.0, 2.5};
    CHECK(numeric_mse(ys, ys) == 0.0);
    CHECK(nmse(ys, ys) == 0.0);
    CHECK(one_minus_r2(ys, ys) == 0.0);
    const std::vector<double> mean(4, 1.5);
    CHECK(std::abs(one_minus_r2(ys, mean) - 1.0) < 1e-9);
    CHECK_THROWS_AS(one_minus_r2(mean, ys), ZeroVariance);
    CHECK_THROWS_AS(one_minus_r2(std::vector<double>{1.0}, std::vector<double>{1.0}), MetricError);
    CHECK_THROWS_AS(numeric_mse(ys, std::vector<double>{1.0}), MetricError);
}

TEST_CASE("non-finite evaluations make MSE absent")
{
    const std::vector<double> ys{1.0, 2.0};
    CHECK(numeric_mse(ys, std::vector<EvalResult>{{1.0, true}, {2.0, true}}) == 0.0);
    CHECK_FALSE(numeric_mse(ys, std::vector<EvalResult>{{1.0, true}, {0.0, false}}).has_value());
    const double big = std::numeric_limits<double>::max();
    CHECK_FALSE(numeric_mse(ys, std::vector<EvalResult>{{big, true}, {-big, true}}).has_value());
}

TEST_CASE("symbolic CE")
{
    const Tensor uniform({4, static_cast<std::size_t>(kVocabSize)}, 0.0);
    const TokenSequence t{kStart, 10, kEnd, kPad};
    CHECK(std::abs(symbolic_ce(uniform, t) - std::log(14.0)) < 1e-9);
    CHECK_THROWS_AS(symbolic_ce(uniform, TokenSequence{kStart, kEnd}), MetricError);

    // one-hot logits with margin m: CE = log(1 + 13 e^{-m})
    Tensor sharp({3, static_cast<std::size_t>(kVocabSize)}, 0.0);
    const TokenSequence s{kStart, 10, kEnd};
    for (std::size_t r = 0; r < 3; ++r) {
        sharp.at(r, static_cast<std::size_t>(s[r])) = 2.0;
    }
    CHECK(close(symbolic_ce(sharp, s), std::log(1.0 + 13.0 * std::exp(-2.0))));
}

TEST_CASE("a network that emits the target scores perfectly")
{
    const Expression target = E("add pow x 3 add pow x 2 x");
    const NetworkGenome g = oracle::fixed_output_genome(tokenize(target));
    Rng rng(1);
    const DataEquationPair pair = sample_pair(rng, target);
    const PairOutcome o = evaluate_pair(g, pair, true);
    REQUIRE(o.predicted);
    CHECK(*o.predicted == target);
    CHECK(o.finite);
    CHECK(*o.mse == 0.0);
    CHECK(*o.ted == 0.0);
    CHECK(*o.nmse == 0.0);
    CHECK(*o.one_minus_r2 == 0.0);
    CHECK(o.ce < 1e-6);
    CHECK(o.decode_seconds >= 0.0);
}

TEST_CASE("invalid decodes are reported, not thrown")
{
    // emits "add" forever and never closes the tree
    TokenSequence bad(32, 3);
    bad[0] = kStart;
    const NetworkGenome g = oracle::fixed_output_genome(bad);
    Rng rng(2);
    const DataEquationPair pair = sample_pair(rng, E("x"));
    const PairOutcome o = evaluate_pair(g, pair, true);
    CHECK_FALSE(o.predicted);
    CHECK_FALSE(o.finite);
    CHECK_FALSE(o.mse);
    CHECK_FALSE(o.ted);

    Corpus c;
    c.pairs = {pair};
    const FitnessRecord f = evaluate_individual(g, c);
    CHECK_FALSE(f.valid);
    CHECK_FALSE(f.mse);
}

TEST_CASE("individual fitness averages over pairs")
{
    const Expression target = E("sin x");
    const NetworkGenome g = oracle::fixed_output_genome(tokenize(target));
    Rng rng(3);
    Corpus c;
    c.pairs.push_back(sample_pair(rng, target));
    c.pairs.push_back(sample_pair(rng, E("cos x")));
    const FitnessRecord f = evaluate_individual(g, c);
    REQUIRE(f.valid);
    const double m0 = *evaluate_pair(g, c.pairs[0], false).mse;
    const double m1 = *evaluate_pair(g, c.pairs[1], false).mse;
    CHECK(close(*f.mse, (m0 + m1) / 2.0));
    CHECK_THROWS_AS(evaluate_individual(g, Corpus{}), MetricError);
}

TEST_CASE("parallel evaluation matches serial")
{
    const Corpus c = build_corpus(4, CorpusKind::Evolve, 3);
    std::vector<NetworkGenome> gs;
    for (int i = 0; i < 5; ++i) {
        gs.push_back(init_genome(ModelConfig{}, static_cast<std::uint64_t>(i)));
    }
    std::vector<const NetworkGenome*> ptrs;
    for (const auto& g : gs) {
        ptrs.push_back(&g);
    }
    CHECK(evaluate_many(ptrs, c, 1) == evaluate_many(ptrs, c, 3));
}

} // TEST_SUITE
