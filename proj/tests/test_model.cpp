#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles/model_grad.hpp"
#include "srne/datagen.hpp"
#include "srne/model.hpp"

using namespace srne;

TEST_SUITE("model") {

TEST_CASE("config validation")
{
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.d_model = 30;
    c.n_heads = 4;
    CHECK_THROWS_AS(c.validate(), ModelError);
    c = ModelConfig{};
    c.max_seq = 10;
    CHECK_THROWS_AS(c.validate(), ModelError);
    CHECK(model_config_from_json(to_json(ModelConfig::paper())) == ModelConfig::paper());
    CHECK(ModelConfig::paper().n_blocks == 8);
}

TEST_CASE("genome layout and initialization")
{
    const ModelConfig c;
    const NetworkGenome g = init_genome(c, 1);
    // 3 conv + fc + 2 tables + 6 per block + head
    CHECK(g.layer_count() == 3 + 1 + 2 + 6 * c.n_blocks + 1);
    CHECK(g.layer_names().front() == "enc.conv0");
    CHECK(g.layer_names().back() == "dec.head");
    CHECK(g.get_layer("dec.tok_emb").shape() == Shape{c.vocab, c.d_model});
    CHECK_THROWS_AS(g.get_layer("nope"), ModelError);
    for (std::size_t i = 0; i < g.layer_count(); ++i) {
        if (const Tensor* b = g.bias(i)) {
            for (double v : b->data()) {
                CHECK(v == 0.0);
            }
        }
    }
    for (double v : g.get_layer("dec.pos_emb").data()) {
        CHECK(std::abs(v) <= 0.08);
    }
    const double fc1 = std::sqrt(3.0 / static_cast<double>(c.d_model));
    for (double v : g.get_layer("block0.mlp.fc1").data()) {
        CHECK(std::abs(v) <= fc1);
    }
    CHECK(init_genome(c, 1) == g);
    CHECK_FALSE(init_genome(c, 2) == g);
}

TEST_CASE("set_layer replaces one layer and shares the rest")
{
    const NetworkGenome g = init_genome(ModelConfig{}, 3);
    Tensor w = g.weights(0);
    w[0] += 1.0;
    const NetworkGenome h = g.set_layer(0, w);
    CHECK(h.weights(0)[0] == g.weights(0)[0] + 1.0);
    CHECK(&h.weights(1) == &g.weights(1));
    CHECK_THROWS_AS(g.set_layer(0, Tensor({1}, 0.0)), ModelError);
}

TEST_CASE("encoder is permutation invariant")
{
    Rng rng(5);
    const Corpus corpus = build_corpus(5, CorpusKind::Evolve, 10);
    for (int trial = 0; trial < 100; ++trial) {
        const NetworkGenome g = init_genome(ModelConfig{}, 100 + trial);
        const auto& p = corpus.pairs[trial % corpus.pairs.size()];
        std::vector<std::size_t> perm(p.xs.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> xs;
        std::vector<double> ys;
        for (std::size_t i : perm) {
            xs.push_back(p.xs[i]);
            ys.push_back(p.ys[i]);
        }
        const Tensor a = encode(g, p.xs, p.ys).vector;
        const Tensor b = encode(g, xs, ys).vector;
        double diff = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            diff = std::max(diff, std::abs(a[i] - b[i]));
        }
        REQUIRE(diff <= 1e-9);
    }
}

TEST_CASE("forward shapes and decode determinism")
{
    const NetworkGenome g = init_genome(ModelConfig{}, 4);
    const Corpus corpus = build_corpus(6, CorpusKind::Evolve, 3);
    const auto& p = corpus.pairs[0];
    const Tensor logits = forward_logits(g, p.xs, p.ys, p.tokens);
    CHECK(logits.shape() == Shape{p.tokens.size(), static_cast<std::size_t>(kVocabSize)});
    const TokenSequence a = decode_greedy(g, p.xs, p.ys, 32);
    const TokenSequence b = decode_greedy(g, p.xs, p.ys, 32);
    CHECK(a == b);
    CHECK(a.front() == kStart);
    CHECK(a.size() <= 32);
    CHECK_THROWS_AS(encode(g, std::vector<double>{}, std::vector<double>{}), ModelError);
    TokenSequence long_target(40, 10);
    CHECK_THROWS_AS(forward_logits(g, p.xs, p.ys, long_target), ModelError);
}

TEST_CASE("full-model gradient matches finite differences")
{
    const NetworkGenome g = init_genome(ModelConfig{}, 8);
    const Corpus corpus = build_corpus(8, CorpusKind::Evolve, 1);
    Rng rng(9);
    const auto r = oracle::model_grad_check(g, corpus.pairs[0], 50, rng);
    CHECK(r.checked == 50);
    CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("checkpoint round trip")
{
    const auto dir = testing::scratch_dir("model");
    const NetworkGenome g = init_genome(ModelConfig{}, 10);
    save_checkpoint(g, dir / "m.ckpt", nlohmann::json{{"note", "test"}});
    CHECK(load_checkpoint(dir / "m.ckpt") == g);
    CHECK(genome_from_bytes(genome_to_bytes(g)) == g);
    std::string bytes = genome_to_bytes(g);
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(genome_from_bytes(bytes), ModelError);
    CHECK_THROWS_AS(genome_from_bytes("not a checkpoint"), ModelError);
}

} // TEST_SUITE
