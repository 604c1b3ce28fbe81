#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "srne/cli.hpp"
#include "srne/io.hpp"

using namespace srne;
namespace fs = std::filesystem;

namespace {

/// Tiny end-to-end configuration that runs in seconds.
RunConfig tiny(const fs::path& out)
{
    CliOverrides o;
    o.out = out;
    RunConfig c = resolve_config(o);
    c = apply_overrides(c, nlohmann::json::parse(R"({
        "trials": 3,
        "evolve_corpus_size": 3,
        "pretrain": {"epochs": 1, "corpus_size": 20, "n_models": 3},
        "evolve": {"generations": 4, "checkpoint_every": 2}
    })"));
    return c;
}

fs::path write_config(const fs::path& dir, const std::string& text)
{
    const fs::path p = dir / "config.json";
    std::ofstream(p) << text;
    return p;
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("presets")
{
    const RunConfig d = RunConfig::desk();
    CHECK(d.evolve.pop_size == 8);
    CHECK(d.evolve.parent_count == 4);
    CHECK(d.evolve.generations == 200);
    CHECK(d.model.n_blocks == 2);
    CHECK(d.pretrain.n_models == 3);
    CHECK(d.evolve_corpus_size == 20);
    CHECK(d.trials == 10);

    const RunConfig p = RunConfig::paper();
    CHECK(p.evolve.pop_size == 30);
    CHECK(p.evolve.parent_count == 15);
    CHECK(p.evolve.generations == 10000);
    CHECK(p.model.n_blocks == 8);
    CHECK(p.pretrain.n_models == 25);
    CHECK(p.pretrain.epochs == 50);
    CHECK(p.pretrain.corpus_size == 5000);
    CHECK(p.evolve_corpus_size == 100);
    CHECK(p.trials == 20);
    CHECK_THROWS_AS(RunConfig::from_preset("huge"), ConfigError);
}

TEST_CASE("config file and flags layer over the preset")
{
    const auto dir = testing::scratch_dir("cli_config");
    CliOverrides o;
    o.config = write_config(dir, R"({"preset": "paper", "seed": 5, "evolve": {"generations": 12}})");
    RunConfig c = resolve_config(o);
    CHECK(c.preset == "paper");
    CHECK(c.seed == 5);
    CHECK(c.evolve.generations == 12);
    CHECK(c.evolve.pop_size == 30);

    o.preset = "desk";
    o.seed = 9;
    o.trials = 20;
    c = resolve_config(o);
    CHECK(c.preset == "desk");
    CHECK(c.seed == 9);
    CHECK(c.trials == 20);
    CHECK(c.evolve.generations == 12);
    CHECK(c.evolve.pop_size == 8);
}

TEST_CASE("unknown keys, wrong types and bad values are rejected")
{
    const auto dir = testing::scratch_dir("cli_bad");
    CliOverrides o;
    for (const char* text : {R"({"bogus": 1})", R"({"evolve": {"bogus": 1}})", R"({"model": {"n_blocks": "two"}})",
                             R"({"trials": -1})", R"({"evolve": {"pop_size": 9}})", R"({"pretrain": {"seed": 3}})",
                             R"([1, 2])", R"({not json)", R"({"data": {"x_lo": 5.0}})"}) {
        o.config = write_config(dir, text);
        CHECK_THROWS_AS(resolve_config(o), ConfigError);
    }
    o.config = dir / "missing.json";
    CHECK_THROWS_AS(resolve_config(o), ConfigError);
}

TEST_CASE("seeds derive from the run seed")
{
    CHECK(corpus_seed(1, CorpusKind::Evolve) != corpus_seed(1, CorpusKind::Pretrain));
    CHECK(corpus_seed(1, CorpusKind::Evolve) != corpus_seed(2, CorpusKind::Evolve));
    CHECK(trial_seed(1, 0) != trial_seed(1, 1));
    CliOverrides o;
    o.seed = 4;
    CHECK(resolve_config(o).pretrain.seed == Rng::derive(4, 20));
    CHECK(RunPaths{"r"}.trial_dir(7) == fs::path("r/trials/trial_007"));
}

TEST_CASE("report helpers")
{
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK(window_means(std::vector<double>{1, 2, 3, 4, 5}, 2) == std::vector<double>{1.5, 3.5});

    PairOutcome good;
    good.ce = 1.0;
    good.finite = true;
    good.ted = 2.0;
    good.nmse = 0.5;
    good.one_minus_r2 = 0.1;
    PairOutcome bad;
    bad.ce = 3.0;
    const std::vector<PairOutcome> outs{good, bad, good};
    const ReportRow r = aggregate_rows("m", outs);
    CHECK(r.pairs == 3);
    CHECK(r.valid == 2);
    CHECK(r.ce_mean == doctest::Approx(5.0 / 3.0));
    CHECK(*r.ted_mean == 2.0);
    CHECK(*r.nmse_median == 0.5);
    CHECK(report_table_csv(std::vector<ReportRow>{r}).rfind("method,n,valid,ce_mean,ted_mean,nmse_median,", 0) == 0);

    using S = GenerationStats;
    const std::vector<std::vector<S>> h{
        {{0, 3.0, std::nullopt, 0.5}, {1, 2.0, 4.0, 1.0}, {2, 1.0, 2.0, 1.0}},
        {{0, 3.0, std::nullopt, 0.0}, {1, 2.5, std::nullopt, 0.5}, {2, 2.0, 1.0, 1.0}},
    };
    const auto e = emergence_curve(h);
    REQUIRE(e.size() == 3);
    CHECK(e[0].mean_valid_fraction == 0.25);
    CHECK(e[1].trials_started == 0.5);
    CHECK(e[2].trials_started == 1.0);
    CHECK(first_full_validity(h[1]) == 2);
    CHECK(evolution_comparisons(h).empty()); // fewer than 3 trials
}

TEST_CASE("commands run end to end and reject bad input")
{
    const auto dir = testing::scratch_dir("cli_run");
    const RunConfig c = tiny(dir / "run");
    std::ostringstream log;
    std::ostringstream err;

    // nothing to evolve from yet
    CHECK(cmd_evolve(c, log, err) != 0);
    CHECK(cmd_report(c, log, err) != 0);

    GenDataOptions g;
    g.kind = CorpusKind::Test;
    REQUIRE(cmd_gen_data(c, g, log, err) == 0);
    CHECK(load_corpus(RunPaths{c.out}.corpus(CorpusKind::Test)).pairs.size() == 100);

    REQUIRE(cmd_pretrain(c, log, err) == 0);
    CHECK(fs::exists(RunPaths{c.out}.pool_dir() / "model_2.ckpt"));
    REQUIRE(cmd_evolve(c, log, err) == 0);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(trial_complete(RunPaths{c.out}.trial_dir(t)));
    }
    TestOptions to;
    REQUIRE(cmd_test(c, to, log, err) == 0);
    const std::string table = read_file(RunPaths{c.out}.test_dir(CorpusKind::Test) / "table.csv");
    CHECK(table.find("pool_0,100,") != std::string::npos);
    CHECK(table.find("trial_002,100,") != std::string::npos);
    REQUIRE(cmd_report(c, log, err) == 0);
    for (const char* f : {"fitness.csv", "emergence.csv", "fronts.csv", "meta_front.csv", "stats.json", "manifest.json"}) {
        CHECK(fs::exists(RunPaths{c.out}.report_dir() / f));
    }
    const auto manifest = nlohmann::json::parse(read_file(RunPaths{c.out}.report_dir() / "manifest.json"));
    CHECK(manifest["config"] == to_json(c));

    to.kind = CorpusKind::Evolve;
    err.str("");
    CHECK(cmd_test(c, to, log, err) == 2);
    CHECK(err.str().find("error:") == 0);

    // a corpus generated under a different seed is refused
    RunConfig other = c;
    other.seed = c.seed + 1;
    CHECK(cmd_pretrain(other, log, err) != 0);
}

} // TEST_SUITE
