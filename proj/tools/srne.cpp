#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "srne/cli.hpp"

namespace {

struct Args {
    std::optional<std::string> config;
    std::optional<std::string> preset;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trials;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;
    std::string kind;
    std::optional<std::string> checkpoint;
};

void add_common(CLI::App& app, Args& a)
{
    app.add_option("--config", a.config, "JSON config overriding the preset")->check(CLI::ExistingFile);
    app.add_option("--preset", a.preset, "Scale preset")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--seed", a.seed, "Run seed; every corpus, pool and trial seed derives from it");
    app.add_option("--trials", a.trials, "Number of evolution trials");
    app.add_option("--out", a.out, "Output directory");
    app.add_option("--threads", a.threads, "Worker threads (trials run in parallel)");
}

srne::RunConfig resolve(const Args& a)
{
    srne::CliOverrides o;
    if (a.config) {
        o.config = *a.config;
    }
    o.preset = a.preset;
    o.seed = a.seed;
    o.trials = a.trials;
    if (a.out) {
        o.out = *a.out;
    }
    o.threads = a.threads;
    return srne::resolve_config(o);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Symbolic regression by neuroevolution of a pretrained data-to-equation network"};
    app.require_subcommand(1);
    Args a;

    auto* gen = app.add_subcommand("gen-data", "Generate corpora (pretrain, evolve, test, unseen-test)");
    add_common(*gen, a);
    gen->add_option("--kind", a.kind, "Corpus kind; all kinds when omitted")
        ->check(CLI::IsMember({"pretrain", "evolve", "test", "unseen-test"}));

    auto* pre = app.add_subcommand("pretrain", "Pretrain the model pool (resumes an existing pool)");
    add_common(*pre, a);

    auto* evo = app.add_subcommand("evolve", "Run evolution trials (skips finished, resumes interrupted)");
    add_common(*evo, a);

    auto* tst = app.add_subcommand("test", "Score pool members and evolved trials, or one checkpoint");
    add_common(*tst, a);
    a.kind = "test";
    tst->add_option("--kind", a.kind, "Test corpus")->check(CLI::IsMember({"test", "unseen-test"}));
    tst->add_option("--checkpoint", a.checkpoint, "Score this checkpoint only")->check(CLI::ExistingFile);

    auto* rep = app.add_subcommand("report", "Fitness curves, emergence, fronts and significance tests");
    add_common(*rep, a);

    CLI11_PARSE(app, argc, argv);

    srne::RunConfig cfg;
    try {
        cfg = resolve(a);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    if (gen->parsed()) {
        srne::GenDataOptions o;
        if (!a.kind.empty()) {
            o.kind = srne::corpus_kind_from_string(a.kind);
        }
        return srne::cmd_gen_data(cfg, o, std::cout, std::cerr);
    }
    if (pre->parsed()) {
        return srne::cmd_pretrain(cfg, std::cout, std::cerr);
    }
    if (evo->parsed()) {
        return srne::cmd_evolve(cfg, std::cout, std::cerr);
    }
    if (tst->parsed()) {
        srne::TestOptions o;
        o.kind = srne::corpus_kind_from_string(a.kind);
        if (a.checkpoint) {
            o.checkpoint = *a.checkpoint;
        }
        return srne::cmd_test(cfg, o, std::cout, std::cerr);
    }
    return srne::cmd_report(cfg, std::cout, std::cerr);
}
