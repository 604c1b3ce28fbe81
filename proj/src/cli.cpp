#include "srne/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "srne/io.hpp"

namespace srne {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

} // namespace

// ------------------------------------------------------------------ config

RunConfig RunConfig::desk()
{
    RunConfig c;
    c.model = ModelConfig::desk();
    return c;
}

RunConfig RunConfig::paper()
{
    RunConfig c;
    c.preset = "paper";
    c.trials = 20;
    c.out = "runs/paper";
    c.model = ModelConfig::paper();
    c.pretrain.epochs = 50;
    c.pretrain.corpus_size = 5000;
    c.pretrain.n_models = 25;
    c.pretrain.lr = 0.01;
    c.evolve.generations = 10000;
    c.evolve.pop_size = 30;
    c.evolve.parent_count = 15;
    c.evolve.checkpoint_every = 100;
    c.evolve_corpus_size = 100;
    return c;
}

RunConfig RunConfig::from_preset(const std::string& name)
{
    if (name == "desk") {
        return desk();
    }
    if (name == "paper") {
        return paper();
    }
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

namespace {

void validate(const RunConfig& c)
{
    try {
        c.model.validate();
        c.pretrain.validate();
        c.evolve.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (c.trials == 0) {
        throw ConfigError("trials must be positive");
    }
    if (c.threads == 0) {
        throw ConfigError("threads must be positive");
    }
    if (c.evolve_corpus_size == 0) {
        throw ConfigError("evolve_corpus_size must be positive");
    }
    const GenParams& d = c.data;
    if (d.n_points < 2 || d.max_len == 0 || d.max_len > kMaxLength || !(d.x_lo < d.x_hi) || !(d.y_cap > 0.0)) {
        throw ConfigError("data: need n_points >= 2, 0 < max_len <= 30, x_lo < x_hi and y_cap > 0");
    }
}

/// Replaces the keys of `base` named in `patch`, refusing keys `base` lacks
/// and values whose JSON type differs.
json merge_section(json base, const json& patch, const std::string& section)
{
    if (!patch.is_object()) {
        throw ConfigError(section + ": expected an object");
    }
    for (const auto& [key, value] : patch.items()) {
        const std::string where = section + "." + key;
        if (!base.contains(key)) {
            throw ConfigError("unknown config key '" + where + "'");
        }
        const json& old = base[key];
        const bool both_numbers = old.is_number() && value.is_number();
        if (!both_numbers && old.type() != value.type()) {
            throw ConfigError("config key '" + where + "' has the wrong type");
        }
        if (old.is_number_unsigned() && !(value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0))) {
            throw ConfigError("config key '" + where + "' must be a non-negative integer");
        }
        base[key] = value;
    }
    return base;
}

template <typename T>
T section_from(const json& base, const json& patch, const std::string& section, T (*from)(const json&))
{
    const json merged = merge_section(base, patch, section);
    try {
        return from(merged);
    } catch (const json::exception& e) {
        throw ConfigError(section + ": " + e.what());
    }
}

std::size_t as_size(const json& v, const std::string& key)
{
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

} // namespace

RunConfig apply_overrides(RunConfig c, const json& j)
{
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "preset") {
            if (!value.is_string()) {
                throw ConfigError("config key 'preset' must be a string");
            }
        } else if (key == "seed") {
            c.seed = as_size(value, key);
        } else if (key == "trials") {
            c.trials = as_size(value, key);
        } else if (key == "threads") {
            c.threads = as_size(value, key);
        } else if (key == "evolve_corpus_size") {
            c.evolve_corpus_size = as_size(value, key);
        } else if (key == "out") {
            if (!value.is_string()) {
                throw ConfigError("config key 'out' must be a string");
            }
            c.out = value.get<std::string>();
        } else if (key == "data") {
            c.data = section_from(to_json(c.data), value, key, &gen_params_from_json);
        } else if (key == "model") {
            c.model = section_from(to_json(c.model), value, key, &model_config_from_json);
        } else if (key == "pretrain") {
            if (value.is_object() && value.contains("seed")) {
                throw ConfigError("config key 'pretrain.seed' is derived from the top-level seed");
            }
            json base = to_json(c.pretrain);
            base.erase("seed");
            json merged = merge_section(base, value, key);
            merged["seed"] = c.pretrain.seed;
            c.pretrain = pretrain_config_from_json(merged);
        } else if (key == "evolve") {
            c.evolve = section_from(to_json(c.evolve), value, key, &evolve_config_from_json);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    return c;
}

RunConfig resolve_config(const CliOverrides& o)
{
    json file = json::object();
    if (o.config) {
        std::string text;
        try {
            text = read_file(*o.config);
        } catch (const std::exception& e) {
            throw ConfigError("cannot read config " + o.config->string() + ": " + e.what());
        }
        try {
            file = json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError("config " + o.config->string() + " is not valid JSON: " + e.what());
        }
        if (!file.is_object()) {
            throw ConfigError("config must be a JSON object");
        }
    }
    std::string preset = "desk";
    if (o.preset) {
        preset = *o.preset;
    } else if (file.contains("preset") && file["preset"].is_string()) {
        preset = file["preset"].get<std::string>();
    }
    RunConfig c = apply_overrides(RunConfig::from_preset(preset), file);
    c.preset = preset;
    if (o.seed) {
        c.seed = *o.seed;
    }
    if (o.trials) {
        c.trials = *o.trials;
    }
    if (o.out) {
        c.out = *o.out;
    }
    if (o.threads) {
        c.threads = *o.threads;
    }
    c.pretrain.seed = Rng::derive(c.seed, 20);
    validate(c);
    return c;
}

json to_json(const RunConfig& c)
{
    // The output directory and worker count do not affect any result, so
    // they stay out of the echo and outputs compare bitwise across locations.
    json p = to_json(c.pretrain);
    return json{{"preset", c.preset},
                {"seed", c.seed},
                {"trials", c.trials},
                {"evolve_corpus_size", c.evolve_corpus_size},
                {"data", to_json(c.data)},
                {"model", to_json(c.model)},
                {"pretrain", p},
                {"evolve", to_json(c.evolve)}};
}

// ------------------------------------------------------------------- paths

fs::path RunPaths::trial_dir(std::size_t t) const
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "trial_%03zu", t);
    return trials_dir() / buf;
}

std::uint64_t corpus_seed(std::uint64_t run_seed, CorpusKind k)
{
    return Rng::derive(run_seed, 10 + static_cast<std::uint64_t>(k));
}

std::uint64_t trial_seed(std::uint64_t run_seed, std::size_t trial) { return Rng::derive(run_seed, 100 + trial); }

std::size_t default_corpus_size(const RunConfig& c, CorpusKind k)
{
    switch (k) {
    case CorpusKind::Pretrain: return c.pretrain.corpus_size;
    case CorpusKind::Evolve: return c.evolve_corpus_size;
    case CorpusKind::Test:
    case CorpusKind::UnseenTest: return 0; // fixed by the benchmark
    }
    return 0;
}

namespace {

Corpus build_for(const RunConfig& c, CorpusKind k)
{
    return build_corpus(corpus_seed(c.seed, k), k, default_corpus_size(c, k), c.data);
}

bool matches(const Corpus& have, const RunConfig& c, CorpusKind k)
{
    if (have.kind != k || have.seed != corpus_seed(c.seed, k) || !(have.params == c.data)) {
        return false;
    }
    const std::size_t want = default_corpus_size(c, k);
    return want == 0 || have.pairs.size() == want;
}

json corpus_json(const Corpus& corpus)
{
    return json{{"kind", std::string(to_string(corpus.kind))}, {"seed", corpus.seed}, {"size", corpus.pairs.size()}};
}

} // namespace

Corpus load_or_build_corpus(const RunConfig& c, CorpusKind k)
{
    const fs::path path = RunPaths{c.out}.corpus(k);
    if (fs::exists(path)) {
        Corpus have = load_corpus(path);
        if (!matches(have, c, k)) {
            throw ConfigError(path.string() + " was generated with a different seed or data config");
        }
        return have;
    }
    Corpus built = build_for(c, k);
    write_file_atomic(path, corpus_to_jsonl(built));
    return built;
}

// ------------------------------------------------------------- test tables

double median(std::vector<double> v)
{
    if (v.empty()) {
        throw std::invalid_argument("median of an empty sample");
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ReportRow aggregate_rows(const std::string& method, std::span<const PairOutcome> outcomes)
{
    ReportRow r;
    r.method = method;
    r.pairs = outcomes.size();
    double ce = 0.0;
    double ted = 0.0;
    std::size_t n_ted = 0;
    std::vector<double> nm;
    std::vector<double> r2;
    for (const auto& o : outcomes) {
        ce += o.ce;
        if (o.ted) {
            ted += *o.ted;
            ++n_ted;
        }
        if (o.finite) {
            ++r.valid;
        }
        if (o.nmse) {
            nm.push_back(*o.nmse);
        }
        if (o.one_minus_r2) {
            r2.push_back(*o.one_minus_r2);
        }
    }
    if (!outcomes.empty()) {
        r.ce_mean = ce / static_cast<double>(outcomes.size());
    }
    if (n_ted > 0) {
        r.ted_mean = ted / static_cast<double>(n_ted);
    }
    if (!nm.empty()) {
        r.nmse_median = median(nm);
    }
    if (!r2.empty()) {
        r.one_minus_r2_median = median(r2);
    }
    return r;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string q = "\"";
    for (char ch : s) {
        q += ch;
        if (ch == '"') {
            q += '"';
        }
    }
    return q + "\"";
}

} // namespace

std::string report_table_csv(std::span<const ReportRow> rows)
{
    std::string s = "method,n,valid,ce_mean,ted_mean,nmse_median,one_minus_r2_median\n";
    for (const auto& r : rows) {
        s += csv_field(r.method) + "," + std::to_string(r.pairs) + "," + std::to_string(r.valid) + "," +
             format_double(r.ce_mean) + "," + opt(r.ted_mean) + "," + opt(r.nmse_median) + "," +
             opt(r.one_minus_r2_median) + "\n";
    }
    return s;
}

std::string equation_records_csv(std::span<const EquationRecord> records)
{
    std::string s = "method,index,target,predicted,ce,finite,mse,nmse,one_minus_r2,ted\n";
    for (const auto& r : records) {
        const PairOutcome& o = r.outcome;
        s += csv_field(r.method) + "," + std::to_string(r.index) + "," + csv_field(r.target) + "," +
             csv_field(o.predicted ? to_infix(*o.predicted) : std::string()) + "," + format_double(o.ce) + "," +
             (o.finite ? "1" : "0") + "," + opt(o.mse) + "," + opt(o.nmse) + "," + opt(o.one_minus_r2) + "," +
             opt(o.ted) + "\n";
    }
    return s;
}

// ---------------------------------------------------------- trial summaries

std::vector<EmergencePoint> emergence_curve(std::span<const std::vector<GenerationStats>> histories)
{
    if (histories.empty()) {
        return {};
    }
    std::size_t len = std::numeric_limits<std::size_t>::max();
    for (const auto& h : histories) {
        len = std::min(len, h.size());
    }
    std::vector<EmergencePoint> out(len);
    std::vector<bool> started(histories.size(), false);
    const double n = static_cast<double>(histories.size());
    for (std::size_t g = 0; g < len; ++g) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t t = 0; t < histories.size(); ++t) {
            const double v = histories[t][g].valid_fraction;
            sum += v;
            if (v == 1.0) {
                started[t] = true;
            }
            count += started[t] ? 1 : 0;
        }
        out[g] = {histories[0][g].generation, sum / n, static_cast<double>(count) / n};
    }
    return out;
}

std::vector<double> window_means(std::span<const double> v, std::size_t window)
{
    if (window == 0) {
        throw std::invalid_argument("window must be positive");
    }
    std::vector<double> out;
    for (std::size_t i = 0; i + window <= v.size(); i += window) {
        double s = 0.0;
        for (std::size_t k = i; k < i + window; ++k) {
            s += v[k];
        }
        out.push_back(s / static_cast<double>(window));
    }
    return out;
}

std::optional<std::size_t> first_full_validity(std::span<const GenerationStats> h)
{
    for (const auto& row : h) {
        if (row.valid_fraction == 1.0) {
            return row.generation;
        }
    }
    return std::nullopt;
}

std::vector<Comparison> evolution_comparisons(std::span<const std::vector<GenerationStats>> histories)
{
    std::vector<double> ce_start;
    std::vector<double> ce_final;
    std::vector<double> mse_start;
    std::vector<double> mse_final;
    for (const auto& h : histories) {
        if (h.empty()) {
            continue;
        }
        ce_start.push_back(h.front().best_ce);
        ce_final.push_back(h.back().best_ce);
        const auto first = first_full_validity(h);
        if (first && h.back().best_mse) {
            const auto it = std::find_if(h.begin(), h.end(), [&](const auto& r) { return r.generation == *first; });
            mse_start.push_back(*it->best_mse);
            mse_final.push_back(*h.back().best_mse);
        }
    }
    std::vector<Comparison> out;
    auto add = [&](const char* a, const char* b, const std::vector<double>& xa, const std::vector<double>& xb) {
        if (xa.size() < 3 || xb.size() < 3) {
            return;
        }
        Comparison c;
        c.label_a = a;
        c.label_b = b;
        c.n_a = xa.size();
        c.n_b = xb.size();
        c.alternative = Alternative::Less;
        c.result = mann_whitney_u(xa, xb, Alternative::Less);
        out.push_back(c);
    };
    add("final_best_ce", "generation0_best_ce", ce_final, ce_start);
    add("final_best_mse", "first_valid_best_mse", mse_final, mse_start);
    for (auto& c : out) {
        c.p_bonferroni = bonferroni(c.result.p, out.size());
    }
    return out;
}

namespace {

std::string to_string(Alternative a)
{
    switch (a) {
    case Alternative::TwoSided: return "two-sided";
    case Alternative::Less: return "less";
    case Alternative::Greater: return "greater";
    }
    return "?";
}

} // namespace

json to_json(const Comparison& c)
{
    return json{{"a", c.label_a},
                {"b", c.label_b},
                {"n_a", c.n_a},
                {"n_b", c.n_b},
                {"alternative", to_string(c.alternative)},
                {"u", c.result.u},
                {"p", c.result.p},
                {"p_bonferroni", c.p_bonferroni}};
}

// ----------------------------------------------------------------- commands

namespace {

json manifest_base(const RunConfig& c, const std::string& command)
{
    return json{{"format_version", kFormatVersion}, {"command", command}, {"config", to_json(c)}};
}

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

template <typename F>
int guarded(std::ostream& err, F&& body)
{
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

Pool require_pool(const RunConfig& c)
{
    const fs::path m = RunPaths{c.out}.pool_manifest();
    if (!fs::exists(m)) {
        throw std::runtime_error("no pool at " + m.string() + "; run `srne pretrain` first");
    }
    Pool pool = load_pool(m);
    if (pool.members.empty()) {
        throw EmptyPool();
    }
    for (const auto& mem : pool.members) {
        if (!(mem.genome.config() == c.model)) {
            throw ConfigError("pool checkpoints were trained with a different model config");
        }
    }
    return pool;
}

/// Completed trial directories in index order.
std::vector<std::size_t> completed_trials(const RunConfig& c)
{
    std::vector<std::size_t> out;
    const RunPaths paths{c.out};
    for (std::size_t t = 0; t < c.trials; ++t) {
        if (trial_complete(paths.trial_dir(t))) {
            out.push_back(t);
        }
    }
    return out;
}

/// Lowest CE among valid members (then lowest MSE); any member if none is valid.
std::size_t pick_representative(const Population& pop)
{
    std::size_t best = 0;
    auto key = [&](std::size_t i) {
        const auto& f = *pop.members[i].fitness;
        return std::tuple(!f.valid, f.ce, f.mse.value_or(0.0));
    };
    for (std::size_t i = 1; i < pop.members.size(); ++i) {
        if (key(i) < key(best)) {
            best = i;
        }
    }
    return best;
}

} // namespace

int cmd_gen_data(const RunConfig& c, const GenDataOptions& o, std::ostream& log, std::ostream& err)
{
    return guarded(err, [&] {
        std::vector<CorpusKind> kinds{CorpusKind::Pretrain, CorpusKind::Evolve, CorpusKind::Test, CorpusKind::UnseenTest};
        if (o.kind) {
            kinds = {*o.kind};
        }
        const RunPaths paths{c.out};
        for (CorpusKind k : kinds) {
            const Corpus corpus = build_for(c, k);
            write_file_atomic(paths.corpus(k), corpus_to_jsonl(corpus));
            log << "wrote " << corpus.pairs.size() << " pairs to " << paths.corpus(k).string() << "\n";
        }
        return 0;
    });
}

int cmd_pretrain(const RunConfig& c, std::ostream& log, std::ostream& err)
{
    return guarded(err, [&] {
        const Corpus corpus = load_or_build_corpus(c, CorpusKind::Pretrain);
        json prov = manifest_base(c, "pretrain");
        prov["corpus"] = corpus_json(corpus);
        log << "pretraining " << c.pretrain.n_models << " models on " << corpus.pairs.size() << " pairs\n";
        const Pool pool = pretrain_pool(c.pretrain, c.model, corpus, RunPaths{c.out}.pool_dir(), prov);
        for (const auto& m : pool.members) {
            log << "model " << m.index << ": final CE " << format_double(m.final_ce) << "\n";
        }
        if (pool.diverged > 0) {
            log << pool.diverged << " model(s) diverged and were left out\n";
        }
        if (pool.members.empty()) {
            throw EmptyPool();
        }
        return 0;
    });
}

int cmd_evolve(const RunConfig& c, std::ostream& log, std::ostream& err)
{
    return guarded(err, [&] {
        const Pool pool = require_pool(c);
        const Corpus corpus = load_or_build_corpus(c, CorpusKind::Evolve);
        const RunPaths paths{c.out};
        json prov = manifest_base(c, "evolve");
        prov["corpus"] = corpus_json(corpus);

        std::vector<std::size_t> todo;
        for (std::size_t t = 0; t < c.trials; ++t) {
            if (trial_complete(paths.trial_dir(t))) {
                log << "trial " << t << " already complete\n";
            } else {
                todo.push_back(t);
            }
        }

        std::mutex log_mutex;
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(todo.size());
        auto worker = [&] {
            for (std::size_t i = next++; i < todo.size(); i = next++) {
                const std::size_t t = todo[i];
                try {
                    TrialSpec spec;
                    spec.config = c.evolve;
                    spec.seed = trial_seed(c.seed, t);
                    spec.trial = t;
                    spec.dir = paths.trial_dir(t);
                    spec.provenance = prov;
                    const TrialResult r = run_trial(spec, pool, corpus);
                    const GenerationStats& last = r.history.back();
                    std::lock_guard lock(log_mutex);
                    log << "trial " << t << ": best CE " << format_double(r.history.front().best_ce) << " -> "
                        << format_double(last.best_ce) << ", valid " << format_double(last.valid_fraction)
                        << ", front " << r.front.points.size() << "\n";
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        {
            std::vector<std::jthread> workers;
            const std::size_t n = std::max<std::size_t>(1, std::min(c.threads, todo.size()));
            for (std::size_t w = 0; w < n; ++w) {
                workers.emplace_back(worker);
            }
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
        return 0;
    });
}

int cmd_test(const RunConfig& c, const TestOptions& o, std::ostream& log, std::ostream& err)
{
    return guarded(err, [&] {
        if (o.kind != CorpusKind::Test && o.kind != CorpusKind::UnseenTest) {
            throw ConfigError("test runs on the test or unseen-test corpus");
        }
        const Corpus corpus = load_or_build_corpus(c, o.kind);
        const RunPaths paths{c.out};

        std::vector<std::pair<std::string, NetworkGenome>> methods;
        if (o.checkpoint) {
            methods.emplace_back("checkpoint", load_checkpoint(*o.checkpoint));
        } else {
            const Pool pool = require_pool(c);
            for (const auto& m : pool.members) {
                methods.emplace_back("pool_" + std::to_string(m.index), m.genome);
            }
            for (std::size_t t : completed_trials(c)) {
                const Population pop = load_trial_population(paths.trial_dir(t));
                char buf[32];
                std::snprintf(buf, sizeof buf, "trial_%03zu", t);
                methods.emplace_back(buf, pop.members[pick_representative(pop)].genome);
            }
        }

        std::vector<ReportRow> rows;
        std::vector<EquationRecord> records;
        std::string timing = "method,index,decode_seconds\n";
        for (const auto& [name, genome] : methods) {
            std::vector<PairOutcome> outcomes;
            for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
                PairOutcome out = evaluate_pair(genome, corpus.pairs[i], true);
                timing += name + "," + std::to_string(i) + "," + format_double(out.decode_seconds) + "\n";
                records.push_back({name, i, to_infix(corpus.pairs[i].equation), out});
                outcomes.push_back(std::move(out));
            }
            rows.push_back(aggregate_rows(name, outcomes));
            const ReportRow& r = rows.back();
            log << name << ": CE " << format_double(r.ce_mean) << ", valid " << r.valid << "/" << r.pairs << "\n";
        }

        const fs::path dir = paths.test_dir(o.kind);
        write_file_atomic(dir / "table.csv", report_table_csv(rows));
        write_file_atomic(dir / "per_equation.csv", equation_records_csv(records));
        write_file_atomic(dir / "timing.csv", timing);
        json m = manifest_base(c, "test");
        m["corpus"] = corpus_json(corpus);
        m["methods"] = json::array();
        for (const auto& [name, genome] : methods) {
            m["methods"].push_back(name);
        }
        if (o.checkpoint) {
            m["checkpoint"] = o.checkpoint->filename().string();
        }
        write_json(dir / "manifest.json", m);
        return 0;
    });
}

namespace {

struct TableSample {
    std::vector<double> ce;
    std::vector<double> ted;
    std::vector<double> nmse;
};

/// Rows from a test table split into pool members and evolved trials.
std::pair<TableSample, TableSample> split_table(const std::string& text)
{
    TableSample pool;
    TableSample evolved;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            f.push_back(cell);
        }
        if (line.back() == ',') {
            f.emplace_back();
        }
        if (f.size() != 7) {
            throw std::runtime_error("malformed test table row: " + line);
        }
        TableSample* s = f[0].rfind("pool_", 0) == 0 ? &pool : f[0].rfind("trial_", 0) == 0 ? &evolved : nullptr;
        if (!s) {
            continue;
        }
        s->ce.push_back(parse_double(f[3]));
        if (!f[4].empty()) {
            s->ted.push_back(parse_double(f[4]));
        }
        if (!f[5].empty()) {
            s->nmse.push_back(parse_double(f[5]));
        }
    }
    return {pool, evolved};
}

} // namespace

int cmd_report(const RunConfig& c, std::ostream& log, std::ostream& err)
{
    return guarded(err, [&] {
        const RunPaths paths{c.out};
        const std::vector<std::size_t> done = completed_trials(c);
        if (done.empty()) {
            throw std::runtime_error("no completed trials under " + paths.trials_dir().string());
        }

        std::vector<std::vector<GenerationStats>> histories;
        std::vector<ParetoFront> fronts;
        std::string fitness = "trial,generation,best_ce,best_mse,valid_fraction,mode\n";
        std::string front_rows = "ce,mse,trial,age\n";
        for (std::size_t t : done) {
            const fs::path dir = paths.trial_dir(t);
            histories.push_back(parse_history_csv(read_file(dir / TrialFiles::history)));
            fronts.push_back(parse_front_csv(read_file(dir / TrialFiles::front)));
            for (const auto& r : histories.back()) {
                fitness += std::to_string(t) + "," + std::to_string(r.generation) + "," + format_double(r.best_ce) +
                           "," + opt(r.best_mse) + "," + format_double(r.valid_fraction) + "," + to_string(r.mode) +
                           "\n";
            }
            const std::string f = front_csv(fronts.back());
            front_rows += f.substr(f.find('\n') + 1);
        }

        std::string emergence = "generation,mean_valid_fraction,trials_started\n";
        for (const auto& p : emergence_curve(histories)) {
            emergence += std::to_string(p.generation) + "," + format_double(p.mean_valid_fraction) + "," +
                         format_double(p.trials_started) + "\n";
        }

        json stats = json::object();
        stats["evolution"] = json::array();
        for (const auto& cmp : evolution_comparisons(histories)) {
            stats["evolution"].push_back(to_json(cmp));
        }

        // Pool members against evolved trials on each test corpus, two-sided.
        stats["pool_vs_evolved"] = json::array();
        std::vector<Comparison> cmps;
        for (CorpusKind k : {CorpusKind::Test, CorpusKind::UnseenTest}) {
            const fs::path table = paths.test_dir(k) / "table.csv";
            if (!fs::exists(table)) {
                continue;
            }
            const auto [pool, evolved] = split_table(read_file(table));
            const std::string kind(to_string(k));
            auto add = [&](const std::string& metric, const std::vector<double>& a, const std::vector<double>& b) {
                if (a.size() < 3 || b.size() < 3) {
                    return;
                }
                Comparison cmp;
                cmp.label_a = kind + ":evolved:" + metric;
                cmp.label_b = kind + ":pool:" + metric;
                cmp.n_a = a.size();
                cmp.n_b = b.size();
                cmp.result = mann_whitney_u(a, b, Alternative::TwoSided);
                cmps.push_back(cmp);
            };
            add("ce_mean", evolved.ce, pool.ce);
            add("ted_mean", evolved.ted, pool.ted);
            add("nmse_median", evolved.nmse, pool.nmse);
        }
        for (auto& cmp : cmps) {
            cmp.p_bonferroni = bonferroni(cmp.result.p, cmps.size());
            stats["pool_vs_evolved"].push_back(to_json(cmp));
        }

        const fs::path dir = paths.report_dir();
        write_file_atomic(dir / "fitness.csv", fitness);
        write_file_atomic(dir / "emergence.csv", emergence);
        write_file_atomic(dir / "fronts.csv", front_rows);
        write_file_atomic(dir / "meta_front.csv", front_csv(meta_front(fronts)));
        write_json(dir / "stats.json", stats);
        json m = manifest_base(c, "report");
        m["trials"] = done;
        write_json(dir / "manifest.json", m);
        log << "report for " << done.size() << " trial(s) written to " << dir.string() << "\n";
        return 0;
    });
}

} // namespace srne
