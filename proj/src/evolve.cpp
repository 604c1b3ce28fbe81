#include "srne/evolve.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "srne/io.hpp"

namespace srne {

using nlohmann::json;

void EvolveConfig::validate() const
{
    auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
    if (parent_count == 0 || pop_size != 2 * parent_count) {
        fail("pop_size must equal 2 * parent_count (and be positive)");
    }
    for (double r : {mutation_rate, crossover_rate}) {
        if (!(r >= 0.0 && r <= 1.0)) {
            fail("mutation_rate and crossover_rate must lie in [0, 1]");
        }
    }
    if (!(mutation_range > 0.0) || !std::isfinite(mutation_range)) {
        fail("mutation_range must be positive");
    }
    if (threads == 0) {
        fail("threads must be positive");
    }
}

json to_json(const EvolveConfig& c)
{
    return json{{"generations", c.generations},       {"pop_size", c.pop_size},
                {"parent_count", c.parent_count},     {"mutation_rate", c.mutation_rate},
                {"crossover_rate", c.crossover_rate}, {"mutation_range", c.mutation_range},
                {"threads", c.threads},               {"checkpoint_every", c.checkpoint_every}};
}

EvolveConfig evolve_config_from_json(const json& j)
{
    EvolveConfig c;
    c.generations = j.at("generations").get<std::size_t>();
    c.pop_size = j.at("pop_size").get<std::size_t>();
    c.parent_count = j.at("parent_count").get<std::size_t>();
    c.mutation_rate = j.at("mutation_rate").get<double>();
    c.crossover_rate = j.at("crossover_rate").get<double>();
    c.mutation_range = j.at("mutation_range").get<double>();
    c.threads = j.at("threads").get<std::size_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    return c;
}

std::string to_string(SelectionMode m) { return m == SelectionMode::CeSort ? "ce-sort" : "pareto"; }

// ---------------------------------------------------------------- selection

bool dominates(const FitnessRecord& a, const FitnessRecord& b)
{
    if (!a.mse || !b.mse) {
        throw EvolveError("dominance needs MSE on both records");
    }
    const bool no_worse = a.ce <= b.ce && *a.mse <= *b.mse;
    const bool better = a.ce < b.ce || *a.mse < *b.mse;
    return no_worse && better;
}

SelectionMode selection_mode(std::span<const Individual> members)
{
    for (const auto& m : members) {
        if (!m.fitness) {
            throw EvolveError("selection needs evaluated members");
        }
        if (!m.fitness->valid) {
            return SelectionMode::CeSort;
        }
    }
    return SelectionMode::Pareto;
}

namespace {

// NSGA-II crowding distance on (ce, mse); the two extremes of each
// objective are infinite.
std::vector<double> crowding(const std::vector<Individual>& m)
{
    const std::size_t n = m.size();
    std::vector<double> dist(n, 0.0);
    for (int obj = 0; obj < 2; ++obj) {
        auto value = [&](std::size_t i) { return obj == 0 ? m[i].fitness->ce : *m[i].fitness->mse; };
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value(a) < value(b); });
        const double span = value(order.back()) - value(order.front());
        dist[order.front()] = std::numeric_limits<double>::infinity();
        dist[order.back()] = std::numeric_limits<double>::infinity();
        if (!(span > 0.0) || !std::isfinite(span)) {
            continue;
        }
        for (std::size_t k = 1; k + 1 < n; ++k) {
            dist[order[k]] += (value(order[k + 1]) - value(order[k - 1])) / span;
        }
    }
    return dist;
}

void truncate_by_crowding(std::vector<Individual>& m, std::size_t keep)
{
    const auto dist = crowding(m);
    std::vector<std::size_t> order(m.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    std::vector<Individual> out;
    for (std::size_t i : order) {
        out.push_back(std::move(m[i]));
    }
    m = std::move(out);
}

} // namespace

Population select(Population pop, Rng& rng)
{
    auto& m = pop.members;
    const SelectionMode mode = selection_mode(m);
    if (m.size() <= pop.parent_count) {
        return pop;
    }
    if (mode == SelectionMode::CeSort) {
        std::vector<std::size_t> order(m.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (m[a].fitness->ce != m[b].fitness->ce) {
                return m[a].fitness->ce < m[b].fitness->ce;
            }
            return m[a].age < m[b].age;
        });
        std::vector<Individual> kept;
        for (std::size_t k = 0; k < pop.parent_count; ++k) {
            kept.push_back(std::move(m[order[k]]));
        }
        m = std::move(kept);
        return pop;
    }

    // Loser of one tournament between i and j, if the pair resolves.
    auto contest = [&](std::size_t i, std::size_t j) -> std::optional<std::size_t> {
        const FitnessRecord& fi = *m[i].fitness;
        const FitnessRecord& fj = *m[j].fitness;
        if (dominates(fi, fj)) {
            return j;
        }
        if (dominates(fj, fi)) {
            return i;
        }
        if (fi.ce == fj.ce && *fi.mse == *fj.mse) {
            // exact tie: the younger survives; equal ages drop the later one
            if (m[i].age != m[j].age) {
                return m[i].age > m[j].age ? i : j;
            }
            return std::max(i, j);
        }
        return std::nullopt;
    };

    std::size_t stalls = 0;
    while (m.size() > pop.parent_count) {
        const std::size_t n = m.size();
        const std::size_t i = rng.index(n);
        std::size_t j = rng.index(n - 1);
        if (j >= i) {
            ++j;
        }
        std::optional<std::size_t> loser = contest(i, j);
        if (!loser && ++stalls >= n * n) {
            // Forced step: the first resolvable pair in index order, or
            // crowding truncation once every pair is mutually non-dominated.
            for (std::size_t a = 0; a < n && !loser; ++a) {
                for (std::size_t b = a + 1; b < n && !loser; ++b) {
                    loser = contest(a, b);
                }
            }
            if (!loser) {
                truncate_by_crowding(m, pop.parent_count);
                break;
            }
        }
        if (loser) {
            m.erase(m.begin() + static_cast<std::ptrdiff_t>(*loser));
            stalls = 0;
        }
    }
    return pop;
}

// ---------------------------------------------------------------- variation

NetworkGenome mutate(const NetworkGenome& g, Rng& rng, double rate, double range)
{
    NetworkGenome out = g;
    for (std::size_t i = 0; i < g.layer_count(); ++i) {
        if (!rng.bernoulli(rate)) {
            continue;
        }
        Tensor w = g.weights(i);
        for (auto& v : w.data()) {
            v += rng.uniform(-range, range);
        }
        out = out.set_layer(i, std::move(w));
    }
    return out;
}

namespace {

std::vector<bool> pick_layers(Rng& rng, std::size_t n, double rate)
{
    std::vector<bool> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i] = rng.bernoulli(rate);
    }
    return mask;
}

void require_aligned(const NetworkGenome& a, const NetworkGenome& b)
{
    if (!(a.config() == b.config()) || a.layer_names() != b.layer_names()) {
        throw ModelError(ModelErrc::ConfigMismatch, "crossover parents have different layouts");
    }
}

NetworkGenome cross_layers(const NetworkGenome& a, const NetworkGenome& b, const std::vector<bool>& mask, Rng& rng)
{
    NetworkGenome out = a;
    for (std::size_t i = 0; i < a.layer_count(); ++i) {
        if (!mask[i]) {
            continue;
        }
        Tensor w = a.weights(i);
        const Tensor& src = b.weights(i);
        const std::size_t n = w.size();
        const std::size_t half = n / 2;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t k = 0; k < half; ++k) {
            std::swap(idx[k], idx[k + rng.index(n - k)]);
            w[idx[k]] = src[idx[k]];
        }
        out = out.set_layer(i, std::move(w));
    }
    return out;
}

} // namespace

NetworkGenome crossover(const NetworkGenome& a, const NetworkGenome& b, Rng& rng, double rate)
{
    require_aligned(a, b);
    return cross_layers(a, b, pick_layers(rng, a.layer_count(), rate), rng);
}

std::vector<Individual> make_children(std::span<const Individual> parents, Rng& rng, const EvolveConfig& cfg)
{
    if (parents.empty()) {
        throw EvolveError("no parents to breed from");
    }
    std::vector<Individual> children;
    for (std::size_t c = 0; c < parents.size(); ++c) {
        const std::size_t first = rng.index(parents.size());
        const NetworkGenome& a = parents[first].genome;
        const auto mask = pick_layers(rng, a.layer_count(), cfg.crossover_rate);
        NetworkGenome child = a;
        if (parents.size() > 1 && std::find(mask.begin(), mask.end(), true) != mask.end()) {
            std::size_t second = rng.index(parents.size() - 1);
            if (second >= first) {
                ++second;
            }
            require_aligned(a, parents[second].genome);
            child = cross_layers(a, parents[second].genome, mask, rng);
        }
        child = mutate(child, rng, cfg.mutation_rate, cfg.mutation_range);
        children.push_back({std::move(child), std::nullopt, 0});
    }
    return children;
}

// --------------------------------------------------------------- generation

void evaluate_population(Population& pop, const Corpus& corpus, std::size_t threads)
{
    std::vector<std::size_t> todo;
    std::vector<const NetworkGenome*> genomes;
    for (std::size_t i = 0; i < pop.members.size(); ++i) {
        if (!pop.members[i].fitness) {
            todo.push_back(i);
            genomes.push_back(&pop.members[i].genome);
        }
    }
    const auto results = evaluate_many(genomes, corpus, threads);
    for (std::size_t k = 0; k < todo.size(); ++k) {
        pop.members[todo[k]].fitness = results[k];
    }
}

GenerationStats summarize(const Population& pop)
{
    GenerationStats s;
    s.generation = pop.generation;
    s.mode = selection_mode(pop.members);
    s.best_ce = std::numeric_limits<double>::infinity();
    std::size_t valid = 0;
    for (const auto& m : pop.members) {
        s.best_ce = std::min(s.best_ce, m.fitness->ce);
        if (m.fitness->valid) {
            ++valid;
            s.best_mse = s.best_mse ? std::min(*s.best_mse, *m.fitness->mse) : *m.fitness->mse;
        }
    }
    s.valid_fraction = pop.members.empty() ? 0.0 : static_cast<double>(valid) / static_cast<double>(pop.members.size());
    return s;
}

Population step(Population pop, const Corpus& corpus, Rng& rng, const EvolveConfig& cfg, GenerationStats* stats)
{
    evaluate_population(pop, corpus, cfg.threads);
    if (stats) {
        *stats = summarize(pop);
    }
    Population next = select(std::move(pop), rng);
    for (auto& m : next.members) {
        ++m.age;
    }
    auto children = make_children(next.members, rng, cfg);
    for (auto& c : children) {
        next.members.push_back(std::move(c));
    }
    ++next.generation;
    return next;
}

// ------------------------------------------------------------------- fronts

ParetoFront pareto_front(std::vector<FrontPoint> points)
{
    std::stable_sort(points.begin(), points.end(), [](const FrontPoint& a, const FrontPoint& b) {
        return a.ce != b.ce ? a.ce < b.ce : a.mse < b.mse;
    });
    ParetoFront f;
    for (std::size_t i = 0; i < points.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
            const auto& p = points[j];
            const auto& q = points[i];
            dominated = p.ce <= q.ce && p.mse <= q.mse && (p.ce < q.ce || p.mse < q.mse);
        }
        if (!dominated) {
            f.points.push_back(points[i]);
        }
    }
    return f;
}

ParetoFront pareto_front(std::span<const Individual> members, std::size_t trial)
{
    std::vector<FrontPoint> pts;
    for (const auto& m : members) {
        if (m.fitness && m.fitness->valid) {
            pts.push_back({m.fitness->ce, *m.fitness->mse, trial, m.age});
        }
    }
    return pareto_front(std::move(pts));
}

ParetoFront meta_front(std::span<const ParetoFront> fronts)
{
    std::vector<FrontPoint> all;
    for (const auto& f : fronts) {
        all.insert(all.end(), f.points.begin(), f.points.end());
    }
    return pareto_front(std::move(all));
}

// ---------------------------------------------------------------------- csv

namespace {

std::vector<std::vector<std::string>> parse_csv(std::string_view text, std::string_view header)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != header) {
        throw std::invalid_argument("unexpected CSV header, wanted '" + std::string(header) + "'");
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

constexpr std::string_view kHistoryHeader = "generation,best_ce,best_mse,valid_fraction,mode";
constexpr std::string_view kFrontHeader = "ce,mse,trial,age";

} // namespace

std::string history_csv(std::span<const GenerationStats> history)
{
    std::string out(kHistoryHeader);
    out += '\n';
    for (const auto& s : history) {
        out += std::to_string(s.generation) + ',' + format_double(s.best_ce) + ',' +
               (s.best_mse ? format_double(*s.best_mse) : std::string()) + ',' + format_double(s.valid_fraction) +
               ',' + to_string(s.mode) + '\n';
    }
    return out;
}

std::vector<GenerationStats> parse_history_csv(std::string_view text)
{
    std::vector<GenerationStats> out;
    for (const auto& r : parse_csv(text, kHistoryHeader)) {
        if (r.size() != 5) {
            throw std::invalid_argument("history row needs 5 fields");
        }
        GenerationStats s;
        s.generation = parse_size(r[0]);
        s.best_ce = parse_double(r[1]);
        if (!r[2].empty()) {
            s.best_mse = parse_double(r[2]);
        }
        s.valid_fraction = parse_double(r[3]);
        s.mode = r[4] == "pareto" ? SelectionMode::Pareto : SelectionMode::CeSort;
        out.push_back(s);
    }
    return out;
}

std::string front_csv(const ParetoFront& front)
{
    std::string out(kFrontHeader);
    out += '\n';
    for (const auto& p : front.points) {
        out += format_double(p.ce) + ',' + format_double(p.mse) + ',' + std::to_string(p.trial) + ',' +
               std::to_string(p.age) + '\n';
    }
    return out;
}

ParetoFront parse_front_csv(std::string_view text)
{
    ParetoFront f;
    for (const auto& r : parse_csv(text, kFrontHeader)) {
        if (r.size() != 4) {
            throw std::invalid_argument("front row needs 4 fields");
        }
        f.points.push_back({parse_double(r[0]), parse_double(r[1]), parse_size(r[2]), parse_size(r[3])});
    }
    return f;
}

// -------------------------------------------------------------------- trial

namespace {

constexpr char kStateMagic[8] = {'S', 'R', 'N', 'E', 'S', 'T', 'A', 'T'};

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

std::uint64_t get_u64(std::string_view s, std::size_t& pos)
{
    if (pos + 8 > s.size()) {
        throw EvolveError("truncated trial state");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
}

json fitness_json(const std::optional<FitnessRecord>& f)
{
    if (!f) {
        return nullptr;
    }
    return json{{"ce", f->ce}, {"mse", f->mse ? json(*f->mse) : json(nullptr)}, {"valid", f->valid}};
}

std::optional<FitnessRecord> fitness_from_json(const json& j)
{
    if (j.is_null()) {
        return std::nullopt;
    }
    FitnessRecord f;
    f.ce = j.at("ce").get<double>();
    if (!j.at("mse").is_null()) {
        f.mse = j.at("mse").get<double>();
    }
    f.valid = j.at("valid").get<bool>();
    return f;
}

json stats_json(const GenerationStats& s)
{
    return json{{"generation", s.generation},
                {"best_ce", s.best_ce},
                {"best_mse", s.best_mse ? json(*s.best_mse) : json(nullptr)},
                {"valid_fraction", s.valid_fraction},
                {"mode", to_string(s.mode)}};
}

GenerationStats stats_from_json(const json& j)
{
    GenerationStats s;
    s.generation = j.at("generation").get<std::size_t>();
    s.best_ce = j.at("best_ce").get<double>();
    if (!j.at("best_mse").is_null()) {
        s.best_mse = j.at("best_mse").get<double>();
    }
    s.valid_fraction = j.at("valid_fraction").get<double>();
    s.mode = j.at("mode").get<std::string>() == "pareto" ? SelectionMode::Pareto : SelectionMode::CeSort;
    return s;
}

struct TrialState {
    Population pop;
    std::vector<GenerationStats> history;
    std::string rng_state;
};

std::string state_to_bytes(const TrialState& st)
{
    json header{{"format_version", 1},
                {"generation", st.pop.generation},
                {"parent_count", st.pop.parent_count},
                {"size", st.pop.size},
                {"rng", st.rng_state},
                {"members", json::array()},
                {"history", json::array()}};
    for (const auto& m : st.pop.members) {
        header["members"].push_back(json{{"age", m.age}, {"fitness", fitness_json(m.fitness)}});
    }
    for (const auto& s : st.history) {
        header["history"].push_back(stats_json(s));
    }
    const std::string h = header.dump();
    std::string out(kStateMagic, sizeof kStateMagic);
    put_u64(out, h.size());
    out += h;
    for (const auto& m : st.pop.members) {
        const std::string g = genome_to_bytes(m.genome);
        put_u64(out, g.size());
        out += g;
    }
    return out;
}

TrialState state_from_bytes(std::string_view s)
{
    if (s.size() < sizeof kStateMagic || s.substr(0, sizeof kStateMagic) != std::string_view(kStateMagic, 8)) {
        throw EvolveError("not a trial state file");
    }
    std::size_t pos = sizeof kStateMagic;
    const std::uint64_t hlen = get_u64(s, pos);
    if (pos + hlen > s.size()) {
        throw EvolveError("truncated trial state");
    }
    const json header = json::parse(s.substr(pos, hlen));
    pos += hlen;
    TrialState st;
    st.pop.generation = header.at("generation").get<std::size_t>();
    st.pop.parent_count = header.at("parent_count").get<std::size_t>();
    st.pop.size = header.at("size").get<std::size_t>();
    st.rng_state = header.at("rng").get<std::string>();
    for (const auto& m : header.at("members")) {
        const std::uint64_t glen = get_u64(s, pos);
        if (pos + glen > s.size()) {
            throw EvolveError("truncated trial state");
        }
        Individual ind{genome_from_bytes(s.substr(pos, glen)), fitness_from_json(m.at("fitness")),
                       m.at("age").get<std::size_t>()};
        pos += glen;
        st.pop.members.push_back(std::move(ind));
    }
    for (const auto& h : header.at("history")) {
        st.history.push_back(stats_from_json(h));
    }
    return st;
}

} // namespace

bool trial_complete(const std::filesystem::path& dir) { return std::filesystem::exists(dir / TrialFiles::manifest); }

Population load_trial_population(const std::filesystem::path& dir)
{
    return state_from_bytes(read_file(dir / TrialFiles::state)).pop;
}

TrialResult run_trial(const TrialSpec& spec, const Pool& pool, const Corpus& corpus)
{
    const EvolveConfig& cfg = spec.config;
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    Rng rng(spec.seed);
    TrialState st;
    const bool have_state = spec.dir && std::filesystem::exists(*spec.dir / TrialFiles::state);
    if (have_state) {
        st = state_from_bytes(read_file(*spec.dir / TrialFiles::state));
        rng.restore(st.rng_state);
        if (st.pop.parent_count != cfg.parent_count || st.pop.size != cfg.pop_size) {
            throw EvolveError("saved trial state does not match the population config");
        }
    } else {
        st.pop.parent_count = cfg.parent_count;
        st.pop.size = cfg.pop_size;
        for (auto& g : seed_population(pool, cfg.pop_size, rng)) {
            st.pop.members.push_back({std::move(g), std::nullopt, 0});
        }
    }
    auto save = [&] {
        if (spec.dir) {
            st.rng_state = rng.state();
            write_file_atomic(*spec.dir / TrialFiles::state, state_to_bytes(st));
        }
    };

    TrialResult result;
    std::size_t done_here = 0;
    while (st.pop.generation < cfg.generations) {
        if (spec.stop_after && done_here == *spec.stop_after) {
            save();
            result.history = st.history;
            result.final_population = st.pop;
            return result;
        }
        GenerationStats s;
        st.pop = step(std::move(st.pop), corpus, rng, cfg, &s);
        st.history.push_back(s);
        ++done_here;
        if (cfg.checkpoint_every && st.pop.generation % cfg.checkpoint_every == 0) {
            save();
        }
    }
    evaluate_population(st.pop, corpus, cfg.threads);

    result.history = st.history;
    result.front = pareto_front(st.pop.members, spec.trial);
    result.final_population = st.pop;
    result.complete = true;

    if (spec.dir) {
        save();
        write_file_atomic(*spec.dir / TrialFiles::history, history_csv(result.history));
        write_file_atomic(*spec.dir / TrialFiles::front, front_csv(result.front));
        const GenerationStats last = summarize(st.pop);
        json manifest{{"format_version", 1},
                      {"trial", spec.trial},
                      {"seed", spec.seed},
                      {"config", to_json(cfg)},
                      {"corpus", {{"kind", to_string(corpus.kind)}, {"seed", corpus.seed}, {"size", corpus.pairs.size()}}},
                      {"pool", json::array()},
                      {"final", stats_json(last)},
                      {"provenance", spec.provenance}};
        for (const auto& m : pool.members) {
            manifest["pool"].push_back(json{{"index", m.index}, {"seed", m.seed}});
        }
        write_file_atomic(*spec.dir / TrialFiles::timing,
                          json{{"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}}
                                  .dump(2) +
                              "\n");
        write_file_atomic(*spec.dir / TrialFiles::manifest, manifest.dump(2) + "\n");
    }
    return result;
}

} // namespace srne
