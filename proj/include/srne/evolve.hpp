#pragma once

// Neuroevolution of pretrained network weights against symbolic and numeric
// loss. Selection switches between a CE-only sort (some member emits an
// invalid equation) and a Pareto tournament (all members valid).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srne/metrics.hpp"
#include "srne/pretrain.hpp"

namespace srne {

struct Individual {
    NetworkGenome genome;
    std::optional<FitnessRecord> fitness; // empty until evaluated
    std::size_t age = 0;
};

struct Population {
    std::vector<Individual> members;
    std::size_t generation = 0;
    std::size_t parent_count = 4;
    std::size_t size = 8;
};

struct EvolveConfig {
    std::size_t generations = 200;
    std::size_t pop_size = 8;
    std::size_t parent_count = 4;
    double mutation_rate = 0.5;
    double crossover_rate = 0.5;
    double mutation_range = 0.01;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 10; // generations between resumable snapshots; 0 disables

    /// Throws std::invalid_argument.
    void validate() const;
    friend bool operator==(const EvolveConfig&, const EvolveConfig&) = default;
};

nlohmann::json to_json(const EvolveConfig& c);
EvolveConfig evolve_config_from_json(const nlohmann::json& j);

class EvolveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// a is no worse on both objectives and strictly better on one. Both
/// records must carry an MSE.
bool dominates(const FitnessRecord& a, const FitnessRecord& b);

enum class SelectionMode { CeSort, Pareto };

/// CeSort when any member is invalid.
SelectionMode selection_mode(std::span<const Individual> members);

/// Reduces an evaluated population to its parent_count parents.
Population select(Population pop, Rng& rng);

/// Each weight layer is picked with probability `rate`; every weight of a
/// picked layer moves by U[-range, range]. Biases are never touched.
NetworkGenome mutate(const NetworkGenome& g, Rng& rng, double rate, double range);

/// Child of a: each layer picked with probability `rate` gets exactly
/// floor(n/2) random positions copied from b. Throws ModelError(ConfigMismatch).
NetworkGenome crossover(const NetworkGenome& a, const NetworkGenome& b, Rng& rng, double rate);

std::vector<Individual> make_children(std::span<const Individual> parents, Rng& rng, const EvolveConfig& cfg);

struct GenerationStats {
    std::size_t generation = 0;
    double best_ce = 0.0;
    std::optional<double> best_mse; // over valid members; absent if none
    double valid_fraction = 0.0;
    SelectionMode mode = SelectionMode::CeSort;

    friend bool operator==(const GenerationStats&, const GenerationStats&) = default;
};

void evaluate_population(Population& pop, const Corpus& corpus, std::size_t threads);
GenerationStats summarize(const Population& pop);

/// evaluate -> summarize -> select -> reproduce. Survivors age by one.
Population step(Population pop, const Corpus& corpus, Rng& rng, const EvolveConfig& cfg,
                GenerationStats* stats = nullptr);

struct FrontPoint {
    double ce = 0.0;
    double mse = 0.0;
    std::size_t trial = 0;
    std::size_t age = 0;

    friend bool operator==(const FrontPoint&, const FrontPoint&) = default;
};

struct ParetoFront {
    std::vector<FrontPoint> points; // sorted by ce, then mse
};

/// Non-dominated subset of the points; exact duplicates are all kept.
ParetoFront pareto_front(std::vector<FrontPoint> points);
/// Front of the valid members of a population.
ParetoFront pareto_front(std::span<const Individual> members, std::size_t trial);
ParetoFront meta_front(std::span<const ParetoFront> fronts);

struct TrialResult {
    std::vector<GenerationStats> history; // one row per generation
    ParetoFront front;
    Population final_population;          // evaluated when complete
    bool complete = false;
};

/// Files written into a trial directory.
struct TrialFiles {
    static constexpr const char* history = "history.csv";
    static constexpr const char* front = "front.csv";
    static constexpr const char* manifest = "manifest.json";
    static constexpr const char* state = "state.bin";
    static constexpr const char* timing = "timing.json";
};

struct TrialSpec {
    EvolveConfig config;
    std::uint64_t seed = 0;
    std::size_t trial = 0;
    std::optional<std::filesystem::path> dir; // persist and resume here when set
    nlohmann::json provenance = nlohmann::json::object();
    /// Stop after this many generations of this call (for interruption tests).
    std::optional<std::size_t> stop_after;
};

/// Seeds a population from the pool and runs cfg.generations steps, then
/// evaluates the final population and extracts its front. With a directory,
/// a snapshot is saved every checkpoint_every generations and an existing
/// snapshot is resumed.
TrialResult run_trial(const TrialSpec& spec, const Pool& pool, const Corpus& corpus);

/// True when the directory holds a finished trial.
bool trial_complete(const std::filesystem::path& dir);

/// Population stored in a trial directory's snapshot (the evaluated final
/// population once the trial is complete).
Population load_trial_population(const std::filesystem::path& dir);

std::string history_csv(std::span<const GenerationStats> history);
std::vector<GenerationStats> parse_history_csv(std::string_view text);
std::string front_csv(const ParetoFront& front);
ParetoFront parse_front_csv(std::string_view text);

std::string to_string(SelectionMode m);

} // namespace srne
