#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "srne/datagen.hpp"
#include "srne/model.hpp"

namespace srne {

struct PretrainConfig {
    std::size_t epochs = 60;
    std::size_t corpus_size = 1000;
    std::size_t n_models = 3;
    double lr = 0.05;
    std::size_t batch = 16;
    double grad_clip = 1.0;
    std::uint64_t seed = 1;

    void validate() const;
    friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

struct PretrainResult {
    NetworkGenome genome;
    std::vector<double> epoch_ce; // mean teacher-forced CE per epoch
};

/// Thrown when a loss or gradient stops being finite; carries the history
/// recorded up to that point.
class DivergenceDetected : public std::runtime_error {
public:
    DivergenceDetected(const std::string& what, std::vector<double> partial)
        : std::runtime_error(what), partial_(std::move(partial))
    {
    }
    const std::vector<double>& partial_history() const noexcept { return partial_; }

private:
    std::vector<double> partial_;
};

/// Minibatch SGD on teacher-forced cross-entropy, starting from
/// init_genome(model, init_seed). Only symbolic loss is used.
PretrainResult pretrain_one(const PretrainConfig& cfg, const ModelConfig& model, const Corpus& corpus,
                            std::uint64_t init_seed);

/// Same, continuing from an existing genome.
PretrainResult pretrain_from(const PretrainConfig& cfg, NetworkGenome start, const Corpus& corpus,
                             std::uint64_t shuffle_seed);

struct PoolMember {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    NetworkGenome genome;
    double final_ce = 0.0;
    std::filesystem::path checkpoint; // empty for in-memory pools
};

struct Pool {
    std::vector<PoolMember> members;
    std::size_t diverged = 0;
};

/// Data-order seed for pool member k.
std::uint64_t pool_member_seed(std::uint64_t seed, std::size_t k);
/// Initialization seed shared by every pool member.
std::uint64_t pool_init_seed(std::uint64_t seed);

/// Trains cfg.n_models networks from one shared initialization, each with
/// its own data-order sub-seed, so that members stay close enough for
/// layer-wise crossover to be meaningful. When `dir` is given,
/// each checkpoint and a manifest.json are written there, and members
/// already listed in an existing manifest are loaded instead of retrained.
Pool pretrain_pool(const PretrainConfig& cfg, const ModelConfig& model, const Corpus& corpus,
                   const std::optional<std::filesystem::path>& dir = std::nullopt,
                   const nlohmann::json& provenance = nlohmann::json::object());

/// Reads a pool manifest and its checkpoints.
Pool load_pool(const std::filesystem::path& manifest);

/// Each genome drawn uniformly, with replacement, from the pool.
std::vector<NetworkGenome> seed_population(const Pool& pool, std::size_t pop_size, Rng& rng);

class EmptyPool : public std::runtime_error {
public:
    EmptyPool() : std::runtime_error("pool has no pretrained members") {}
};

} // namespace srne
