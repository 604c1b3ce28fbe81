#pragma once

// Data-to-equation network: a point-set encoder (pointwise conv1d layers,
// max pooling, one fully connected layer) whose output is prepended as a
// pseudo-token to a decoder-only transformer. No normalization layers.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "srne/expr.hpp"
#include "srne/rng.hpp"
#include "srne/tensor.hpp"

namespace srne {

struct ModelConfig {
    std::size_t n_blocks = 2;
    std::size_t n_heads = 2;
    std::size_t d_model = 32;
    std::size_t d_ff = 64;
    std::size_t max_seq = 32;
    std::size_t vocab = kVocabSize;
    double dropout_p = 0.1;
    std::vector<std::size_t> encoder_channels{16, 32, 32};

    static ModelConfig desk() { return {}; }
    static ModelConfig paper();

    /// Throws ModelError(InvalidConfig).
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

enum class ModelErrc {
    InvalidConfig,
    UnknownLayer,
    ShapeMismatch,
    SequenceTooLong,
    NonFiniteActivation,
    ConfigMismatch,
    BadCheckpoint,
};

class ModelError : public std::runtime_error {
public:
    ModelError(ModelErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ModelErrc code() const noexcept { return code_; }

private:
    ModelErrc code_;
};

struct Layer {
    std::string name;
    std::shared_ptr<const Tensor> weights;
    std::shared_ptr<const Tensor> bias; // null when the layer has none
};

/// Ordered weight layers of one network. Copies share layer storage, so
/// replacing one layer leaves every other layer physically shared.
class NetworkGenome {
public:
    NetworkGenome() = default;
    NetworkGenome(ModelConfig config, std::vector<Layer> layers);

    const ModelConfig& config() const noexcept { return config_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::size_t layer_count() const noexcept { return layers_.size(); }

    std::vector<std::string> layer_names() const;
    std::size_t index_of(const std::string& name) const; // throws UnknownLayer
    const Tensor& get_layer(const std::string& name) const;
    const Tensor& weights(std::size_t i) const { return *layers_[i].weights; }
    const Tensor* bias(std::size_t i) const { return layers_[i].bias.get(); }

    NetworkGenome set_layer(const std::string& name, Tensor w) const;
    NetworkGenome set_layer(std::size_t i, Tensor w) const;

    std::size_t weight_count() const;

    /// Bitwise equality of config, names, weights and biases.
    friend bool operator==(const NetworkGenome& a, const NetworkGenome& b);

private:
    ModelConfig config_;
    std::vector<Layer> layers_;
};

/// Dense and conv weights uniform on +-sqrt(3 / fan_in), lookup tables on
/// +-0.08, biases zero.
NetworkGenome init_genome(const ModelConfig& config, std::uint64_t seed);

/// (1 x d_model) summary of one XY set.
struct Embedding {
    Tensor vector;
};

/// Layers of a genome placed on a tape, either as trainable parameters or as
/// constants. The genome must outlive the tape.
struct BoundModel {
    const NetworkGenome* genome = nullptr;
    std::vector<Var> weights;
    std::vector<Var> biases; // aligned with weights; id ignored when has_bias[i] is false
    std::vector<bool> has_bias;
};

BoundModel bind(Tape& tape, const NetworkGenome& g, bool trainable);

Var encode_on(Tape& tape, const BoundModel& m, std::span<const double> xs, std::span<const double> ys);
/// Logits for every position of [embedding, inputs...] -> ((1 + |inputs|) x vocab).
Var decode_on(Tape& tape, const BoundModel& m, Var embedding, std::span<const int> inputs, bool training, Rng* rng);
/// Teacher-forced logits predicting target[i] at row i -> (|target| x vocab).
Var forward_logits_on(Tape& tape, const BoundModel& m, std::span<const double> xs, std::span<const double> ys,
                      std::span<const int> target, bool training, Rng* rng);

Embedding encode(const NetworkGenome& g, std::span<const double> xs, std::span<const double> ys);
Tensor forward_logits(const NetworkGenome& g, std::span<const double> xs, std::span<const double> ys,
                      std::span<const int> target);
/// Argmax decoding from START until END or max_steps tokens (START
/// included in the count). Ties go to the lowest token id.
TokenSequence decode_greedy(const NetworkGenome& g, std::span<const double> xs, std::span<const double> ys,
                            std::size_t max_steps);

// Checkpoints: "SRNECKPT", u32 version, config, then per layer the name,
// shape and raw little-endian float64 values; plus a JSON sidecar.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string genome_to_bytes(const NetworkGenome& g);
NetworkGenome genome_from_bytes(std::string_view bytes);
void save_checkpoint(const NetworkGenome& g, const std::filesystem::path& path, const nlohmann::json& sidecar);
NetworkGenome load_checkpoint(const std::filesystem::path& path);

} // namespace srne
