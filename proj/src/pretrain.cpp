#include "srne/pretrain.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace srne {

using nlohmann::json;

void PretrainConfig::validate() const
{
    if (epochs == 0 || corpus_size == 0 || n_models == 0 || batch == 0) {
        throw std::invalid_argument("pretrain epochs, corpus_size, n_models and batch must be positive");
    }
    if (!(lr >= 0.0 && lr < 1.0)) {
        throw std::invalid_argument("pretrain lr must lie in [0, 1)");
    }
    if (!(grad_clip > 0.0)) {
        throw std::invalid_argument("pretrain grad_clip must be positive");
    }
}

json to_json(const PretrainConfig& c)
{
    return json{{"epochs", c.epochs}, {"corpus_size", c.corpus_size}, {"n_models", c.n_models}, {"lr", c.lr},
                {"batch", c.batch},   {"grad_clip", c.grad_clip},     {"seed", c.seed}};
}

PretrainConfig pretrain_config_from_json(const json& j)
{
    PretrainConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.corpus_size = j.at("corpus_size").get<std::size_t>();
    c.n_models = j.at("n_models").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.batch = j.at("batch").get<std::size_t>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

PretrainResult pretrain_from(const PretrainConfig& cfg, NetworkGenome start, const Corpus& corpus,
                             std::uint64_t shuffle_seed)
{
    cfg.validate();
    if (corpus.pairs.empty()) {
        throw std::invalid_argument("pretraining corpus is empty");
    }
    const std::size_t n_layers = start.layer_count();

    // Private, mutable copies; the working genome aliases them.
    std::vector<std::shared_ptr<Tensor>> w(n_layers);
    std::vector<std::shared_ptr<Tensor>> b(n_layers);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < n_layers; ++i) {
        w[i] = std::make_shared<Tensor>(start.weights(i));
        if (start.bias(i)) {
            b[i] = std::make_shared<Tensor>(*start.bias(i));
        }
        layers.push_back({start.layers()[i].name, w[i], b[i]});
    }
    const NetworkGenome working(start.config(), std::move(layers));

    Rng rng(shuffle_seed);
    std::vector<std::size_t> order(corpus.pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    // grads: weights then biases, one slot per layer (empty when no bias)
    std::vector<Tensor> grads(2 * n_layers);
    PretrainResult result;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.index(i)]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start_ix = 0; start_ix < order.size(); start_ix += cfg.batch) {
            const std::size_t end_ix = std::min(order.size(), start_ix + cfg.batch);
            for (std::size_t i = 0; i < n_layers; ++i) {
                grads[i] = Tensor(w[i]->shape());
                grads[n_layers + i] = b[i] ? Tensor(b[i]->shape()) : Tensor();
            }
            try {
                for (std::size_t k = start_ix; k < end_ix; ++k) {
                    const DataEquationPair& pair = corpus.pairs[order[k]];
                    Tape tape;
                    const BoundModel m = bind(tape, working, true);
                    Var logits = forward_logits_on(tape, m, pair.xs, pair.ys, pair.tokens, true, &rng);
                    Var loss = cross_entropy_loss(logits, pair.tokens, kPad);
                    tape.backward(loss);
                    epoch_loss += loss.value().item();
                    for (std::size_t i = 0; i < n_layers; ++i) {
                        if (tape.has_grad(m.weights[i])) {
                            const Tensor g = tape.grad(m.weights[i]);
                            for (std::size_t j = 0; j < g.size(); ++j) {
                                grads[i][j] += g[j];
                            }
                        }
                        if (m.has_bias[i] && tape.has_grad(m.biases[i])) {
                            const Tensor g = tape.grad(m.biases[i]);
                            for (std::size_t j = 0; j < g.size(); ++j) {
                                grads[n_layers + i][j] += g[j];
                            }
                        }
                    }
                }
                const double inv = 1.0 / static_cast<double>(end_ix - start_ix);
                for (auto& g : grads) {
                    for (auto& v : g.data()) {
                        v *= inv;
                    }
                }
                clip_grad_norm(grads, cfg.grad_clip);
            } catch (const TensorError& e) {
                throw DivergenceDetected(std::string("pretraining diverged: ") + e.what(), result.epoch_ce);
            } catch (const ModelError& e) {
                if (e.code() != ModelErrc::NonFiniteActivation) {
                    throw;
                }
                throw DivergenceDetected(std::string("pretraining diverged: ") + e.what(), result.epoch_ce);
            }
            for (std::size_t i = 0; i < n_layers; ++i) {
                sgd_step(*w[i], grads[i], cfg.lr);
                if (b[i]) {
                    sgd_step(*b[i], grads[n_layers + i], cfg.lr);
                }
            }
        }
        const double mean = epoch_loss / static_cast<double>(order.size());
        if (!std::isfinite(mean)) {
            throw DivergenceDetected("pretraining loss is not finite", result.epoch_ce);
        }
        result.epoch_ce.push_back(mean);
    }

    // Detach from the mutable buffers.
    std::vector<Layer> out;
    for (std::size_t i = 0; i < n_layers; ++i) {
        out.push_back({working.layers()[i].name, std::make_shared<const Tensor>(*w[i]),
                       b[i] ? std::make_shared<const Tensor>(*b[i]) : nullptr});
    }
    result.genome = NetworkGenome(working.config(), std::move(out));
    return result;
}

PretrainResult pretrain_one(const PretrainConfig& cfg, const ModelConfig& model, const Corpus& corpus,
                            std::uint64_t init_seed)
{
    return pretrain_from(cfg, init_genome(model, init_seed), corpus, Rng::derive(init_seed, 1));
}

std::uint64_t pool_member_seed(std::uint64_t seed, std::size_t k) { return Rng::derive(seed, 1000 + k); }

std::uint64_t pool_init_seed(std::uint64_t seed) { return Rng::derive(seed, 0); }

namespace {

json read_json(const std::filesystem::path& p)
{
    std::ifstream f(p);
    if (!f) {
        throw std::runtime_error("cannot read " + p.string());
    }
    return json::parse(f);
}

void write_json(const std::filesystem::path& p, const json& j)
{
    std::ofstream f(p, std::ios::binary);
    f << j.dump(2) << '\n';
    if (!f) {
        throw std::runtime_error("cannot write " + p.string());
    }
}

} // namespace

Pool pretrain_pool(const PretrainConfig& cfg, const ModelConfig& model, const Corpus& corpus,
                   const std::optional<std::filesystem::path>& dir, const json& provenance)
{
    cfg.validate();
    Pool pool;
    json manifest{{"format_version", 1}, {"provenance", provenance}, {"models", json::array()}, {"diverged", json::array()}};
    std::filesystem::path manifest_path;
    if (dir) {
        std::filesystem::create_directories(*dir);
        manifest_path = *dir / "manifest.json";
        if (std::filesystem::exists(manifest_path)) {
            const json old = read_json(manifest_path);
            manifest["models"] = old.at("models");
            manifest["diverged"] = old.at("diverged");
        }
    }
    auto listed = [&](const char* key, std::size_t k) {
        for (const auto& m : manifest[key]) {
            if (m.at("index").get<std::size_t>() == k) {
                return true;
            }
        }
        return false;
    };

    for (std::size_t k = 0; k < cfg.n_models; ++k) {
        const std::uint64_t seed = pool_member_seed(cfg.seed, k);
        if (dir && listed("diverged", k)) {
            ++pool.diverged;
            continue;
        }
        if (dir && listed("models", k)) {
            for (const auto& m : manifest["models"]) {
                if (m.at("index").get<std::size_t>() == k) {
                    const auto path = *dir / m.at("checkpoint").get<std::string>();
                    pool.members.push_back({k, seed, load_checkpoint(path), m.at("final_ce").get<double>(), path});
                }
            }
            continue;
        }
        try {
            PretrainResult r = pretrain_from(cfg, init_genome(model, pool_init_seed(cfg.seed)), corpus, seed);
            PoolMember member{k, seed, std::move(r.genome), r.epoch_ce.back(), {}};
            if (dir) {
                const std::string file = "model_" + std::to_string(k) + ".ckpt";
                member.checkpoint = *dir / file;
                save_checkpoint(member.genome, member.checkpoint,
                                json{{"seed", seed}, {"init_seed", pool_init_seed(cfg.seed)}, {"index", k}, {"epoch_ce", r.epoch_ce}, {"provenance", provenance}});
                manifest["models"].push_back(
                    json{{"index", k}, {"seed", seed}, {"checkpoint", file}, {"final_ce", member.final_ce}});
            }
            pool.members.push_back(std::move(member));
        } catch (const DivergenceDetected& e) {
            ++pool.diverged;
            if (dir) {
                manifest["diverged"].push_back(json{{"index", k}, {"seed", seed}, {"reason", e.what()}});
            }
        }
        if (dir) {
            write_json(manifest_path, manifest);
        }
    }
    if (dir) {
        write_json(manifest_path, manifest);
    }
    return pool;
}

Pool load_pool(const std::filesystem::path& manifest_path)
{
    const json manifest = read_json(manifest_path);
    const auto dir = manifest_path.parent_path();
    Pool pool;
    for (const auto& m : manifest.at("models")) {
        const auto path = dir / m.at("checkpoint").get<std::string>();
        pool.members.push_back({m.at("index").get<std::size_t>(), m.at("seed").get<std::uint64_t>(),
                                load_checkpoint(path), m.at("final_ce").get<double>(), path});
    }
    pool.diverged = manifest.at("diverged").size();
    return pool;
}

std::vector<NetworkGenome> seed_population(const Pool& pool, std::size_t pop_size, Rng& rng)
{
    if (pool.members.empty()) {
        throw EmptyPool();
    }
    std::vector<NetworkGenome> out;
    out.reserve(pop_size);
    for (std::size_t i = 0; i < pop_size; ++i) {
        out.push_back(pool.members[rng.index(pool.members.size())].genome);
    }
    return out;
}

} // namespace srne
