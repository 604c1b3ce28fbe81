#include "srne/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace srne {

using nlohmann::json;

ModelConfig ModelConfig::paper()
{
    ModelConfig c;
    c.n_blocks = 8;
    c.n_heads = 8;
    c.d_model = 256;
    c.d_ff = 1024;
    c.max_seq = 32;
    c.dropout_p = 0.1;
    c.encoder_channels = {64, 128, 256};
    return c;
}

void ModelConfig::validate() const
{
    auto fail = [](const std::string& m) { throw ModelError(ModelErrc::InvalidConfig, m); };
    if (n_blocks == 0 || n_heads == 0 || d_model == 0 || d_ff == 0) {
        fail("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        fail("d_model must be divisible by n_heads");
    }
    if (max_seq < kMaxLength + 2) {
        fail("max_seq must be at least 32 (30 primitives plus START/END)");
    }
    if (vocab != static_cast<std::size_t>(kVocabSize)) {
        fail("vocab must be 14");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        fail("dropout_p must lie in [0, 1)");
    }
    if (encoder_channels.empty() ||
        std::any_of(encoder_channels.begin(), encoder_channels.end(), [](std::size_t c) { return c == 0; })) {
        fail("encoder needs at least one non-empty conv layer");
    }
}

json to_json(const ModelConfig& c)
{
    return json{{"n_blocks", c.n_blocks}, {"n_heads", c.n_heads},     {"d_model", c.d_model},
                {"d_ff", c.d_ff},         {"max_seq", c.max_seq},     {"vocab", c.vocab},
                {"dropout_p", c.dropout_p}, {"encoder_channels", c.encoder_channels}};
}

ModelConfig model_config_from_json(const json& j)
{
    ModelConfig c;
    c.n_blocks = j.at("n_blocks").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::size_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.encoder_channels = j.at("encoder_channels").get<std::vector<std::size_t>>();
    return c;
}

// ----------------------------------------------------------------- genome

NetworkGenome::NetworkGenome(ModelConfig config, std::vector<Layer> layers)
    : config_(std::move(config)), layers_(std::move(layers))
{
}

std::vector<std::string> NetworkGenome::layer_names() const
{
    std::vector<std::string> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) {
        out.push_back(l.name);
    }
    return out;
}

std::size_t NetworkGenome::index_of(const std::string& name) const
{
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].name == name) {
            return i;
        }
    }
    throw ModelError(ModelErrc::UnknownLayer, "no layer named '" + name + "'");
}

const Tensor& NetworkGenome::get_layer(const std::string& name) const { return *layers_[index_of(name)].weights; }

NetworkGenome NetworkGenome::set_layer(const std::string& name, Tensor w) const
{
    return set_layer(index_of(name), std::move(w));
}

NetworkGenome NetworkGenome::set_layer(std::size_t i, Tensor w) const
{
    if (i >= layers_.size()) {
        throw ModelError(ModelErrc::UnknownLayer, "layer index out of range");
    }
    if (w.shape() != layers_[i].weights->shape()) {
        throw ModelError(ModelErrc::ShapeMismatch, "layer '" + layers_[i].name + "' expects " +
                                                       shape_string(layers_[i].weights->shape()) + ", got " +
                                                       shape_string(w.shape()));
    }
    NetworkGenome out = *this;
    out.layers_[i].weights = std::make_shared<const Tensor>(std::move(w));
    return out;
}

std::size_t NetworkGenome::weight_count() const
{
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += l.weights->size();
    }
    return n;
}

bool operator==(const NetworkGenome& a, const NetworkGenome& b)
{
    if (!(a.config_ == b.config_) || a.layers_.size() != b.layers_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
        const Layer& x = a.layers_[i];
        const Layer& y = b.layers_[i];
        if (x.name != y.name || !(*x.weights == *y.weights) || bool(x.bias) != bool(y.bias)) {
            return false;
        }
        if (x.bias && !(*x.bias == *y.bias)) {
            return false;
        }
    }
    return true;
}

namespace {

// Layer layout, fully determined by the config.
struct LayerSpec {
    std::string name;
    Shape weights;
    std::size_t bias = 0; // 0: no bias
    std::size_t fan_in = 0; // 0: lookup table
};

std::vector<LayerSpec> layout(const ModelConfig& c)
{
    std::vector<LayerSpec> specs;
    std::size_t in = 2;
    for (std::size_t i = 0; i < c.encoder_channels.size(); ++i) {
        const std::size_t out = c.encoder_channels[i];
        specs.push_back({"enc.conv" + std::to_string(i), {out, in, 1}, out, in});
        in = out;
    }
    specs.push_back({"enc.fc", {in, c.d_model}, c.d_model, in});
    specs.push_back({"dec.tok_emb", {c.vocab, c.d_model}, 0});
    specs.push_back({"dec.pos_emb", {c.max_seq, c.d_model}, 0});
    for (std::size_t b = 0; b < c.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        specs.push_back({p + "attn.q", {c.d_model, c.d_model}, c.d_model, c.d_model});
        specs.push_back({p + "attn.k", {c.d_model, c.d_model}, c.d_model, c.d_model});
        specs.push_back({p + "attn.v", {c.d_model, c.d_model}, c.d_model, c.d_model});
        specs.push_back({p + "attn.o", {c.d_model, c.d_model}, c.d_model, c.d_model});
        specs.push_back({p + "mlp.fc1", {c.d_model, c.d_ff}, c.d_ff, c.d_model});
        specs.push_back({p + "mlp.fc2", {c.d_ff, c.d_model}, c.d_model, c.d_ff});
    }
    specs.push_back({"dec.head", {c.d_model, c.vocab}, c.vocab, c.d_model});
    return specs;
}

constexpr double kInitRange = 0.08;

// Fixed squashing of raw inputs: sign(v) * log(1 + |v|).
double squash(double v) { return std::copysign(std::log1p(std::abs(v)), v); }

} // namespace

NetworkGenome init_genome(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    Rng rng(seed);
    std::vector<Layer> layers;
    for (const auto& spec : layout(config)) {
        Tensor w(spec.weights);
        const double range = spec.fan_in ? std::sqrt(3.0 / static_cast<double>(spec.fan_in)) : kInitRange;
        for (auto& v : w.data()) {
            v = rng.uniform(-range, range);
        }
        Layer l{spec.name, std::make_shared<const Tensor>(std::move(w)), nullptr};
        if (spec.bias) {
            l.bias = std::make_shared<const Tensor>(Shape{spec.bias});
        }
        layers.push_back(std::move(l));
    }
    return NetworkGenome(config, std::move(layers));
}

// ----------------------------------------------------------------- forward

BoundModel bind(Tape& tape, const NetworkGenome& g, bool trainable)
{
    BoundModel m;
    m.genome = &g;
    for (std::size_t i = 0; i < g.layer_count(); ++i) {
        m.weights.push_back(tape.view(g.weights(i), trainable));
        const Tensor* b = g.bias(i);
        m.has_bias.push_back(b != nullptr);
        m.biases.push_back(b ? tape.view(*b, trainable) : Var{});
    }
    return m;
}

namespace {

// Layer indices for a config, resolved once per call.
struct Index {
    std::size_t conv0 = 0;
    std::size_t n_conv = 0;
    std::size_t fc = 0;
    std::size_t tok = 0;
    std::size_t pos = 0;
    std::size_t block0 = 0;
    std::size_t head = 0;
    static constexpr std::size_t kPerBlock = 6;

    explicit Index(const ModelConfig& c)
        : n_conv(c.encoder_channels.size()), fc(n_conv), tok(fc + 1), pos(fc + 2), block0(fc + 3),
          head(block0 + kPerBlock * c.n_blocks)
    {
    }
};

Var linear(const BoundModel& m, std::size_t layer, Var x)
{
    Var y = matmul(x, m.weights[layer]);
    return m.has_bias[layer] ? add_bias(y, m.biases[layer]) : y;
}

template <typename F>
auto guard_activations(F&& f)
{
    try {
        return f();
    } catch (const TensorError& e) {
        if (e.code() == TensorErrc::NonFinite) {
            throw ModelError(ModelErrc::NonFiniteActivation, e.what());
        }
        throw;
    }
}

} // namespace

Var encode_on(Tape& tape, const BoundModel& m, std::span<const double> xs, std::span<const double> ys)
{
    if (xs.size() != ys.size() || xs.empty()) {
        throw ModelError(ModelErrc::ShapeMismatch, "encode needs equal, non-zero numbers of xs and ys");
    }
    const ModelConfig& c = m.genome->config();
    const Index ix(c);
    const std::size_t n = xs.size();
    Tensor points({2, n});
    for (std::size_t i = 0; i < n; ++i) {
        points.at(0, i) = squash(xs[i]);
        points.at(1, i) = squash(ys[i]);
    }
    return guard_activations([&] {
        Var h = tape.constant(std::move(points));
        for (std::size_t i = 0; i < ix.n_conv; ++i) {
            h = gelu(conv1d(h, m.weights[ix.conv0 + i], m.biases[ix.conv0 + i]));
        }
        Var pooled = reshape(max_over_set(h), {1, c.encoder_channels.back()});
        return linear(m, ix.fc, pooled);
    });
}

Var decode_on(Tape& /*tape*/, const BoundModel& m, Var embedding, std::span<const int> inputs, bool training, Rng* rng)
{
    const ModelConfig& c = m.genome->config();
    const Index ix(c);
    const std::size_t positions = inputs.size() + 1;
    if (positions > c.max_seq) {
        throw ModelError(ModelErrc::SequenceTooLong, std::to_string(positions) + " positions exceed max_seq " +
                                                         std::to_string(c.max_seq));
    }
    if (training && c.dropout_p > 0.0 && rng == nullptr) {
        throw std::invalid_argument("training with dropout needs an rng");
    }
    Rng unused(0);
    Rng& r = rng ? *rng : unused;
    const double p = training ? c.dropout_p : 0.0;
    const std::size_t dh = c.d_model / c.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    return guard_activations([&] {
        Var x = embedding;
        if (!inputs.empty()) {
            const std::vector<Var> parts{embedding, gather_rows(m.weights[ix.tok], inputs)};
            x = concat(parts, 0);
        }
        x = add(x, slice(m.weights[ix.pos], 0, 0, positions));

        for (std::size_t b = 0; b < c.n_blocks; ++b) {
            const std::size_t base = ix.block0 + b * Index::kPerBlock;
            Var q = linear(m, base + 0, x);
            Var k = linear(m, base + 1, x);
            Var v = linear(m, base + 2, x);
            std::vector<Var> heads;
            heads.reserve(c.n_heads);
            for (std::size_t h = 0; h < c.n_heads; ++h) {
                Var qh = slice(q, 1, h * dh, (h + 1) * dh);
                Var kh = slice(k, 1, h * dh, (h + 1) * dh);
                Var vh = slice(v, 1, h * dh, (h + 1) * dh);
                Var att = softmax(causal_mask(scale(matmul(qh, transpose(kh)), inv_sqrt)));
                heads.push_back(matmul(att, vh));
            }
            Var attn = heads.size() == 1 ? heads[0] : concat(heads, 1);
            attn = dropout(linear(m, base + 3, attn), p, training, r);
            x = add(x, attn);

            Var hidden = gelu(linear(m, base + 4, x));
            Var out = dropout(linear(m, base + 5, hidden), p, training, r);
            x = add(x, out);
        }
        return linear(m, ix.head, x);
    });
}

Var forward_logits_on(Tape& tape, const BoundModel& m, std::span<const double> xs, std::span<const double> ys,
                      std::span<const int> target, bool training, Rng* rng)
{
    if (target.empty()) {
        throw ModelError(ModelErrc::ShapeMismatch, "empty target sequence");
    }
    if (target.size() > m.genome->config().max_seq) {
        throw ModelError(ModelErrc::SequenceTooLong, "target of " + std::to_string(target.size()) +
                                                         " tokens exceeds max_seq");
    }
    Var emb = encode_on(tape, m, xs, ys);
    return decode_on(tape, m, emb, target.first(target.size() - 1), training, rng);
}

Embedding encode(const NetworkGenome& g, std::span<const double> xs, std::span<const double> ys)
{
    Tape tape(false);
    const BoundModel m = bind(tape, g, false);
    return Embedding{encode_on(tape, m, xs, ys).value()};
}

Tensor forward_logits(const NetworkGenome& g, std::span<const double> xs, std::span<const double> ys,
                      std::span<const int> target)
{
    Tape tape(false);
    const BoundModel m = bind(tape, g, false);
    return forward_logits_on(tape, m, xs, ys, target, false, nullptr).value();
}

TokenSequence decode_greedy(const NetworkGenome& g, std::span<const double> xs, std::span<const double> ys,
                            std::size_t max_steps)
{
    const std::size_t limit = std::min(max_steps, g.config().max_seq);
    TokenSequence out{kStart};
    Tensor emb = encode(g, xs, ys).vector;
    while (out.size() < limit) {
        Tape tape(false);
        const BoundModel m = bind(tape, g, false);
        Var e = tape.view(emb, false);
        const Tensor& logits = decode_on(tape, m, e, out, false, nullptr).value();
        const std::size_t last = logits.dim(0) - 1;
        const std::size_t vocab = logits.dim(1);
        const double* row = logits.data().data() + last * vocab;
        const int next = static_cast<int>(std::max_element(row, row + vocab) - row);
        out.push_back(next);
        if (next == kEnd) {
            break;
        }
    }
    return out;
}

// -------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'S', 'R', 'N', 'E', 'C', 'K', 'P', 'T'};

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            u8(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            u8(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string_view s) : s_(s) {}
    std::uint8_t u8()
    {
        need(1);
        return static_cast<std::uint8_t>(s_[pos_++]);
    }
    std::uint32_t u32()
    {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        }
        return v;
    }
    std::uint64_t u64()
    {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        }
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view bytes(std::size_t n)
    {
        need(n);
        auto out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    bool done() const { return pos_ == s_.size(); }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > s_.size()) {
            throw ModelError(ModelErrc::BadCheckpoint, "checkpoint truncated");
        }
    }
    std::string_view s_;
    std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const Tensor& t)
{
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
        w.u64(d);
    }
    for (double v : t.data()) {
        w.f64(v);
    }
}

Tensor read_tensor(Reader& r)
{
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) {
        throw ModelError(ModelErrc::BadCheckpoint, "bad tensor rank in checkpoint");
    }
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = r.u64();
        if (d == 0 || d > (std::size_t{1} << 28)) {
            throw ModelError(ModelErrc::BadCheckpoint, "bad tensor dimension in checkpoint");
        }
        n *= d;
    }
    std::vector<double> data(n);
    for (auto& v : data) {
        v = r.f64();
    }
    return Tensor(std::move(shape), std::move(data));
}

} // namespace

std::string genome_to_bytes(const NetworkGenome& g)
{
    Writer w;
    w.bytes(std::string_view(kMagic, sizeof kMagic));
    w.u32(kCheckpointVersion);
    const ModelConfig& c = g.config();
    w.u64(c.n_blocks);
    w.u64(c.n_heads);
    w.u64(c.d_model);
    w.u64(c.d_ff);
    w.u64(c.max_seq);
    w.u64(c.vocab);
    w.f64(c.dropout_p);
    w.u32(static_cast<std::uint32_t>(c.encoder_channels.size()));
    for (std::size_t ch : c.encoder_channels) {
        w.u64(ch);
    }
    w.u32(static_cast<std::uint32_t>(g.layer_count()));
    for (const Layer& l : g.layers()) {
        w.u32(static_cast<std::uint32_t>(l.name.size()));
        w.bytes(l.name);
        write_tensor(w, *l.weights);
        w.u8(l.bias ? 1 : 0);
        if (l.bias) {
            write_tensor(w, *l.bias);
        }
    }
    return w.take();
}

NetworkGenome genome_from_bytes(std::string_view bytes)
{
    Reader r(bytes);
    if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
        throw ModelError(ModelErrc::BadCheckpoint, "not a checkpoint (bad magic)");
    }
    if (r.u32() != kCheckpointVersion) {
        throw ModelError(ModelErrc::BadCheckpoint, "unsupported checkpoint version");
    }
    ModelConfig c;
    c.n_blocks = r.u64();
    c.n_heads = r.u64();
    c.d_model = r.u64();
    c.d_ff = r.u64();
    c.max_seq = r.u64();
    c.vocab = r.u64();
    c.dropout_p = r.f64();
    c.encoder_channels.resize(r.u32());
    for (auto& ch : c.encoder_channels) {
        ch = r.u64();
    }
    try {
        c.validate();
    } catch (const ModelError& e) {
        throw ModelError(ModelErrc::BadCheckpoint, std::string("checkpoint config: ") + e.what());
    }
    const auto specs = layout(c);
    const std::uint32_t count = r.u32();
    if (count != specs.size()) {
        throw ModelError(ModelErrc::BadCheckpoint, "checkpoint layer count disagrees with its config");
    }
    std::vector<Layer> layers;
    for (const auto& spec : specs) {
        Layer l;
        l.name = std::string(r.bytes(r.u32()));
        Tensor w = read_tensor(r);
        if (l.name != spec.name || w.shape() != spec.weights) {
            throw ModelError(ModelErrc::BadCheckpoint, "checkpoint layer '" + l.name + "' does not match the layout");
        }
        l.weights = std::make_shared<const Tensor>(std::move(w));
        if (r.u8()) {
            Tensor b = read_tensor(r);
            if (b.shape() != Shape{spec.bias}) {
                throw ModelError(ModelErrc::BadCheckpoint, "checkpoint bias of '" + l.name + "' has wrong shape");
            }
            l.bias = std::make_shared<const Tensor>(std::move(b));
        } else if (spec.bias) {
            throw ModelError(ModelErrc::BadCheckpoint, "checkpoint layer '" + l.name + "' is missing its bias");
        }
        layers.push_back(std::move(l));
    }
    if (!r.done()) {
        throw ModelError(ModelErrc::BadCheckpoint, "trailing bytes after checkpoint");
    }
    return NetworkGenome(c, std::move(layers));
}

void save_checkpoint(const NetworkGenome& g, const std::filesystem::path& path, const json& sidecar)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    {
        std::ofstream f(path, std::ios::binary);
        const std::string bytes = genome_to_bytes(g);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) {
            throw ModelError(ModelErrc::BadCheckpoint, "cannot write " + path.string());
        }
    }
    json side = sidecar;
    side["format_version"] = kCheckpointVersion;
    side["config"] = to_json(g.config());
    std::ofstream s(std::filesystem::path(path).concat(".json"), std::ios::binary);
    s << side.dump(2) << '\n';
}

NetworkGenome load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ModelError(ModelErrc::BadCheckpoint, "cannot read " + path.string());
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return genome_from_bytes(ss.str());
}

} // namespace srne
