#include "srne/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace srne {

using nlohmann::json;

std::string_view to_string(CorpusKind k)
{
    switch (k) {
    case CorpusKind::Pretrain: return "pretrain";
    case CorpusKind::Evolve: return "evolve";
    case CorpusKind::Test: return "test";
    case CorpusKind::UnseenTest: return "unseen-test";
    }
    return "?";
}

CorpusKind corpus_kind_from_string(std::string_view s)
{
    for (auto k : {CorpusKind::Pretrain, CorpusKind::Evolve, CorpusKind::Test, CorpusKind::UnseenTest}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw std::invalid_argument("unknown corpus kind '" + std::string(s) + "'");
}

namespace {

constexpr std::array<Kind, 7> kOperators{Kind::Sin, Kind::Cos, Kind::Exp, Kind::Log,
                                         Kind::Add, Kind::Mul, Kind::Pow};

struct Grower {
    Rng& rng;
    const GenParams& params;
    std::vector<Primitive> out;
    bool overflow = false;

    void grow(int depth)
    {
        if (out.size() >= params.max_len) {
            overflow = true;
            return;
        }
        const double p_leaf = std::min(params.leaf_base + params.leaf_step * depth, params.leaf_max);
        if (rng.bernoulli(p_leaf)) {
            out.push_back(Primitive::x());
            return;
        }
        const Kind op = kOperators[rng.index(kOperators.size())];
        out.push_back(Primitive{op, 0});
        if (op == Kind::Pow) {
            grow(depth + 1);
            if (rng.bernoulli(params.exponent_var_prob)) {
                out.push_back(Primitive::x());
            } else {
                out.push_back(Primitive::constant(2 + static_cast<int>(rng.index(3))));
            }
            return;
        }
        for (int i = 0; i < arity(op) && !overflow; ++i) {
            grow(depth + 1);
        }
    }
};

} // namespace

Expression random_equation(Rng& rng, const GenParams& params)
{
    constexpr int kMaxRejections = 1000;
    for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
        Grower g{rng, params, {}};
        g.grow(0);
        if (g.overflow || g.out.size() > params.max_len) {
            continue;
        }
        return parse_preorder(g.out);
    }
    throw DatagenError(DatagenErrc::GenerationExhausted,
                       "no equation within " + std::to_string(params.max_len) + " primitives after 1000 draws");
}

DataEquationPair sample_pair(Rng& rng, const Expression& e, const GenParams& params)
{
    constexpr int kMaxDraws = 100;
    std::vector<double> xs(params.n_points);
    std::vector<double> ys(params.n_points);
    for (int draw = 0; draw < kMaxDraws; ++draw) {
        bool ok = true;
        for (std::size_t i = 0; i < params.n_points; ++i) {
            xs[i] = rng.uniform(params.x_lo, params.x_hi);
            const EvalResult r = evaluate(e, xs[i]);
            if (!r.finite || std::abs(r.value) > params.y_cap) {
                ok = false;
                break;
            }
            ys[i] = r.value;
        }
        if (ok) {
            return {e, xs, ys, tokenize(e)};
        }
    }
    throw DatagenError(DatagenErrc::DomainRejected, "no finite sample for " + to_infix(e));
}

std::vector<Expression> benchmark_equations()
{
    using P = Primitive;
    const std::vector<std::vector<Primitive>> lists{
        // x^3 + x^2 + x
        {P::add(), P::pow(), P::x(), P::constant(3), P::add(), P::pow(), P::x(), P::constant(2), P::x()},
        // x^4 + x^3 + x^2 + x
        {P::add(), P::pow(), P::x(), P::constant(4), P::add(), P::pow(), P::x(), P::constant(3),
         P::add(), P::pow(), P::x(), P::constant(2), P::x()},
        // sin(x) + sin(x + x^2)
        {P::add(), P::sin(), P::x(), P::sin(), P::add(), P::x(), P::pow(), P::x(), P::constant(2)},
        // sin(x * exp(x))
        {P::sin(), P::mul(), P::x(), P::exp(), P::x()},
        // x + log(x^4)
        {P::add(), P::x(), P::log(), P::pow(), P::x(), P::constant(4)},
    };
    std::vector<Expression> out;
    out.reserve(lists.size());
    for (const auto& l : lists) {
        out.push_back(parse_preorder(l));
    }
    return out;
}

Corpus benchmark_corpus(std::uint64_t seed, bool unseen, const GenParams& params)
{
    constexpr std::size_t kSamplesPerEquation = 20;
    constexpr std::size_t kExcluded = 3; // sin(x*exp(x)) was in the pretraining pool
    Corpus c;
    c.kind = unseen ? CorpusKind::UnseenTest : CorpusKind::Test;
    c.seed = seed;
    c.params = params;
    Rng rng(seed);
    const auto eqs = benchmark_equations();
    for (std::size_t k = 0; k < eqs.size(); ++k) {
        if (unseen && k == kExcluded) {
            continue;
        }
        for (std::size_t s = 0; s < kSamplesPerEquation; ++s) {
            c.pairs.push_back(sample_pair(rng, eqs[k], params));
        }
    }
    return c;
}

Corpus build_corpus(std::uint64_t seed, CorpusKind kind, std::size_t size, const GenParams& params)
{
    if (kind == CorpusKind::Test || kind == CorpusKind::UnseenTest) {
        return benchmark_corpus(seed, kind == CorpusKind::UnseenTest, params);
    }
    if (size == 0) {
        throw DatagenError(DatagenErrc::BadSize, "corpus size must be at least 1");
    }
    Corpus c;
    c.kind = kind;
    c.seed = seed;
    c.params = params;
    c.pairs.reserve(size);
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(kind)));
    while (c.pairs.size() < size) {
        const Expression e = random_equation(rng, params);
        try {
            c.pairs.push_back(sample_pair(rng, e, params));
        } catch (const DatagenError& err) {
            if (err.code() != DatagenErrc::DomainRejected) {
                throw;
            }
        }
    }
    return c;
}

void validate_pair(const DataEquationPair& p, const GenParams& params)
{
    if (p.xs.size() != p.ys.size() || p.xs.size() != params.n_points) {
        throw DatagenError(DatagenErrc::BadFile, "pair has mismatched point counts");
    }
    if (p.tokens != tokenize(p.equation)) {
        throw DatagenError(DatagenErrc::BadFile, "stored tokens disagree with the equation");
    }
    for (std::size_t i = 0; i < p.xs.size(); ++i) {
        const EvalResult r = evaluate(p.equation, p.xs[i]);
        if (!r.finite || !std::isfinite(p.ys[i]) || r.value != p.ys[i]) {
            throw DatagenError(DatagenErrc::BadFile, "stored y disagrees with evaluation of " + to_infix(p.equation));
        }
    }
}

// -------------------------------------------------------------------- files

json to_json(const GenParams& p)
{
    return json{{"max_len", p.max_len},     {"n_points", p.n_points},   {"x_lo", p.x_lo},
                {"x_hi", p.x_hi},           {"y_cap", p.y_cap},         {"leaf_base", p.leaf_base},
                {"leaf_step", p.leaf_step}, {"leaf_max", p.leaf_max},   {"exponent_var_prob", p.exponent_var_prob}};
}

GenParams gen_params_from_json(const json& j)
{
    GenParams p;
    p.max_len = j.at("max_len").get<std::size_t>();
    p.n_points = j.at("n_points").get<std::size_t>();
    p.x_lo = j.at("x_lo").get<double>();
    p.x_hi = j.at("x_hi").get<double>();
    p.y_cap = j.at("y_cap").get<double>();
    p.leaf_base = j.at("leaf_base").get<double>();
    p.leaf_step = j.at("leaf_step").get<double>();
    p.leaf_max = j.at("leaf_max").get<double>();
    p.exponent_var_prob = j.at("exponent_var_prob").get<double>();
    return p;
}

std::string corpus_to_jsonl(const Corpus& c)
{
    std::string out;
    json header{{"format_version", kCorpusFormatVersion},
                {"kind", std::string(to_string(c.kind))},
                {"seed", c.seed},
                {"size", c.pairs.size()},
                {"params", to_json(c.params)}};
    out += header.dump();
    out += '\n';
    for (const auto& p : c.pairs) {
        json rec{{"preorder", preorder_names(p.equation)}, {"tokens", p.tokens}, {"xs", p.xs}, {"ys", p.ys}};
        out += rec.dump();
        out += '\n';
    }
    return out;
}

Corpus corpus_from_jsonl(std::string_view text)
{
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) {
        throw DatagenError(DatagenErrc::BadFile, "corpus file is empty");
    }
    Corpus c;
    try {
        const json header = json::parse(line);
        if (header.at("format_version").get<int>() != kCorpusFormatVersion) {
            throw DatagenError(DatagenErrc::BadFile, "unsupported corpus format version");
        }
        c.kind = corpus_kind_from_string(header.at("kind").get<std::string>());
        c.seed = header.at("seed").get<std::uint64_t>();
        c.params = gen_params_from_json(header.at("params"));
        const auto expected = header.at("size").get<std::size_t>();
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            const json rec = json::parse(line);
            const auto names = rec.at("preorder").get<std::vector<std::string>>();
            DataEquationPair p{from_preorder_names(names), rec.at("xs").get<std::vector<double>>(),
                               rec.at("ys").get<std::vector<double>>(), rec.at("tokens").get<TokenSequence>()};
            validate_pair(p, c.params);
            c.pairs.push_back(std::move(p));
        }
        if (c.pairs.size() != expected) {
            throw DatagenError(DatagenErrc::BadFile, "corpus header size disagrees with record count");
        }
    } catch (const json::exception& e) {
        throw DatagenError(DatagenErrc::BadFile, std::string("malformed corpus file: ") + e.what());
    } catch (const ExprError& e) {
        throw DatagenError(DatagenErrc::BadFile, std::string("invalid equation in corpus: ") + e.what());
    }
    return c;
}

void save_corpus(const Corpus& c, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    f << corpus_to_jsonl(c);
    if (!f) {
        throw DatagenError(DatagenErrc::BadFile, "cannot write " + path.string());
    }
}

Corpus load_corpus(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DatagenError(DatagenErrc::BadFile, "cannot read " + path.string());
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return corpus_from_jsonl(ss.str());
}

} // namespace srne
