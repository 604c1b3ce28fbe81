#include "srne/expr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace srne {

int arity(Kind k)
{
    switch (k) {
    case Kind::Add:
    case Kind::Mul:
    case Kind::Pow:
        return 2;
    case Kind::Sin:
    case Kind::Cos:
    case Kind::Exp:
    case Kind::Log:
        return 1;
    case Kind::VarX:
    case Kind::Const:
        return 0;
    }
    return 0;
}

std::string_view name(const Primitive& p)
{
    switch (p.kind) {
    case Kind::Add: return "add";
    case Kind::Mul: return "mul";
    case Kind::Pow: return "pow";
    case Kind::Sin: return "sin";
    case Kind::Cos: return "cos";
    case Kind::Exp: return "exp";
    case Kind::Log: return "log";
    case Kind::VarX: return "x";
    case Kind::Const:
        switch (p.value) {
        case 2: return "2";
        case 3: return "3";
        case 4: return "4";
        default: return "?";
        }
    }
    return "?";
}

Primitive primitive_from_name(std::string_view s)
{
    static const std::array<Primitive, 11> all{
        Primitive::add(), Primitive::mul(), Primitive::pow(), Primitive::sin(),
        Primitive::cos(), Primitive::exp(), Primitive::log(), Primitive::x(),
        Primitive::constant(2), Primitive::constant(3), Primitive::constant(4)};
    for (const auto& p : all) {
        if (name(p) == s) {
            return p;
        }
    }
    throw ExprError(ExprErrc::UnknownName, "unknown primitive name '" + std::string(s) + "'");
}

std::string_view to_string(ExprErrc e)
{
    switch (e) {
    case ExprErrc::Empty: return "Empty";
    case ExprErrc::IncompleteTree: return "IncompleteTree";
    case ExprErrc::TrailingPrimitives: return "TrailingPrimitives";
    case ExprErrc::LengthExceeded: return "LengthExceeded";
    case ExprErrc::MisplacedConst: return "MisplacedConst";
    case ExprErrc::InvalidExponent: return "InvalidExponent";
    case ExprErrc::UnknownToken: return "UnknownToken";
    case ExprErrc::UnknownName: return "UnknownName";
    }
    return "?";
}

std::size_t Tree::size() const
{
    std::size_t n = 1;
    for (const auto& c : children) {
        n += c.size();
    }
    return n;
}

namespace {

Tree build_tree(std::span<const Primitive> prims, std::size_t& pos)
{
    Tree t{prims[pos++], {}};
    const int n = arity(t.prim);
    t.children.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        t.children.push_back(build_tree(prims, pos));
    }
    return t;
}

void flatten_into(const Tree& t, std::vector<Primitive>& out)
{
    out.push_back(t.prim);
    for (const auto& c : t.children) {
        flatten_into(c, out);
    }
}

// Const only as the exponent of pow; the exponent is a Const or x.
void check_operands(const Tree& t, bool exponent_slot)
{
    if (t.prim.kind == Kind::Const) {
        if (!exponent_slot) {
            throw ExprError(ExprErrc::MisplacedConst, "constant outside a pow exponent");
        }
        if (t.prim.value < 2 || t.prim.value > 4) {
            throw ExprError(ExprErrc::MisplacedConst, "pow exponent constant outside 2..4");
        }
        return;
    }
    if (t.prim.kind == Kind::Pow) {
        const auto& e = t.children[1].prim.kind;
        if (e != Kind::Const && e != Kind::VarX) {
            throw ExprError(ExprErrc::InvalidExponent, "pow exponent must be a constant or x");
        }
        check_operands(t.children[0], false);
        check_operands(t.children[1], true);
        return;
    }
    for (const auto& c : t.children) {
        check_operands(c, false);
    }
}

} // namespace

Expression parse_preorder(std::span<const Primitive> prims)
{
    if (prims.empty()) {
        throw ExprError(ExprErrc::Empty, "empty primitive list");
    }
    if (prims.size() > kMaxLength) {
        throw ExprError(ExprErrc::LengthExceeded,
                        "expression has " + std::to_string(prims.size()) + " primitives (max 30)");
    }
    int pending = 1;
    for (std::size_t i = 0; i < prims.size(); ++i) {
        if (pending == 0) {
            throw ExprError(ExprErrc::TrailingPrimitives,
                            "tree complete at position " + std::to_string(i));
        }
        pending += arity(prims[i]) - 1;
    }
    if (pending != 0) {
        throw ExprError(ExprErrc::IncompleteTree,
                        std::to_string(pending) + " operand(s) missing");
    }
    std::size_t pos = 0;
    check_operands(build_tree(prims, pos), false);
    return Expression(std::vector<Primitive>(prims.begin(), prims.end()));
}

Tree Expression::tree() const
{
    std::size_t pos = 0;
    return build_tree(prims_, pos);
}

std::vector<Primitive> flatten(const Tree& t)
{
    std::vector<Primitive> out;
    flatten_into(t, out);
    return out;
}

Expression from_tree(const Tree& t)
{
    const auto prims = flatten(t);
    return parse_preorder(prims);
}

// ---------------------------------------------------------------- tokens

int token_of(const Primitive& p)
{
    switch (p.kind) {
    case Kind::Add: return 3;
    case Kind::Mul: return 4;
    case Kind::Pow: return 5;
    case Kind::Sin: return 6;
    case Kind::Cos: return 7;
    case Kind::Exp: return 8;
    case Kind::Log: return 9;
    case Kind::VarX: return 10;
    case Kind::Const: return 9 + p.value; // 11, 12, 13
    }
    return -1;
}

Primitive primitive_of(int token)
{
    static const std::array<Primitive, 11> table{
        Primitive::add(), Primitive::mul(), Primitive::pow(), Primitive::sin(),
        Primitive::cos(), Primitive::exp(), Primitive::log(), Primitive::x(),
        Primitive::constant(2), Primitive::constant(3), Primitive::constant(4)};
    if (token < 3 || token >= kVocabSize) {
        throw ExprError(ExprErrc::UnknownToken, "token " + std::to_string(token) + " is not a primitive");
    }
    return table[static_cast<std::size_t>(token - 3)];
}

TokenSequence tokenize(const Expression& e)
{
    TokenSequence out;
    out.reserve(e.length() + 2);
    out.push_back(kStart);
    for (const auto& p : e.preorder()) {
        out.push_back(token_of(p));
    }
    out.push_back(kEnd);
    return out;
}

Expression detokenize(std::span<const int> tokens)
{
    std::size_t i = 0;
    if (!tokens.empty() && tokens[0] == kStart) {
        i = 1;
    }
    std::vector<Primitive> prims;
    for (; i < tokens.size(); ++i) {
        const int t = tokens[i];
        if (t == kEnd || t == kPad) {
            break;
        }
        prims.push_back(primitive_of(t));
        if (prims.size() > kMaxLength) {
            break; // parse_preorder reports LengthExceeded
        }
    }
    return parse_preorder(prims);
}

// ------------------------------------------------------------ evaluation

namespace {

struct Evaluator {
    std::span<const Primitive> prims;
    double x;
    std::size_t pos = 0;
    bool finite = true;

    double note(double v)
    {
        if (!std::isfinite(v)) {
            finite = false;
        }
        return v;
    }

    double run()
    {
        const Primitive p = prims[pos++];
        switch (p.kind) {
        case Kind::VarX: return x;
        case Kind::Const: return static_cast<double>(p.value);
        case Kind::Sin: return note(std::sin(run()));
        case Kind::Cos: return note(std::cos(run()));
        case Kind::Exp: return note(std::exp(run()));
        case Kind::Log: {
            const double a = run();
            if (a <= 0.0) {
                finite = false;
                return std::numeric_limits<double>::quiet_NaN();
            }
            return note(std::log(a));
        }
        case Kind::Add: {
            const double a = run();
            const double b = run();
            return note(a + b);
        }
        case Kind::Mul: {
            const double a = run();
            const double b = run();
            return note(a * b);
        }
        case Kind::Pow: {
            const double base = run();
            const Primitive ex = prims[pos];
            if (ex.kind == Kind::Const) {
                ++pos;
                double r = base;
                for (int k = 1; k < ex.value; ++k) {
                    r *= base;
                }
                return note(r);
            }
            return note(std::pow(base, run()));
        }
        }
        return 0.0;
    }
};

} // namespace

EvalResult evaluate(const Expression& e, double x)
{
    Evaluator ev{e.preorder(), x};
    const double v = ev.run();
    return {v, ev.finite && std::isfinite(v)};
}

// -------------------------------------------------------- simplification

namespace {

std::string key_of(const Tree& t)
{
    std::string k;
    for (const auto& p : flatten(t)) {
        if (!k.empty()) {
            k += ' ';
        }
        k += name(p);
    }
    return k;
}

void collect_chain(Tree&& t, Kind op, std::vector<Tree>& out)
{
    if (t.prim.kind == op) {
        for (auto& c : t.children) {
            collect_chain(std::move(c), op, out);
        }
    } else {
        out.push_back(std::move(t));
    }
}

Tree make_binary(Kind op, Tree a, Tree b)
{
    Tree t{Primitive{op, 0}, {}};
    t.children.push_back(std::move(a));
    t.children.push_back(std::move(b));
    return t;
}

Tree power_of(const Tree& base, int k)
{
    return make_binary(Kind::Pow, base, Tree{Primitive::constant(k), {}});
}

Tree canonical_once(const Tree& in)
{
    Tree t{in.prim, {}};
    for (const auto& c : in.children) {
        t.children.push_back(canonical_once(c));
    }
    const Kind op = t.prim.kind;
    if (op != Kind::Add && op != Kind::Mul) {
        return t;
    }

    std::vector<Tree> operands;
    collect_chain(std::move(t), op, operands);

    std::vector<std::pair<std::string, Tree>> keyed;
    keyed.reserve(operands.size());
    for (auto& o : operands) {
        keyed.emplace_back(key_of(o), std::move(o));
    }
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    if (op == Kind::Mul) {
        // f*f*...*f (m copies) -> pow(f, k) pieces with k <= 4.
        std::vector<std::pair<std::string, Tree>> merged;
        for (std::size_t i = 0; i < keyed.size();) {
            std::size_t j = i;
            while (j < keyed.size() && keyed[j].first == keyed[i].first) {
                ++j;
            }
            std::size_t m = j - i;
            while (m > 0) {
                const std::size_t k = std::min<std::size_t>(m, 4);
                Tree piece = k == 1 ? keyed[i].second : power_of(keyed[i].second, static_cast<int>(k));
                merged.emplace_back(key_of(piece), std::move(piece));
                m -= k;
            }
            i = j;
        }
        std::stable_sort(merged.begin(), merged.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        keyed = std::move(merged);
    }

    // Right-nested chain: op(a0, op(a1, ... op(an-2, an-1)))
    Tree acc = std::move(keyed.back().second);
    for (std::size_t i = keyed.size() - 1; i-- > 0;) {
        acc = make_binary(op, std::move(keyed[i].second), std::move(acc));
    }
    return acc;
}

} // namespace

Expression simplify(const Expression& e)
{
    Tree cur = e.tree();
    for (;;) {
        Tree next = canonical_once(cur);
        if (next == cur) {
            break;
        }
        cur = std::move(next);
    }
    return from_tree(cur);
}

// ------------------------------------------------------ tree edit distance

namespace {

struct PostorderTree {
    std::vector<Primitive> labels; // postorder
    std::vector<std::size_t> leftmost; // leftmost leaf descendant (postorder index)
    std::vector<std::size_t> keyroots;
};

std::size_t index_postorder(const Tree& t, PostorderTree& out)
{
    std::size_t first_leaf = SIZE_MAX;
    for (const auto& c : t.children) {
        const std::size_t lm = index_postorder(c, out);
        if (first_leaf == SIZE_MAX) {
            first_leaf = lm;
        }
    }
    const std::size_t self = out.labels.size();
    out.labels.push_back(t.prim);
    out.leftmost.push_back(first_leaf == SIZE_MAX ? self : first_leaf);
    return out.leftmost.back();
}

PostorderTree prepare(const Tree& t)
{
    PostorderTree p;
    index_postorder(t, p);
    const std::size_t n = p.labels.size();
    // keyroots: nodes with no later node sharing their leftmost leaf
    std::vector<bool> seen(n, false);
    for (std::size_t i = n; i-- > 0;) {
        if (!seen[p.leftmost[i]]) {
            p.keyroots.push_back(i);
            seen[p.leftmost[i]] = true;
        }
    }
    std::sort(p.keyroots.begin(), p.keyroots.end());
    return p;
}

} // namespace

std::size_t tree_edit_distance_raw(const Tree& a, const Tree& b)
{
    const PostorderTree A = prepare(a);
    const PostorderTree B = prepare(b);
    const std::size_t n = A.labels.size();
    const std::size_t m = B.labels.size();

    std::vector<std::size_t> td(n * m, 0);
    auto tree_dist = [&](std::size_t i, std::size_t j) -> std::size_t& { return td[i * m + j]; };

    std::vector<std::size_t> fd((n + 1) * (m + 1), 0);
    for (const std::size_t i : A.keyroots) {
        for (const std::size_t j : B.keyroots) {
            const std::size_t li = A.leftmost[i];
            const std::size_t lj = B.leftmost[j];
            const std::size_t rows = i - li + 2;
            const std::size_t cols = j - lj + 2;
            auto f = [&](std::size_t r, std::size_t c) -> std::size_t& { return fd[r * (m + 1) + c]; };
            f(0, 0) = 0;
            for (std::size_t r = 1; r < rows; ++r) {
                f(r, 0) = f(r - 1, 0) + 1;
            }
            for (std::size_t c = 1; c < cols; ++c) {
                f(0, c) = f(0, c - 1) + 1;
            }
            for (std::size_t r = 1; r < rows; ++r) {
                for (std::size_t c = 1; c < cols; ++c) {
                    const std::size_t x = li + r - 1;
                    const std::size_t y = lj + c - 1;
                    const std::size_t del = f(r - 1, c) + 1;
                    const std::size_t ins = f(r, c - 1) + 1;
                    if (A.leftmost[x] == li && B.leftmost[y] == lj) {
                        const std::size_t rel = f(r - 1, c - 1) + (A.labels[x] == B.labels[y] ? 0 : 1);
                        f(r, c) = std::min({del, ins, rel});
                        tree_dist(x, y) = f(r, c);
                    } else {
                        const std::size_t pr = A.leftmost[x] - li;
                        const std::size_t pc = B.leftmost[y] - lj;
                        f(r, c) = std::min({del, ins, f(pr, pc) + tree_dist(x, y)});
                    }
                }
            }
        }
    }
    return tree_dist(n - 1, m - 1);
}

std::size_t tree_edit_distance(const Expression& a, const Expression& b)
{
    return tree_edit_distance_raw(simplify(a).tree(), simplify(b).tree());
}

// --------------------------------------------------------------- rendering

namespace {

void infix(const Tree& t, std::string& out)
{
    switch (t.prim.kind) {
    case Kind::VarX:
    case Kind::Const:
        out += name(t.prim);
        return;
    case Kind::Sin:
    case Kind::Cos:
    case Kind::Exp:
    case Kind::Log:
        out += name(t.prim);
        out += '(';
        infix(t.children[0], out);
        out += ')';
        return;
    case Kind::Add:
    case Kind::Mul:
    case Kind::Pow: {
        const char sym = t.prim.kind == Kind::Add ? '+' : t.prim.kind == Kind::Mul ? '*' : '^';
        out += '(';
        infix(t.children[0], out);
        out += sym;
        infix(t.children[1], out);
        out += ')';
        return;
    }
    }
}

} // namespace

std::string to_infix(const Expression& e)
{
    std::string out;
    infix(e.tree(), out);
    return out;
}

std::vector<std::string> preorder_names(const Expression& e)
{
    std::vector<std::string> out;
    out.reserve(e.length());
    for (const auto& p : e.preorder()) {
        out.emplace_back(name(p));
    }
    return out;
}

std::string to_preorder_string(const Expression& e)
{
    std::string out;
    for (const auto& n : preorder_names(e)) {
        if (!out.empty()) {
            out += ' ';
        }
        out += n;
    }
    return out;
}

Expression from_preorder_names(std::span<const std::string> names)
{
    std::vector<Primitive> prims;
    prims.reserve(names.size());
    for (const auto& n : names) {
        prims.push_back(primitive_from_name(n));
    }
    return parse_preorder(prims);
}

} // namespace srne
