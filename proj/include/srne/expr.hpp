#pragma once

// Equation language: single-variable expressions over
// {sin, cos, exp, log, +, *, pow}, stored as pre-order primitive lists.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace srne {

enum class Kind : std::uint8_t { Add, Mul, Pow, Sin, Cos, Exp, Log, VarX, Const };

struct Primitive {
    Kind kind = Kind::VarX;
    int value = 0; // exponent in {2,3,4}; only meaningful for Const

    static constexpr Primitive add() { return {Kind::Add, 0}; }
    static constexpr Primitive mul() { return {Kind::Mul, 0}; }
    static constexpr Primitive pow() { return {Kind::Pow, 0}; }
    static constexpr Primitive sin() { return {Kind::Sin, 0}; }
    static constexpr Primitive cos() { return {Kind::Cos, 0}; }
    static constexpr Primitive exp() { return {Kind::Exp, 0}; }
    static constexpr Primitive log() { return {Kind::Log, 0}; }
    static constexpr Primitive x() { return {Kind::VarX, 0}; }
    static constexpr Primitive constant(int v) { return {Kind::Const, v}; }

    friend constexpr bool operator==(const Primitive& a, const Primitive& b)
    {
        return a.kind == b.kind && (a.kind != Kind::Const || a.value == b.value);
    }
};

int arity(Kind k);
inline int arity(const Primitive& p) { return arity(p.kind); }

/// Storage name: "add", "mul", "pow", "sin", "cos", "exp", "log", "x", "2", "3", "4".
std::string_view name(const Primitive& p);
Primitive primitive_from_name(std::string_view s);

inline constexpr std::size_t kMaxLength = 30;

enum class ExprErrc {
    Empty,
    IncompleteTree,
    TrailingPrimitives,
    LengthExceeded,
    MisplacedConst,
    InvalidExponent,
    UnknownToken,
    UnknownName,
};

std::string_view to_string(ExprErrc e);

class ExprError : public std::runtime_error {
public:
    ExprError(ExprErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExprErrc code() const noexcept { return code_; }

private:
    ExprErrc code_;
};

/// Tree view of an expression. Children are ordered left to right.
struct Tree {
    Primitive prim;
    std::vector<Tree> children;

    std::size_t size() const;
    friend bool operator==(const Tree&, const Tree&) = default;
};

/// A valid equation. Constructed only through parse_preorder (or the
/// helpers that call it), so every instance satisfies the grammar.
class Expression {
public:
    const std::vector<Primitive>& preorder() const noexcept { return prims_; }
    std::size_t length() const noexcept { return prims_.size(); }
    Tree tree() const;

    friend bool operator==(const Expression&, const Expression&) = default;

private:
    friend Expression parse_preorder(std::span<const Primitive>);
    explicit Expression(std::vector<Primitive> p) : prims_(std::move(p)) {}
    std::vector<Primitive> prims_;
};

Expression parse_preorder(std::span<const Primitive> prims);
Expression from_tree(const Tree& t);
std::vector<Primitive> flatten(const Tree& t);

// Token dictionary. Fixed order keeps checkpoints portable.
inline constexpr int kPad = 0;
inline constexpr int kStart = 1;
inline constexpr int kEnd = 2;
inline constexpr int kVocabSize = 14;

int token_of(const Primitive& p);
Primitive primitive_of(int token); // throws UnknownToken for specials / out of range

using TokenSequence = std::vector<int>;

TokenSequence tokenize(const Expression& e);
/// Strips START, cuts at the first END (or PAD), maps ids back and parses.
Expression detokenize(std::span<const int> tokens);

struct EvalResult {
    double value = 0.0;
    bool finite = true;
};

/// Total: never throws. Any non-finite intermediate marks the result.
EvalResult evaluate(const Expression& e, double x);

/// Canonical form: associative chains flattened, repeated factors folded into
/// integer powers, operands sorted by their pre-order key. Idempotent.
Expression simplify(const Expression& e);

/// Zhang-Shasha ordered tree edit distance (unit costs) between the
/// simplified forms of a and b.
std::size_t tree_edit_distance(const Expression& a, const Expression& b);
/// Same, without simplifying first.
std::size_t tree_edit_distance_raw(const Tree& a, const Tree& b);

/// Infix with explicit parentheses, e.g. "((x^2)+x)".
std::string to_infix(const Expression& e);
/// Space-separated primitive names.
std::string to_preorder_string(const Expression& e);
std::vector<std::string> preorder_names(const Expression& e);
Expression from_preorder_names(std::span<const std::string> names);

} // namespace srne
