#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles/ted_brute.hpp"
#include "srne/datagen.hpp"
#include "srne/expr.hpp"

using namespace srne;
using testing::E;

namespace {

ExprErrc parse_error(std::vector<Primitive> p)
{
    try {
        parse_preorder(p);
    } catch (const ExprError& e) {
        return e.code();
    }
    FAIL("expected a parse error");
    return ExprErrc::Empty;
}

ExprErrc detok_error(std::vector<int> t)
{
    try {
        detokenize(t);
    } catch (const ExprError& e) {
        return e.code();
    }
    FAIL("expected a detokenize error");
    return ExprErrc::Empty;
}

} // namespace

TEST_SUITE("expr") {

TEST_CASE("parse accepts complete trees")
{
    const Expression e = parse_preorder(std::vector{Primitive::add(), Primitive::pow(), Primitive::x(),
                                                    Primitive::constant(2), Primitive::x()});
    CHECK(e.length() == 5);
    CHECK(to_infix(e) == "((x^2)+x)");
    CHECK(parse_preorder(std::vector{Primitive::x()}).length() == 1);
    const Tree t = e.tree();
    CHECK(t.size() == 5);
    CHECK(from_tree(t) == e);
}

TEST_CASE("parse errors")
{
    CHECK(parse_error({}) == ExprErrc::Empty);
    CHECK(parse_error({Primitive::sin()}) == ExprErrc::IncompleteTree);
    CHECK(parse_error({Primitive::x(), Primitive::x()}) == ExprErrc::TrailingPrimitives);
    CHECK(parse_error({Primitive::constant(2)}) == ExprErrc::MisplacedConst);
    CHECK(parse_error({Primitive::pow(), Primitive::constant(2), Primitive::x()}) == ExprErrc::MisplacedConst);
    CHECK(parse_error({Primitive::pow(), Primitive::x(), Primitive::sin(), Primitive::x()}) ==
          ExprErrc::InvalidExponent);
    std::vector<Primitive> long_chain(15, Primitive::sin());
    long_chain.push_back(Primitive::x());
    CHECK_NOTHROW(parse_preorder(long_chain));
    std::vector<Primitive> too_long(30, Primitive::sin());
    too_long.push_back(Primitive::x());
    CHECK(parse_error(too_long) == ExprErrc::LengthExceeded);
}

TEST_CASE("pre-order pending counter ends at zero exactly at the last primitive")
{
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const Expression e = random_equation(rng);
        long pending = 1;
        const auto& p = e.preorder();
        for (std::size_t k = 0; k < p.size(); ++k) {
            pending += arity(p[k]) - 1;
            if (k + 1 < p.size()) {
                REQUIRE(pending >= 1);
            }
        }
        CHECK(pending == 0);
    }
}

TEST_CASE("token dictionary")
{
    CHECK(token_of(Primitive::add()) == 3);
    CHECK(token_of(Primitive::mul()) == 4);
    CHECK(token_of(Primitive::pow()) == 5);
    CHECK(token_of(Primitive::sin()) == 6);
    CHECK(token_of(Primitive::cos()) == 7);
    CHECK(token_of(Primitive::exp()) == 8);
    CHECK(token_of(Primitive::log()) == 9);
    CHECK(token_of(Primitive::x()) == 10);
    CHECK(token_of(Primitive::constant(2)) == 11);
    CHECK(token_of(Primitive::constant(3)) == 12);
    CHECK(token_of(Primitive::constant(4)) == 13);
    for (int t = 3; t < kVocabSize; ++t) {
        CHECK(token_of(primitive_of(t)) == t);
    }
    CHECK_THROWS_AS(primitive_of(kPad), ExprError);
    CHECK_THROWS_AS(primitive_of(kStart), ExprError);
    CHECK_THROWS_AS(primitive_of(kVocabSize), ExprError);
}

TEST_CASE("tokenize")
{
    CHECK(tokenize(E("x")) == TokenSequence{kStart, 10, kEnd});
    CHECK(tokenize(E("add pow x 2 x")) == TokenSequence{kStart, 3, 5, 10, 11, 10, kEnd});
    CHECK(detok_error({kStart, 3, kEnd}) == ExprErrc::IncompleteTree);
    CHECK(detok_error({kStart, 9999, kEnd}) == ExprErrc::UnknownToken);
    // everything at and after END is ignored
    CHECK(detokenize(TokenSequence{kStart, 10, kEnd, 3, 3, kPad}) == E("x"));
}

TEST_CASE("tokenize round trip")
{
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const Expression e = random_equation(rng);
        REQUIRE(detokenize(tokenize(e)) == e);
    }
}

TEST_CASE("preorder names round trip")
{
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        const Expression e = random_equation(rng);
        CHECK(from_preorder_names(preorder_names(e)) == e);
    }
    CHECK(to_preorder_string(E("add pow x 2 x")) == "add pow x 2 x");
}

TEST_CASE("evaluate")
{
    const auto r = evaluate(E("add pow x 3 add pow x 2 x"), 1.0);
    CHECK(r.finite);
    CHECK(r.value == 3.0);
    CHECK(evaluate(E("sin x"), 0.0).value == 0.0);
    CHECK_FALSE(evaluate(E("log x"), 0.0).finite);
    CHECK_FALSE(evaluate(E("log cos x"), 3.0).finite);
    CHECK_FALSE(evaluate(E("exp exp exp x"), 10.0).finite);
    CHECK(evaluate(E("pow x x"), 2.0).value == doctest::Approx(4.0));
    CHECK(evaluate(E("pow x 4"), 1.5).value == 1.5 * 1.5 * 1.5 * 1.5);
}

TEST_CASE("simplify")
{
    CHECK(simplify(E("add x pow x 2")) == simplify(E("add pow x 2 x")));
    CHECK(simplify(E("sin x")) == E("sin x"));
    CHECK(simplify(E("mul x x")) == E("pow x 2"));
    // no coefficients are invented
    CHECK(simplify(E("add x x")).length() == 3);
    CHECK(simplify(E("add x add sin x cos x")) == simplify(E("add add cos x x sin x")));
}

TEST_CASE("simplify is idempotent and preserves values")
{
    Rng rng(21);
    for (int i = 0; i < 1000; ++i) {
        const Expression e = random_equation(rng);
        const Expression s = simplify(e);
        REQUIRE(simplify(s) == s);
        if (i < 200) {
            const double x = rng.uniform(0.1, 4.0);
            const auto a = evaluate(e, x);
            const auto b = evaluate(s, x);
            if (a.finite && b.finite) {
                CHECK(std::abs(a.value - b.value) <= 1e-9 * std::max(1.0, std::abs(a.value)));
            }
        }
    }
}

TEST_CASE("tree edit distance examples")
{
    const Expression e = E("add x pow x 2");
    CHECK(tree_edit_distance(e, e) == 0);
    CHECK(tree_edit_distance(E("add x pow x 2"), E("add x pow x 3")) == 1);
    CHECK(tree_edit_distance(E("add x pow x 2"), E("add pow x 2 x")) == 0);
    CHECK(tree_edit_distance(E("x"), E("sin x")) == 1);
    CHECK(tree_edit_distance(E("sin x"), E("cos exp x")) == 2);
}

TEST_CASE("brute-force oracle on hand cases")
{
    CHECK(oracle::brute_force_ted(E("x").tree(), E("sin x").tree()) == 1);
    CHECK(oracle::brute_force_ted(E("add x pow x 2").tree(), E("add x pow x 3").tree()) == 1);
    // relabel sin to cos, delete add and one x
    CHECK(oracle::brute_force_ted(E("add sin x x").tree(), E("cos x").tree()) == 3);
}

TEST_CASE("Zhang-Shasha matches exhaustive search on small trees")
{
    GenParams p;
    p.max_len = 7;
    Rng rng(31);
    int compared = 0;
    for (int i = 0; i < 200; ++i) {
        const Expression a = random_equation(rng, p);
        const Expression b = random_equation(rng, p);
        CHECK(tree_edit_distance_raw(a.tree(), b.tree()) == oracle::brute_force_ted(a.tree(), b.tree()));
        const Tree sa = simplify(a).tree();
        const Tree sb = simplify(b).tree();
        if (sa.size() <= 7 && sb.size() <= 7) {
            CHECK(tree_edit_distance(a, b) == oracle::brute_force_ted(sa, sb));
            ++compared;
        }
    }
    CHECK(compared > 150);
}

TEST_CASE("tree edit distance is a metric on canonical forms")
{
    GenParams p;
    p.max_len = 7;
    Rng rng(41);
    for (int i = 0; i < 100; ++i) {
        const Expression a = random_equation(rng, p);
        const Expression b = random_equation(rng, p);
        const Expression c = random_equation(rng, p);
        const auto ab = tree_edit_distance(a, b);
        CHECK(ab == tree_edit_distance(b, a));
        CHECK((ab == 0) == (simplify(a) == simplify(b)));
        CHECK(tree_edit_distance(a, c) <= ab + tree_edit_distance(b, c));
    }
}

} // TEST_SUITE
