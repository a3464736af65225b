#include <doctest.h>

#include "riskex/expr.hpp"

using namespace riskex;

namespace {

MapEnv env_with(std::initializer_list<std::pair<std::string, Value>> vals) {
    MapEnv env;
    for (const auto& [k, v] : vals) env.set(k, v);
    return env;
}

} // namespace

TEST_CASE("numeric evaluation") {
    auto env = env_with({{"rate", Value{3.0}}});
    CHECK(eval_number(Expression::parse("2*rate + 1"), env) == doctest::Approx(7.0));
    CHECK(eval_number(Expression::parse("-rate"), env) == doctest::Approx(-3.0));
    CHECK(eval_number(Expression::parse("(1 + 2) * 4 - 6 / 3"), env) == doctest::Approx(10.0));
    CHECK(eval_number(Expression::parse("1.5e2"), env) == doctest::Approx(150.0));
}

TEST_CASE("comparisons and boolean connectives") {
    auto env = env_with({{"level", Value{0.0}}, {"x", Value{5.0}}});
    CHECK(eval_bool(Expression::parse("level <= 0"), env));
    CHECK_FALSE(eval_bool(Expression::parse("level < 0"), env));
    CHECK(eval_bool(Expression::parse("x > 1 and x < 10"), env));
    CHECK(eval_bool(Expression::parse("x > 9 or x < 6"), env));
    CHECK(eval_bool(Expression::parse("not (x == 4)"), env));
    CHECK(eval_bool(Expression::parse("x != 4 && x >= 5 || false"), env));
    CHECK(eval_bool(Expression::parse("true"), env));
}

TEST_CASE("component state tests") {
    auto env = env_with({{"pump", Value{StateToken{"RUNNING"}}}});
    CHECK_FALSE(eval_bool(Expression::parse("pump == FAILED"), env));
    CHECK(eval_bool(Expression::parse("pump == RUNNING"), env));
    CHECK(eval_bool(Expression::parse("pump != FAILED"), env));
    // state literal may appear on the left as well
    CHECK(eval_bool(Expression::parse("RUNNING == pump"), env));
}

TEST_CASE("step") {
    auto env = env_with({{"level", Value{7.0}}});
    CHECK(eval_number(Expression::parse("step(level > 5)"), env) == 1.0);
    CHECK(eval_number(Expression::parse("step(level > 9)"), env) == 0.0);
    CHECK(eval_number(Expression::parse("1 + 2*step(level - 5)"), env) == 3.0);
}

TEST_CASE("evaluation errors") {
    auto env = env_with({{"x", Value{1.0}}, {"pump", Value{StateToken{"ON"}}}});
    CHECK_THROWS_AS(eval_expression(Expression::parse("x / 0"), env), EvalError);
    CHECK_THROWS_AS(eval_expression(Expression::parse("y + 1"), env), EvalError);
    CHECK_THROWS_AS(eval_expression(Expression::parse("x and true"), env), EvalError);
    CHECK_THROWS_AS(eval_expression(Expression::parse("pump + 1"), env), EvalError);
    CHECK_THROWS_AS(eval_expression(Expression::parse("x == true"), env), EvalError);
}

TEST_CASE("purity: repeated evaluation gives identical results") {
    auto e = Expression::parse("2*rate + 1 > 6 and not (rate == 0)");
    auto env = env_with({{"rate", Value{3.0}}});
    auto v1 = eval_expression(e, env);
    auto v2 = eval_expression(e, env);
    CHECK(v1 == v2);
    CHECK(e.source() == "2*rate + 1 > 6 and not (rate == 0)");
}

TEST_CASE("parse errors carry a column") {
    CHECK_THROWS_WITH_AS(Expression::parse("1 +"), doctest::Contains("col"), ParseError);
    CHECK_THROWS_AS(Expression::parse("a = b"), ParseError);
    CHECK_THROWS_AS(Expression::parse("(1 + 2"), ParseError);
    CHECK_THROWS_AS(Expression::parse("1 2"), ParseError);
    CHECK_THROWS_AS(Expression::parse(""), ParseError);
    CHECK_THROWS_AS(Expression::parse("x # y"), ParseError);
}

TEST_CASE("type checking") {
    TypeEnv tenv;
    tenv.names["level"] = ExprType::Number;
    tenv.names["pump"] = ExprType::State;
    tenv.component_states["pump"] = {"RUNNING", "FAILED"};

    std::vector<std::string> issues;
    CHECK(type_check(Expression::parse("level + 1"), tenv, issues) == ExprType::Number);
    CHECK(type_check(Expression::parse("pump == FAILED"), tenv, issues) == ExprType::Boolean);
    CHECK(type_check(Expression::parse("level <= 0 or pump == RUNNING"), tenv, issues) ==
          ExprType::Boolean);
    CHECK(issues.empty());

    type_check(Expression::parse("pump == NOT_A_STATE"), tenv, issues);
    CHECK(issues.size() == 1);
    issues.clear();
    type_check(Expression::parse("level and true"), tenv, issues);
    CHECK_FALSE(issues.empty());
    issues.clear();
    type_check(Expression::parse("ghost + 1"), tenv, issues);
    CHECK_FALSE(issues.empty());
}

TEST_CASE("referenced names") {
    auto e = Expression::parse("a + b > 2 and pump == FAILED");
    auto names = e.referenced_names();
    CHECK(names.size() == 4); // a, b, pump, FAILED (literal resolution is the caller's)
}
