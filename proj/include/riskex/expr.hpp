#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "riskex/errors.hpp"

namespace riskex {

/// Runtime value of an expression: a real number, a boolean, or a component
/// state token (the current state name of a component).
struct StateToken {
    std::string name;
    bool operator==(const StateToken&) const = default;
};
using Value = std::variant<double, bool, StateToken>;

enum class BinOp { Or, And, Lt, Le, Gt, Ge, Eq, Ne, Add, Sub, Mul, Div };
enum class UnOp { Not, Neg };

struct ExprNode;
using ExprNodePtr = std::unique_ptr<ExprNode>;

struct ExprNode {
    enum class Kind { Number, Boolean, Ident, Unary, Binary, Step };
    Kind kind;
    double number = 0;
    bool boolean = false;
    std::string name; // Ident
    BinOp bin{};
    UnOp un{};
    ExprNodePtr lhs, rhs; // Unary/Step use lhs only
    int column = 0;       // 1-based position in the source text
};

/// A parsed expression. Keeps its source text so serialization is verbatim.
class Expression {
  public:
    Expression() = default;

    /// Parse infix source text. Throws ParseError with a column on bad input.
    static Expression parse(const std::string& source);

    const std::string& source() const { return source_; }
    const ExprNode& root() const { return *root_; }
    bool empty() const { return root_ == nullptr; }

    /// Names referenced by the expression (state literals on the right of a
    /// component test are included; callers resolve which is which).
    std::vector<std::string> referenced_names() const;

    Expression(const Expression& other);
    Expression& operator=(const Expression& other);
    Expression(Expression&&) = default;
    Expression& operator=(Expression&&) = default;

  private:
    std::string source_;
    ExprNodePtr root_;
};

/// Name-resolution interface for evaluation. Returning nullopt means the name
/// is unbound; Eq/Ne then fall back to reading a bare identifier as a state
/// literal when the other side carries a state token.
class Env {
  public:
    virtual ~Env() = default;
    virtual std::optional<Value> lookup(const std::string& name) const = 0;
};

class MapEnv : public Env {
  public:
    MapEnv() = default;
    explicit MapEnv(std::unordered_map<std::string, Value> vars) : vars_(std::move(vars)) {}
    void set(const std::string& name, Value v) { vars_[name] = std::move(v); }
    std::optional<Value> lookup(const std::string& name) const override {
        auto it = vars_.find(name);
        if (it == vars_.end()) return std::nullopt;
        return it->second;
    }

  private:
    std::unordered_map<std::string, Value> vars_;
};

/// Evaluate an expression in an environment. Deterministic and side-effect
/// free. Throws EvalError on unbound names, type mismatches, or division by
/// zero.
Value eval_expression(const Expression& e, const Env& env);

/// Convenience accessors with type checking.
double eval_number(const Expression& e, const Env& env);
bool eval_bool(const Expression& e, const Env& env);

/// Static type of an expression, used by the model validator.
enum class ExprType { Number, Boolean, State };

/// Type environment: maps names to their static type. Unknown names are
/// reported through the diagnostics callback unless they are resolvable as
/// state literals.
struct TypeEnv {
    std::unordered_map<std::string, ExprType> names;
    // component name -> legal state names, for state-literal checking
    std::unordered_map<std::string, std::vector<std::string>> component_states;
};

/// Infer the expression's type against a type environment. Problems are
/// appended to `issues` as human-readable strings; returns nullopt if the
/// expression cannot be typed.
std::optional<ExprType> type_check(const Expression& e, const TypeEnv& env,
                                   std::vector<std::string>& issues);

} // namespace riskex
