#include "riskex/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <utility>

namespace riskex {

namespace {

enum class Tok {
    Number, Ident, True, False, And, Or, Not, Step,
    Plus, Minus, Star, Slash,
    Lt, Le, Gt, Ge, EqEq, Ne,
    LParen, RParen, Comma, End
};

struct Token {
    Tok kind;
    double number = 0;
    std::string text;
    int column = 0;
};

class Lexer {
  public:
    explicit Lexer(const std::string& src) : src_(src) {}

    Token next() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        const int col = static_cast<int>(pos_) + 1;
        if (pos_ >= src_.size()) return {Tok::End, 0, "", col};
        const char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && pos_ + 1 < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            const char* start = src_.c_str() + pos_;
            char* end = nullptr;
            const double v = std::strtod(start, &end);
            pos_ += static_cast<std::size_t>(end - start);
            return {Tok::Number, v, std::string(start, static_cast<std::size_t>(end - start)),
                    col};
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t s = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                ++pos_;
            std::string word = src_.substr(s, pos_ - s);
            if (word == "and") return {Tok::And, 0, word, col};
            if (word == "or") return {Tok::Or, 0, word, col};
            if (word == "not") return {Tok::Not, 0, word, col};
            if (word == "true") return {Tok::True, 0, word, col};
            if (word == "false") return {Tok::False, 0, word, col};
            if (word == "step") return {Tok::Step, 0, word, col};
            return {Tok::Ident, 0, word, col};
        }
        ++pos_;
        auto two = [&](char want, Tok yes, Tok no) {
            if (pos_ < src_.size() && src_[pos_] == want) {
                ++pos_;
                return yes;
            }
            return no;
        };
        switch (c) {
            case '+': return {Tok::Plus, 0, "+", col};
            case '-': return {Tok::Minus, 0, "-", col};
            case '*': return {Tok::Star, 0, "*", col};
            case '/': return {Tok::Slash, 0, "/", col};
            case '(': return {Tok::LParen, 0, "(", col};
            case ')': return {Tok::RParen, 0, ")", col};
            case ',': return {Tok::Comma, 0, ",", col};
            case '<': return {two('=', Tok::Le, Tok::Lt), 0, "<", col};
            case '>': return {two('=', Tok::Ge, Tok::Gt), 0, ">", col};
            case '=':
                if (pos_ < src_.size() && src_[pos_] == '=') {
                    ++pos_;
                    return {Tok::EqEq, 0, "==", col};
                }
                throw ParseError("col " + std::to_string(col) + ": single '=' (use '==')");
            case '!':
                if (pos_ < src_.size() && src_[pos_] == '=') {
                    ++pos_;
                    return {Tok::Ne, 0, "!=", col};
                }
                return {Tok::Not, 0, "!", col};
            case '&':
                if (pos_ < src_.size() && src_[pos_] == '&') {
                    ++pos_;
                    return {Tok::And, 0, "&&", col};
                }
                throw ParseError("col " + std::to_string(col) + ": single '&' (use '&&' or 'and')");
            case '|':
                if (pos_ < src_.size() && src_[pos_] == '|') {
                    ++pos_;
                    return {Tok::Or, 0, "||", col};
                }
                throw ParseError("col " + std::to_string(col) + ": single '|' (use '||' or 'or')");
            default:
                throw ParseError("col " + std::to_string(col) + ": unexpected character '" +
                                 std::string(1, c) + "'");
        }
    }

  private:
    const std::string& src_;
    std::size_t pos_ = 0;
};

class Parser {
  public:
    explicit Parser(const std::string& src) : lex_(src) { advance(); }

    ExprNodePtr parse() {
        auto e = parse_or();
        expect(Tok::End, "end of expression");
        return e;
    }

  private:
    void advance() { cur_ = lex_.next(); }

    void expect(Tok k, const char* what) {
        if (cur_.kind != k)
            throw ParseError("col " + std::to_string(cur_.column) + ": expected " + what);
        advance();
    }

    static ExprNodePtr make_bin(BinOp op, ExprNodePtr l, ExprNodePtr r, int col) {
        auto n = std::make_unique<ExprNode>();
        n->kind = ExprNode::Kind::Binary;
        n->bin = op;
        n->lhs = std::move(l);
        n->rhs = std::move(r);
        n->column = col;
        return n;
    }

    ExprNodePtr parse_or() {
        auto l = parse_and();
        while (cur_.kind == Tok::Or) {
            int col = cur_.column;
            advance();
            l = make_bin(BinOp::Or, std::move(l), parse_and(), col);
        }
        return l;
    }

    ExprNodePtr parse_and() {
        auto l = parse_not();
        while (cur_.kind == Tok::And) {
            int col = cur_.column;
            advance();
            l = make_bin(BinOp::And, std::move(l), parse_not(), col);
        }
        return l;
    }

    ExprNodePtr parse_not() {
        if (cur_.kind == Tok::Not) {
            int col = cur_.column;
            advance();
            auto n = std::make_unique<ExprNode>();
            n->kind = ExprNode::Kind::Unary;
            n->un = UnOp::Not;
            n->lhs = parse_not();
            n->column = col;
            return n;
        }
        return parse_comparison();
    }

    ExprNodePtr parse_comparison() {
        auto l = parse_additive();
        BinOp op;
        switch (cur_.kind) {
            case Tok::Lt: op = BinOp::Lt; break;
            case Tok::Le: op = BinOp::Le; break;
            case Tok::Gt: op = BinOp::Gt; break;
            case Tok::Ge: op = BinOp::Ge; break;
            case Tok::EqEq: op = BinOp::Eq; break;
            case Tok::Ne: op = BinOp::Ne; break;
            default: return l;
        }
        int col = cur_.column;
        advance();
        return make_bin(op, std::move(l), parse_additive(), col);
    }

    ExprNodePtr parse_additive() {
        auto l = parse_term();
        while (cur_.kind == Tok::Plus || cur_.kind == Tok::Minus) {
            BinOp op = cur_.kind == Tok::Plus ? BinOp::Add : BinOp::Sub;
            int col = cur_.column;
            advance();
            l = make_bin(op, std::move(l), parse_term(), col);
        }
        return l;
    }

    ExprNodePtr parse_term() {
        auto l = parse_factor();
        while (cur_.kind == Tok::Star || cur_.kind == Tok::Slash) {
            BinOp op = cur_.kind == Tok::Star ? BinOp::Mul : BinOp::Div;
            int col = cur_.column;
            advance();
            l = make_bin(op, std::move(l), parse_factor(), col);
        }
        return l;
    }

    ExprNodePtr parse_factor() {
        if (cur_.kind == Tok::Minus) {
            int col = cur_.column;
            advance();
            auto n = std::make_unique<ExprNode>();
            n->kind = ExprNode::Kind::Unary;
            n->un = UnOp::Neg;
            n->lhs = parse_factor();
            n->column = col;
            return n;
        }
        return parse_primary();
    }

    ExprNodePtr parse_primary() {
        auto n = std::make_unique<ExprNode>();
        n->column = cur_.column;
        switch (cur_.kind) {
            case Tok::Number:
                n->kind = ExprNode::Kind::Number;
                n->number = cur_.number;
                advance();
                return n;
            case Tok::True:
            case Tok::False:
                n->kind = ExprNode::Kind::Boolean;
                n->boolean = cur_.kind == Tok::True;
                advance();
                return n;
            case Tok::Ident:
                n->kind = ExprNode::Kind::Ident;
                n->name = cur_.text;
                advance();
                return n;
            case Tok::Step: {
                advance();
                expect(Tok::LParen, "'(' after step");
                n->kind = ExprNode::Kind::Step;
                n->lhs = parse_or();
                expect(Tok::RParen, "')'");
                return n;
            }
            case Tok::LParen: {
                advance();
                auto inner = parse_or();
                expect(Tok::RParen, "')'");
                return inner;
            }
            default:
                throw ParseError("col " + std::to_string(cur_.column) + ": expected a value");
        }
    }

    Lexer lex_;
    Token cur_;
};

ExprNodePtr clone_node(const ExprNode* n) {
    if (!n) return nullptr;
    auto c = std::make_unique<ExprNode>();
    c->kind = n->kind;
    c->number = n->number;
    c->boolean = n->boolean;
    c->name = n->name;
    c->bin = n->bin;
    c->un = n->un;
    c->column = n->column;
    c->lhs = clone_node(n->lhs.get());
    c->rhs = clone_node(n->rhs.get());
    return c;
}

const char* value_type_name(const Value& v) {
    if (std::holds_alternative<double>(v)) return "number";
    if (std::holds_alternative<bool>(v)) return "boolean";
    return "state";
}

[[noreturn]] void eval_fail(const ExprNode& n, const std::string& msg) {
    throw EvalError("col " + std::to_string(n.column) + ": " + msg);
}

std::optional<Value> try_eval(const ExprNode& n, const Env& env);

Value eval_node(const ExprNode& n, const Env& env) {
    auto v = try_eval(n, env);
    if (!v) eval_fail(n, "unbound name '" + n.name + "'");
    return *v;
}

double as_number(const ExprNode& n, const Value& v) {
    if (auto* d = std::get_if<double>(&v)) return *d;
    eval_fail(n, std::string("expected number, got ") + value_type_name(v));
}

bool as_bool(const ExprNode& n, const Value& v) {
    if (auto* b = std::get_if<bool>(&v)) return *b;
    eval_fail(n, std::string("expected boolean, got ") + value_type_name(v));
}

// Equality with the state-literal rule: in `pump == FAILED` the right-hand
// identifier need not be bound as long as the other side is a state token.
bool eval_equality(const ExprNode& n, const Env& env) {
    auto lv = try_eval(*n.lhs, env);
    auto rv = try_eval(*n.rhs, env);
    if (!lv && rv && std::holds_alternative<StateToken>(*rv) &&
        n.lhs->kind == ExprNode::Kind::Ident)
        lv = Value{StateToken{n.lhs->name}};
    if (!rv && lv && std::holds_alternative<StateToken>(*lv) &&
        n.rhs->kind == ExprNode::Kind::Ident)
        rv = Value{StateToken{n.rhs->name}};
    if (!lv) eval_fail(*n.lhs, "unbound name '" + n.lhs->name + "'");
    if (!rv) eval_fail(*n.rhs, "unbound name '" + n.rhs->name + "'");
    if (lv->index() != rv->index())
        eval_fail(n, std::string("cannot compare ") + value_type_name(*lv) + " with " +
                         value_type_name(*rv));
    if (auto* d = std::get_if<double>(&*lv)) return *d == std::get<double>(*rv);
    if (auto* b = std::get_if<bool>(&*lv)) return *b == std::get<bool>(*rv);
    return std::get<StateToken>(*lv) == std::get<StateToken>(*rv);
}

std::optional<Value> try_eval(const ExprNode& n, const Env& env) {
    switch (n.kind) {
        case ExprNode::Kind::Number: return Value{n.number};
        case ExprNode::Kind::Boolean: return Value{n.boolean};
        case ExprNode::Kind::Ident: return env.lookup(n.name);
        case ExprNode::Kind::Step: {
            Value v = eval_node(*n.lhs, env);
            if (auto* b = std::get_if<bool>(&v)) return Value{*b ? 1.0 : 0.0};
            return Value{as_number(*n.lhs, v) >= 0 ? 1.0 : 0.0};
        }
        case ExprNode::Kind::Unary: {
            Value v = eval_node(*n.lhs, env);
            if (n.un == UnOp::Not) return Value{!as_bool(*n.lhs, v)};
            return Value{-as_number(*n.lhs, v)};
        }
        case ExprNode::Kind::Binary: {
            switch (n.bin) {
                case BinOp::Eq: return Value{eval_equality(n, env)};
                case BinOp::Ne: return Value{!eval_equality(n, env)};
                case BinOp::And: {
                    bool l = as_bool(*n.lhs, eval_node(*n.lhs, env));
                    bool r = as_bool(*n.rhs, eval_node(*n.rhs, env));
                    return Value{l && r};
                }
                case BinOp::Or: {
                    bool l = as_bool(*n.lhs, eval_node(*n.lhs, env));
                    bool r = as_bool(*n.rhs, eval_node(*n.rhs, env));
                    return Value{l || r};
                }
                default: break;
            }
            double l = as_number(*n.lhs, eval_node(*n.lhs, env));
            double r = as_number(*n.rhs, eval_node(*n.rhs, env));
            switch (n.bin) {
                case BinOp::Lt: return Value{l < r};
                case BinOp::Le: return Value{l <= r};
                case BinOp::Gt: return Value{l > r};
                case BinOp::Ge: return Value{l >= r};
                case BinOp::Add: return Value{l + r};
                case BinOp::Sub: return Value{l - r};
                case BinOp::Mul: return Value{l * r};
                case BinOp::Div:
                    if (r == 0.0) eval_fail(n, "division by zero");
                    return Value{l / r};
                default: break;
            }
        }
    }
    eval_fail(n, "malformed expression node");
}

void collect_names(const ExprNode* n, std::vector<std::string>& out) {
    if (!n) return;
    if (n->kind == ExprNode::Kind::Ident) out.push_back(n->name);
    collect_names(n->lhs.get(), out);
    collect_names(n->rhs.get(), out);
}

std::optional<ExprType> type_node(const ExprNode& n, const TypeEnv& env,
                                  std::vector<std::string>& issues);

// Typed counterpart of eval_equality.
std::optional<ExprType> type_equality(const ExprNode& n, const TypeEnv& env,
                                      std::vector<std::string>& issues) {
    auto known = [&](const ExprNode& side) -> std::optional<ExprType> {
        if (side.kind == ExprNode::Kind::Ident && !env.names.count(side.name))
            return std::nullopt; // candidate state literal
        return type_node(side, env, issues);
    };
    auto lt = known(*n.lhs);
    auto rt = known(*n.rhs);
    auto check_literal = [&](const ExprNode& comp_side, const ExprNode& lit_side) {
        auto it = env.component_states.find(comp_side.name);
        if (it == env.component_states.end()) return;
        for (const auto& s : it->second)
            if (s == lit_side.name) return;
        issues.push_back("col " + std::to_string(lit_side.column) + ": '" + lit_side.name +
                         "' is not a state of component '" + comp_side.name + "'");
    };
    if (lt && !rt) {
        if (*lt == ExprType::State && n.lhs->kind == ExprNode::Kind::Ident) {
            check_literal(*n.lhs, *n.rhs);
            return ExprType::Boolean;
        }
        issues.push_back("col " + std::to_string(n.rhs->column) + ": unknown name '" +
                         n.rhs->name + "'");
        return std::nullopt;
    }
    if (rt && !lt) {
        if (*rt == ExprType::State && n.rhs->kind == ExprNode::Kind::Ident) {
            check_literal(*n.rhs, *n.lhs);
            return ExprType::Boolean;
        }
        issues.push_back("col " + std::to_string(n.lhs->column) + ": unknown name '" +
                         n.lhs->name + "'");
        return std::nullopt;
    }
    if (!lt || !rt) {
        if (!lt)
            issues.push_back("col " + std::to_string(n.lhs->column) + ": unknown name '" +
                             n.lhs->name + "'");
        if (!rt)
            issues.push_back("col " + std::to_string(n.rhs->column) + ": unknown name '" +
                             n.rhs->name + "'");
        return std::nullopt;
    }
    if (*lt != *rt) {
        issues.push_back("col " + std::to_string(n.column) + ": comparison of mismatched types");
        return std::nullopt;
    }
    return ExprType::Boolean;
}

std::optional<ExprType> type_node(const ExprNode& n, const TypeEnv& env,
                                  std::vector<std::string>& issues) {
    auto require = [&](const ExprNode& c, ExprType want) -> bool {
        auto t = type_node(c, env, issues);
        if (!t) return false;
        if (*t != want) {
            issues.push_back("col " + std::to_string(c.column) + ": expected " +
                             (want == ExprType::Number ? "number" : "boolean"));
            return false;
        }
        return true;
    };
    switch (n.kind) {
        case ExprNode::Kind::Number: return ExprType::Number;
        case ExprNode::Kind::Boolean: return ExprType::Boolean;
        case ExprNode::Kind::Ident: {
            auto it = env.names.find(n.name);
            if (it == env.names.end()) {
                issues.push_back("col " + std::to_string(n.column) + ": unknown name '" + n.name +
                                 "'");
                return std::nullopt;
            }
            return it->second;
        }
        case ExprNode::Kind::Step: {
            auto t = type_node(*n.lhs, env, issues);
            if (t && *t == ExprType::State)
                issues.push_back("col " + std::to_string(n.column) +
                                 ": step() takes a number or boolean");
            return ExprType::Number;
        }
        case ExprNode::Kind::Unary:
            if (n.un == UnOp::Not)
                return require(*n.lhs, ExprType::Boolean) ? std::optional(ExprType::Boolean)
                                                          : std::nullopt;
            return require(*n.lhs, ExprType::Number) ? std::optional(ExprType::Number)
                                                     : std::nullopt;
        case ExprNode::Kind::Binary:
            switch (n.bin) {
                case BinOp::Eq:
                case BinOp::Ne: return type_equality(n, env, issues);
                case BinOp::And:
                case BinOp::Or: {
                    bool ok = require(*n.lhs, ExprType::Boolean);
                    ok = require(*n.rhs, ExprType::Boolean) && ok;
                    return ok ? std::optional(ExprType::Boolean) : std::nullopt;
                }
                case BinOp::Lt:
                case BinOp::Le:
                case BinOp::Gt:
                case BinOp::Ge: {
                    bool ok = require(*n.lhs, ExprType::Number);
                    ok = require(*n.rhs, ExprType::Number) && ok;
                    return ok ? std::optional(ExprType::Boolean) : std::nullopt;
                }
                default: {
                    bool ok = require(*n.lhs, ExprType::Number);
                    ok = require(*n.rhs, ExprType::Number) && ok;
                    return ok ? std::optional(ExprType::Number) : std::nullopt;
                }
            }
    }
    return std::nullopt;
}

} // namespace

Expression Expression::parse(const std::string& source) {
    Expression e;
    e.source_ = source;
    e.root_ = Parser(source).parse();
    return e;
}

Expression::Expression(const Expression& other)
    : source_(other.source_), root_(clone_node(other.root_.get())) {}

Expression& Expression::operator=(const Expression& other) {
    if (this != &other) {
        source_ = other.source_;
        root_ = clone_node(other.root_.get());
    }
    return *this;
}

std::vector<std::string> Expression::referenced_names() const {
    std::vector<std::string> out;
    collect_names(root_.get(), out);
    return out;
}

Value eval_expression(const Expression& e, const Env& env) {
    if (e.empty()) throw EvalError("empty expression");
    return eval_node(e.root(), env);
}

double eval_number(const Expression& e, const Env& env) {
    Value v = eval_expression(e, env);
    if (auto* d = std::get_if<double>(&v)) return *d;
    throw EvalError("expression '" + e.source() + "' is not numeric");
}

bool eval_bool(const Expression& e, const Env& env) {
    Value v = eval_expression(e, env);
    if (auto* b = std::get_if<bool>(&v)) return *b;
    throw EvalError("expression '" + e.source() + "' is not boolean");
}

std::optional<ExprType> type_check(const Expression& e, const TypeEnv& env,
                                   std::vector<std::string>& issues) {
    if (e.empty()) {
        issues.push_back("empty expression");
        return std::nullopt;
    }
    return type_node(e.root(), env, issues);
}

} // namespace riskex
