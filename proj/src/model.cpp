#include "riskex/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "riskex/schema.hpp"

namespace riskex {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

bool is_identifier(const std::string& s) {
    static const std::regex re("^[A-Za-z_][A-Za-z0-9_]*$");
    return std::regex_match(s, re);
}

// Byte offset -> "line L, column C" for JSON syntax errors.
std::string offset_to_linecol(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

Expression parse_expr_field(const json& j, const std::string& where) {
    try {
        return Expression::parse(j.get<std::string>());
    } catch (const ParseError& e) {
        throw ParseError(where + ": " + e.what());
    }
}

TransitionSpec parse_transition(const json& j, const std::string& where) {
    TransitionSpec t;
    const std::string kind = j.at("kind").get<std::string>();
    t.source = j.at("source").get<std::string>();
    auto forbid = [&](const char* key) {
        if (j.contains(key))
            throw ParseError(where + ": key '" + std::string(key) + "' is not valid for kind '" +
                             kind + "'");
    };
    if (kind == "demand") {
        t.kind = TransitionSpec::Kind::Demand;
        forbid("target");
        forbid("distribution");
        forbid("rate_modifier");
        forbid("guard");
        forbid("branchable");
        forbid("emits");
        if (!j.contains("trigger") || !j.contains("outcomes"))
            throw ParseError(where + ": demand transition needs 'trigger' and 'outcomes'");
        t.trigger = j.at("trigger").get<std::string>();
        for (const auto& o : j.at("outcomes")) {
            DemandOutcome out;
            out.target = o.at("target").get<std::string>();
            out.prob = o.at("prob").get<double>();
            if (o.contains("emits"))
                for (const auto& e : o.at("emits")) out.emits.push_back(e.get<std::string>());
            t.outcomes.push_back(std::move(out));
        }
    } else if (kind == "timed") {
        t.kind = TransitionSpec::Kind::Timed;
        forbid("trigger");
        forbid("outcomes");
        forbid("guard");
        if (!j.contains("target") || !j.contains("distribution"))
            throw ParseError(where + ": timed transition needs 'target' and 'distribution'");
        t.target = j.at("target").get<std::string>();
        const auto& d = j.at("distribution");
        const std::string dk = d.at("type").get<std::string>();
        if (dk == "exponential") {
            t.dist.kind = Distribution::Kind::Exponential;
            t.dist.lambda = d.at("lambda").get<double>();
        } else if (dk == "weibull") {
            t.dist.kind = Distribution::Kind::Weibull;
            t.dist.lambda = d.at("lambda").get<double>();
            t.dist.shape = d.at("k").get<double>();
        } else {
            t.dist.kind = Distribution::Kind::Fixed;
            t.dist.time = d.at("time").get<double>();
        }
        if (j.contains("rate_modifier"))
            t.rate_modifier = parse_expr_field(j.at("rate_modifier"), where + ".rate_modifier");
        if (j.contains("branchable")) t.branchable = j.at("branchable").get<bool>();
        if (j.contains("emits"))
            for (const auto& e : j.at("emits")) t.emits.push_back(e.get<std::string>());
    } else if (kind == "conditional") {
        t.kind = TransitionSpec::Kind::Conditional;
        forbid("trigger");
        forbid("outcomes");
        forbid("distribution");
        forbid("rate_modifier");
        forbid("branchable");
        if (!j.contains("target") || !j.contains("guard"))
            throw ParseError(where + ": conditional transition needs 'target' and 'guard'");
        t.target = j.at("target").get<std::string>();
        t.guard = parse_expr_field(j.at("guard"), where + ".guard");
        if (j.contains("emits"))
            for (const auto& e : j.at("emits")) t.emits.push_back(e.get<std::string>());
    } else {
        throw ParseError(where + ": unknown transition kind '" + kind + "'");
    }
    return t;
}

std::string transition_where(const SystemModel& m, std::size_t ci, std::size_t ti) {
    return "component '" + m.components[ci].name + "', transition " + std::to_string(ti + 1);
}

// Sample both predicates over a time grid with only t/mission_time bound; a
// point where both hold proves overlap. Predicates touching anything else are
// skipped (no proof attempted).
bool provably_overlapping(const SystemModel& m, const Expression& a, const Expression& b) {
    auto pure_t = [](const Expression& e) {
        for (const auto& n : e.referenced_names())
            if (n != "t" && n != "mission_time") return false;
        return true;
    };
    if (!pure_t(a) || !pure_t(b)) return false;
    MapEnv env;
    env.set("mission_time", m.mission_time);
    const int kGrid = 4096;
    for (int i = 0; i <= kGrid; ++i) {
        env.set("t", m.mission_time * i / kGrid);
        try {
            if (eval_bool(a, env) && eval_bool(b, env)) return true;
        } catch (const EvalError&) {
            return false;
        }
    }
    return false;
}

} // namespace

int SystemModel::component_index(const std::string& n) const {
    for (std::size_t i = 0; i < components.size(); ++i)
        if (components[i].name == n) return static_cast<int>(i);
    return -1;
}

int SystemModel::var_index(const std::string& n) const {
    for (std::size_t i = 0; i < continuous_vars.size(); ++i)
        if (continuous_vars[i].name == n) return static_cast<int>(i);
    return -1;
}

int SystemModel::state_index(int component, const std::string& state) const {
    const auto& st = components[static_cast<std::size_t>(component)].states;
    for (std::size_t i = 0; i < st.size(); ++i)
        if (st[i] == state) return static_cast<int>(i);
    return -1;
}

double SystemModel::var_initial(int var) const {
    const auto& v = continuous_vars[static_cast<std::size_t>(var)];
    auto it = initial_var_overrides.find(v.name);
    return it == initial_var_overrides.end() ? v.initial : it->second;
}

std::vector<std::pair<std::string, std::string>> SystemModel::all_end_states() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : end_states) out.emplace_back(e.name, e.severity);
    out.emplace_back(kMissionCompleteName, kMissionCompleteSeverity);
    return out;
}

SystemModel parse_model(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("syntax error at " + offset_to_linecol(text, e.byte) + ": " + e.what());
    }
    static const json schema = json::parse(model_schema_text());
    auto violations = schema_check(schema, doc);
    if (!violations.empty()) {
        std::string msg = "model file violates schema:";
        for (const auto& v : violations) msg += "\n  " + v;
        throw ParseError(msg);
    }

    SystemModel m;
    m.name = doc.at("name").get<std::string>();
    m.mission_time = doc.at("mission_time").get<double>();
    for (std::size_t i = 0; i < doc.at("components").size(); ++i) {
        const auto& cj = doc.at("components")[i];
        ComponentSpec c;
        c.name = cj.at("name").get<std::string>();
        for (const auto& s : cj.at("states")) c.states.push_back(s.get<std::string>());
        if (cj.contains("transitions")) {
            for (std::size_t k = 0; k < cj.at("transitions").size(); ++k) {
                const std::string where =
                    "component '" + c.name + "', transition " + std::to_string(k + 1);
                c.transitions.push_back(parse_transition(cj.at("transitions")[k], where));
            }
        }
        m.components.push_back(std::move(c));
    }
    if (doc.contains("continuous_vars")) {
        for (const auto& vj : doc.at("continuous_vars")) {
            ContinuousVarSpec v;
            v.name = vj.at("name").get<std::string>();
            v.initial = vj.at("initial").get<double>();
            for (const auto& dj : vj.at("derivative")) {
                DerivativeClause cl;
                if (dj.contains("when"))
                    cl.when = parse_expr_field(dj.at("when"), "var '" + v.name + "' when-clause");
                cl.rate = parse_expr_field(dj.at("rate"), "var '" + v.name + "' rate");
                v.derivative.push_back(std::move(cl));
            }
            m.continuous_vars.push_back(std::move(v));
        }
    }
    for (const auto& ej : doc.at("end_states")) {
        EndStateSpec e;
        e.name = ej.at("name").get<std::string>();
        e.predicate =
            parse_expr_field(ej.at("predicate"), "end state '" + e.name + "' predicate");
        e.severity = ej.at("severity").get<std::string>();
        m.end_states.push_back(std::move(e));
    }
    for (auto it = doc.at("initial").at("components").begin();
         it != doc.at("initial").at("components").end(); ++it)
        m.initial_states[it.key()] = it.value().get<std::string>();
    if (doc.at("initial").contains("vars"))
        for (auto it = doc.at("initial").at("vars").begin();
             it != doc.at("initial").at("vars").end(); ++it)
            m.initial_var_overrides[it.key()] = it.value().get<double>();

    auto diags = validate_model(m);
    std::string errors;
    for (const auto& d : diags)
        if (d.severity == Diagnostic::Severity::Error) errors += "\n  " + format_diagnostic(d);
    if (!errors.empty()) throw ValidationError("invalid model:" + errors);
    return m;
}

std::vector<Diagnostic> validate_model(const SystemModel& m) {
    std::vector<Diagnostic> out;
    auto error = [&](std::string loc, std::string msg) {
        out.push_back({Diagnostic::Severity::Error, std::move(loc), std::move(msg)});
    };
    auto warning = [&](std::string loc, std::string msg) {
        out.push_back({Diagnostic::Severity::Warning, std::move(loc), std::move(msg)});
    };

    if (!is_identifier(m.name)) error("name", "model name must be an identifier");
    if (!(m.mission_time > 0)) error("mission_time", "mission_time must be > 0");
    if (m.components.empty()) error("components", "at least one component is required");

    // Namespace checks. Components and vars share the expression namespace.
    const std::set<std::string> reserved = {"t",    "mission_time", "true", "false",
                                            "and",  "or",           "not",  "step"};
    std::set<std::string> expr_names;
    auto claim_name = [&](const std::string& n, const std::string& loc) {
        if (!is_identifier(n)) {
            error(loc, "'" + n + "' is not a valid identifier");
            return;
        }
        if (reserved.count(n)) {
            error(loc, "'" + n + "' is a reserved name");
            return;
        }
        if (!expr_names.insert(n).second) error(loc, "duplicate identifier '" + n + "'");
    };
    for (const auto& c : m.components) claim_name(c.name, "component '" + c.name + "'");
    for (const auto& v : m.continuous_vars) claim_name(v.name, "var '" + v.name + "'");

    std::set<std::string> end_names;
    for (const auto& e : m.end_states) {
        if (!end_names.insert(e.name).second)
            error("end state '" + e.name + "'", "duplicate end state name");
        if (e.name == kMissionCompleteName)
            error("end state '" + e.name + "'", "name is reserved for the implicit end state");
        if (!is_identifier(e.severity))
            error("end state '" + e.name + "'", "severity must be an identifier");
    }

    // Type environment for expressions.
    TypeEnv tenv;
    tenv.names["t"] = ExprType::Number;
    tenv.names["mission_time"] = ExprType::Number;
    for (const auto& c : m.components) {
        tenv.names[c.name] = ExprType::State;
        tenv.component_states[c.name] = c.states;
    }
    for (const auto& v : m.continuous_vars) tenv.names[v.name] = ExprType::Number;
    TypeEnv tenv_vars_only; // rate expressions: vars and t only
    tenv_vars_only.names["t"] = ExprType::Number;
    for (const auto& v : m.continuous_vars) tenv_vars_only.names[v.name] = ExprType::Number;
    TypeEnv tenv_comps_only; // derivative when-clauses: discrete configuration only
    for (const auto& c : m.components) {
        tenv_comps_only.names[c.name] = ExprType::State;
        tenv_comps_only.component_states[c.name] = c.states;
    }

    auto check_expr = [&](const Expression& e, const TypeEnv& env, ExprType want,
                          const std::string& loc) {
        std::vector<std::string> issues;
        auto t = type_check(e, env, issues);
        for (const auto& i : issues) error(loc, i + " in '" + e.source() + "'");
        if (issues.empty() && t && *t != want)
            error(loc, std::string("expression '") + e.source() + "' must be " +
                           (want == ExprType::Number ? "numeric" : "boolean"));
    };

    for (std::size_t ci = 0; ci < m.components.size(); ++ci) {
        const auto& c = m.components[ci];
        std::set<std::string> st(c.states.begin(), c.states.end());
        if (st.size() != c.states.size())
            error("component '" + c.name + "'", "duplicate state names");
        if (c.states.size() < 2) error("component '" + c.name + "'", "needs at least 2 states");
        for (const auto& s : c.states)
            if (!is_identifier(s))
                error("component '" + c.name + "'", "state '" + s + "' is not an identifier");

        for (std::size_t ti = 0; ti < c.transitions.size(); ++ti) {
            const auto& t = c.transitions[ti];
            const std::string loc = transition_where(m, ci, ti);
            if (!st.count(t.source)) error(loc, "source state '" + t.source + "' not declared");
            switch (t.kind) {
                case TransitionSpec::Kind::Demand: {
                    if (!is_identifier(t.trigger))
                        error(loc, "trigger '" + t.trigger + "' is not an identifier");
                    double sum = 0;
                    for (const auto& o : t.outcomes) {
                        if (!st.count(o.target))
                            error(loc, "outcome target '" + o.target + "' not declared");
                        if (o.prob < 0 || o.prob > 1)
                            error(loc, "outcome probability out of [0,1]");
                        sum += o.prob;
                    }
                    if (t.outcomes.empty()) {
                        error(loc, "demand transition needs at least one outcome");
                    } else if (std::abs(sum - 1.0) > kProbSumTolerance) {
                        char buf[64];
                        std::snprintf(buf, sizeof buf, "%.12g", sum);
                        error(loc, std::string("probabilities sum to ") + buf);
                    }
                    break;
                }
                case TransitionSpec::Kind::Timed: {
                    if (!st.count(t.target))
                        error(loc, "target state '" + t.target + "' not declared");
                    const auto& d = t.dist;
                    if (d.kind == Distribution::Kind::Exponential && !(d.lambda > 0))
                        error(loc, "exponential lambda must be > 0");
                    if (d.kind == Distribution::Kind::Weibull &&
                        (!(d.lambda > 0) || !(d.shape > 0)))
                        error(loc, "weibull parameters must be > 0");
                    if (d.kind == Distribution::Kind::Fixed && !(d.time > 0))
                        error(loc, "fixed time must be > 0");
                    if (t.rate_modifier) {
                        if (d.kind != Distribution::Kind::Exponential)
                            error(loc, "rate_modifier requires an exponential distribution");
                        if (t.branchable)
                            error(loc, "branchable timed transitions cannot carry a rate_modifier");
                        check_expr(*t.rate_modifier, tenv_vars_only, ExprType::Number,
                                   loc + " rate_modifier");
                    }
                    if (t.branchable && d.kind == Distribution::Kind::Fixed)
                        error(loc, "fixed timers are deterministic; branchable is meaningless");
                    break;
                }
                case TransitionSpec::Kind::Conditional: {
                    if (!st.count(t.target))
                        error(loc, "target state '" + t.target + "' not declared");
                    if (!t.guard) {
                        error(loc, "conditional transition needs a guard");
                    } else {
                        check_expr(*t.guard, tenv, ExprType::Boolean, loc + " guard");
                    }
                    break;
                }
            }
        }
    }

    for (const auto& v : m.continuous_vars) {
        const std::string loc = "var '" + v.name + "'";
        if (v.derivative.empty()) {
            error(loc, "needs at least a default derivative clause");
            continue;
        }
        for (std::size_t i = 0; i < v.derivative.size(); ++i) {
            const auto& cl = v.derivative[i];
            if (i + 1 == v.derivative.size()) {
                if (cl.when)
                    error(loc, "last derivative clause must be the default (no 'when')");
            } else if (!cl.when) {
                error(loc, "only the last derivative clause may omit 'when'");
            }
            if (cl.when)
                check_expr(*cl.when, tenv_comps_only, ExprType::Boolean,
                           loc + " when-clause " + std::to_string(i + 1));
            check_expr(cl.rate, tenv_vars_only, ExprType::Number,
                       loc + " rate " + std::to_string(i + 1));
        }
    }

    for (const auto& e : m.end_states)
        check_expr(e.predicate, tenv, ExprType::Boolean, "end state '" + e.name + "' predicate");

    // initial section
    for (const auto& c : m.components) {
        auto it = m.initial_states.find(c.name);
        if (it == m.initial_states.end()) {
            error("initial", "component '" + c.name + "' has no initial state");
        } else if (std::find(c.states.begin(), c.states.end(), it->second) == c.states.end()) {
            error("initial", "initial state '" + it->second + "' is not a state of '" + c.name +
                                 "'");
        }
    }
    for (const auto& [name, s] : m.initial_states)
        if (m.component_index(name) < 0)
            error("initial", "initial state for undeclared component '" + name + "'");
    for (const auto& [name, v] : m.initial_var_overrides) {
        (void)v;
        if (m.var_index(name) < 0)
            error("initial", "initial value for undeclared var '" + name + "'");
    }

    // Overlap warning for end-state predicates that depend on time alone.
    for (std::size_t i = 0; i < m.end_states.size(); ++i)
        for (std::size_t j = i + 1; j < m.end_states.size(); ++j)
            if (provably_overlapping(m, m.end_states[i].predicate, m.end_states[j].predicate))
                warning("end state '" + m.end_states[j].name + "'",
                        "predicate overlaps with end state '" + m.end_states[i].name +
                            "'; ties resolve by declaration order");

    return out;
}

std::string serialize_model(const SystemModel& m) {
    ordered_json doc;
    doc["name"] = m.name;
    doc["mission_time"] = m.mission_time;
    doc["components"] = ordered_json::array();
    for (const auto& c : m.components) {
        ordered_json cj;
        cj["name"] = c.name;
        cj["states"] = c.states;
        if (!c.transitions.empty()) {
            cj["transitions"] = ordered_json::array();
            for (const auto& t : c.transitions) {
                ordered_json tj;
                tj["source"] = t.source;
                switch (t.kind) {
                    case TransitionSpec::Kind::Demand: {
                        tj["kind"] = "demand";
                        tj["trigger"] = t.trigger;
                        tj["outcomes"] = ordered_json::array();
                        for (const auto& o : t.outcomes) {
                            ordered_json oj;
                            oj["target"] = o.target;
                            oj["prob"] = o.prob;
                            if (!o.emits.empty()) oj["emits"] = o.emits;
                            tj["outcomes"].push_back(oj);
                        }
                        break;
                    }
                    case TransitionSpec::Kind::Timed: {
                        tj["kind"] = "timed";
                        tj["target"] = t.target;
                        ordered_json dj;
                        switch (t.dist.kind) {
                            case Distribution::Kind::Exponential:
                                dj["type"] = "exponential";
                                dj["lambda"] = t.dist.lambda;
                                break;
                            case Distribution::Kind::Weibull:
                                dj["type"] = "weibull";
                                dj["lambda"] = t.dist.lambda;
                                dj["k"] = t.dist.shape;
                                break;
                            case Distribution::Kind::Fixed:
                                dj["type"] = "fixed";
                                dj["time"] = t.dist.time;
                                break;
                        }
                        tj["distribution"] = dj;
                        if (t.rate_modifier) tj["rate_modifier"] = t.rate_modifier->source();
                        if (t.branchable) tj["branchable"] = true;
                        if (!t.emits.empty()) tj["emits"] = t.emits;
                        break;
                    }
                    case TransitionSpec::Kind::Conditional: {
                        tj["kind"] = "conditional";
                        tj["target"] = t.target;
                        tj["guard"] = t.guard ? t.guard->source() : "";
                        if (!t.emits.empty()) tj["emits"] = t.emits;
                        break;
                    }
                }
                cj["transitions"].push_back(tj);
            }
        }
        doc["components"].push_back(cj);
    }
    if (!m.continuous_vars.empty()) {
        doc["continuous_vars"] = ordered_json::array();
        for (const auto& v : m.continuous_vars) {
            ordered_json vj;
            vj["name"] = v.name;
            vj["initial"] = v.initial;
            vj["derivative"] = ordered_json::array();
            for (const auto& cl : v.derivative) {
                ordered_json dj;
                if (cl.when) dj["when"] = cl.when->source();
                dj["rate"] = cl.rate.source();
                vj["derivative"].push_back(dj);
            }
            doc["continuous_vars"].push_back(vj);
        }
    }
    doc["end_states"] = ordered_json::array();
    for (const auto& e : m.end_states) {
        ordered_json ej;
        ej["name"] = e.name;
        ej["predicate"] = e.predicate.source();
        ej["severity"] = e.severity;
        doc["end_states"].push_back(ej);
    }
    doc["initial"]["components"] = m.initial_states;
    if (!m.initial_var_overrides.empty()) doc["initial"]["vars"] = m.initial_var_overrides;
    return doc.dump(2) + "\n";
}

std::string format_diagnostic(const Diagnostic& d) {
    return std::string(d.severity == Diagnostic::Severity::Error ? "error" : "warning") + " [" +
           d.location + "] " + d.message;
}

} // namespace riskex
