#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "riskex/expr.hpp"

namespace riskex {

/// Firing-time distribution of a timed transition.
struct Distribution {
    enum class Kind { Exponential, Weibull, Fixed };
    Kind kind = Kind::Exponential;
    double lambda = 0; // rate for exponential, scale for weibull
    double shape = 0;  // weibull k
    double time = 0;   // fixed
};

struct DemandOutcome {
    std::string target;
    double prob = 0;
    std::vector<std::string> emits;
};

struct TransitionSpec {
    enum class Kind { Demand, Timed, Conditional };
    Kind kind = Kind::Demand;
    std::string source;

    // demand
    std::string trigger;
    std::vector<DemandOutcome> outcomes;

    // timed
    std::string target; // also used by conditional
    Distribution dist;
    std::optional<Expression> rate_modifier;
    bool branchable = false;

    // conditional
    std::optional<Expression> guard;

    // events raised when a timed/conditional transition fires
    std::vector<std::string> emits;
};

struct ComponentSpec {
    std::string name;
    std::vector<std::string> states; // >= 2
    std::vector<TransitionSpec> transitions;
};

struct DerivativeClause {
    std::optional<Expression> when; // nullopt = default clause (must be last)
    Expression rate;
};

struct ContinuousVarSpec {
    std::string name;
    double initial = 0;
    std::vector<DerivativeClause> derivative;
};

struct EndStateSpec {
    std::string name;
    Expression predicate;
    std::string severity; // e.g. ok, degraded, fail
};

/// Reserved end state reported when the mission clock runs out with no
/// declared predicate satisfied.
inline constexpr const char* kMissionCompleteName = "mission_complete";
inline constexpr const char* kMissionCompleteSeverity = "ok";

struct SystemModel {
    std::string name;
    std::vector<ComponentSpec> components;
    std::vector<ContinuousVarSpec> continuous_vars;
    std::vector<EndStateSpec> end_states;
    std::map<std::string, std::string> initial_states; // component -> state
    std::map<std::string, double> initial_var_overrides;
    double mission_time = 0; // hours

    int component_index(const std::string& name) const;
    int var_index(const std::string& name) const;
    int state_index(int component, const std::string& state) const;

    /// Initial value of a var: override from `initial.vars` if present, else
    /// the declaration's own initial.
    double var_initial(int var) const;

    /// Declared end states plus the reserved mission_complete state.
    std::vector<std::pair<std::string, std::string>> all_end_states() const;
};

struct Diagnostic {
    enum class Severity { Error, Warning };
    Severity severity = Severity::Error;
    std::string location; // JSON-path-ish or "component pump, transition 2"
    std::string message;
};

/// Parse a model file. Enforces the shipped JSON schema, builds the model,
/// and runs validate_model; any error-severity diagnostic is thrown as
/// ValidationError. Syntax errors carry line/column.
SystemModel parse_model(const std::string& text);

/// Validate a model built programmatically or by parse_model. Returns the
/// empty list iff every type invariant holds; warnings do not block use.
std::vector<Diagnostic> validate_model(const SystemModel& m);

/// Canonical JSON serialization. parse(serialize(parse(x))) == parse(x).
std::string serialize_model(const SystemModel& m);

std::string format_diagnostic(const Diagnostic& d);

/// Probability sums are accepted within this tolerance.
inline constexpr double kProbSumTolerance = 1e-9;

} // namespace riskex
