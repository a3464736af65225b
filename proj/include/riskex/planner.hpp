#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "riskex/model.hpp"
#include "riskex/sim.hpp"

namespace riskex {

/// AND/OR success tree. AND composes distinct required elements; OR composes
/// redundancies: an OR node stays UP while any child is UP.
struct TreeNode {
    enum class Gate { And, Or, Leaf };
    Gate gate = Gate::Leaf;
    std::string name;      ///< node name; leaves default to their component name
    std::string component; ///< leaves only
    std::vector<TreeNode> children;
};

struct FunctionalityNode {
    std::string name;
    std::vector<FunctionalityNode> children;
};

/// functionality -> component-tree nodes whose UP status it requires
using CFMatrix = std::map<std::string, std::vector<std::string>>;

/// A functionality gained or lost, e.g. "downlink/lost".
struct FuncEvent {
    std::string functionality;
    bool lost = true;
    bool operator==(const FuncEvent&) const = default;
    bool operator<(const FuncEvent& o) const {
        return functionality < o.functionality ||
               (functionality == o.functionality && lost < o.lost);
    }
    std::string str() const { return functionality + (lost ? "/lost" : "/gained"); }
    static FuncEvent parse(const std::string& s);
};

struct FsmTransition {
    std::string from, to;
    FuncEvent label;
};

struct AbstractFsm {
    std::vector<std::string> states;
    std::string initial;
    std::vector<std::string> goals;
    std::vector<FsmTransition> transitions;
};

struct PlanScenario {
    std::vector<FuncEvent> events;
    std::string target; ///< FSM state the event list leads to
    double importance = 1.0;
    bool generated = false;
    std::string describe() const;
};

struct Plan {
    TreeNode component_tree;
    FunctionalityNode functionality_tree;
    CFMatrix cf_matrix;
    AbstractFsm fsm;
    std::vector<PlanScenario> scenarios;
    /// component -> model states counted as DOWN at the planner abstraction.
    /// Components without an entry treat states named DOWN/FAILED/FAIL as down.
    std::map<std::string, std::vector<std::string>> down_states;
    std::string provenance;
};

/// component -> UP(true)/DOWN(false)
using StatusVector = std::map<std::string, bool>;

/// Recursive success-tree evaluation. Throws Error if a leaf's component is
/// missing from sv.
bool evaluate_tree(const TreeNode& t, const StatusVector& sv);

/// All minimal sets of components whose joint failure forces the root DOWN.
/// Complete and minimal; canonical order (sets sorted, list sorted).
std::vector<std::set<std::string>> minimal_failure_sets(const TreeNode& t);

/// functionality -> available? A functionality is available iff every tree
/// node it requires evaluates UP.
std::map<std::string, bool> functionality_status(const CFMatrix& m, const TreeNode& tree,
                                                 const StatusVector& sv);

/// All simple (cycle-free) label paths from the FSM initial state to each goal
/// state with length <= max_len, in lexicographic order. Unreachable goals are
/// reported through `warnings`.
std::vector<PlanScenario> generate_plan(const AbstractFsm& fsm, const CFMatrix& m, int max_len,
                                        std::vector<std::string>* warnings = nullptr);

/// Per-story scenario progress.
struct ScenarioCursors {
    std::vector<std::size_t> pos;
    std::vector<int> completions;
    explicit ScenarioCursors(std::size_t n = 0) : pos(n, 0), completions(static_cast<int>(n), 0) {}
};

/// Advance every scenario whose next expected event equals ev; return the max
/// importance over the scenarios that matched, or 1 (neutral) if none did.
double match_event(const Plan& p, ScenarioCursors& cursors, const FuncEvent& ev);

/// Importance the event WOULD get, without advancing any cursor.
double peek_importance(const Plan& p, const ScenarioCursors& cursors, const FuncEvent& ev);

/// A story abstracted to its functionality-change events.
struct AbstractTrace {
    std::vector<FuncEvent> events;
    std::string end_state;
};

struct RefinementReport {
    std::vector<std::string> never_realized; ///< scenario descriptions
    struct Unseen {
        std::vector<FuncEvent> events;
        std::string end_state;
        int count = 0;
    };
    std::vector<Unseen> unseen;
    bool empty() const { return never_realized.empty() && unseen.empty(); }
    std::string text() const;
    std::string to_json() const;
};

/// Advisory comparison of a plan against realized traces: scenarios never
/// completed anywhere, and end-state-reaching event sequences that complete no
/// scenario. Never mutates the plan.
RefinementReport refine_plan(const Plan& p, const std::vector<AbstractTrace>& traces);

/// Structural validation; model-dependent checks (component references,
/// down-state names) run when a model is supplied.
std::vector<Diagnostic> validate_plan(const Plan& p, const SystemModel* model = nullptr);

Plan plan_load(const std::string& path);
void plan_store(const Plan& p, const std::string& path);
Plan plan_from_json_text(const std::string& text);
std::string plan_to_json_text(const Plan& p);

/// A plan bound to a model: per-component down-state sets and fast
/// functionality evaluation for live matching. Immutable after construction.
class PlanRuntime {
  public:
    PlanRuntime(Plan plan, const CompiledModel& cm);

    const Plan& plan() const { return plan_; }
    const std::vector<std::string>& functionality_names() const { return func_names_; }

    /// Per-component UP flags from simulator state indices.
    std::vector<bool> binary_status(const std::vector<int>& comp_state) const;
    /// Per-functionality availability flags (functionality_names order).
    std::vector<bool> func_status(const std::vector<bool>& up) const;
    /// Events produced by moving from one availability vector to another.
    std::vector<FuncEvent> diff(const std::vector<bool>& before,
                                const std::vector<bool>& after) const;

    ScenarioCursors make_cursors() const { return ScenarioCursors(plan_.scenarios.size()); }

  private:
    Plan plan_;
    const CompiledModel* cm_;
    std::vector<std::string> func_names_;
    std::vector<std::vector<const TreeNode*>> func_nodes_;
    std::vector<std::set<int>> down_state_idx_; // per component
};

} // namespace riskex
