#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "riskex/model.hpp"
#include "riskex/rng.hpp"

namespace riskex {

/// How stochastic timed transitions behave.
///   Sample:         firing times drawn by inverse CDF (continuous exploration).
///   SystematicBins: finite branching for exact event trees. Fixed timers fire
///                   as scheduled; exponential/weibull transitions never fire
///                   unless marked branchable, in which case arming creates a
///                   branch point over K conditional-quantile firing times plus
///                   a "does not fire within mission" branch carrying the exact
///                   survival probability.
enum class TimedPolicy { Sample, SystematicBins };

struct SimOptions {
    double step_h = 0.01; ///< RK4 step (hours); crossings refined to step_h/100
    TimedPolicy timed_policy = TimedPolicy::Sample;
    int quantile_bins = 3;
    std::uint32_t cascade_limit = 10000; ///< max discrete applications per instant
};

struct TraceEvent {
    enum class Kind { Transition, ThresholdCrossing, BranchTaken, EndState };
    double time = 0;
    Kind kind = Kind::Transition;
    std::string detail;
    double prob = -1; // >= 0 only for BranchTaken
    // structured payload for plan matching and targeted search (not exported)
    int comp = -1;
    int to_state = -1;
};

const char* trace_kind_name(TraceEvent::Kind k);

struct Branch {
    std::uint64_t token = 0; ///< identifies the branch point it belongs to
    int index = 0;
    std::string label;
    double prob = 0;
    int comp = -1;     ///< component whose state the branch sets (-1 for timing bins)
    int to_state = -1; ///< target state index, when comp >= 0
};

struct BranchPoint {
    std::uint64_t token = 0;
    double at_time = 0;
    std::string source; ///< transition identifier
    std::uint64_t stats_key = 0;
    std::vector<Branch> branches; ///< >= 2, probabilities sum to 1
};

/// Index tables and expression metadata built once per model and shared
/// (read-only) by every Simulation over it.
class CompiledModel {
  public:
    explicit CompiledModel(const SystemModel& m);

    const SystemModel& model() const { return *model_; }
    std::uint64_t fingerprint() const { return fingerprint_; }

    struct TimedSlot {
        int comp, trans;
    };
    struct TransRef {
        int comp, trans;
    };

    const std::vector<TimedSlot>& timed_slots() const { return timed_slots_; }
    const std::vector<TransRef>& conditionals() const { return conditionals_; }
    const std::vector<TransRef>* demands_for(const std::string& trigger) const;
    int slot_for(int comp, int trans) const;

    int comp_index(const std::string& n) const;
    int var_index(const std::string& n) const;

    bool expr_refs_vars(const Expression& e) const;
    static bool expr_refs_time(const Expression& e);

    std::string transition_id(int comp, int trans) const;

  private:
    const SystemModel* model_;
    std::uint64_t fingerprint_ = 0;
    std::unordered_map<std::string, int> comp_index_, var_index_;
    std::vector<TimedSlot> timed_slots_;
    std::vector<std::vector<int>> slots_by_comp_;
    std::unordered_map<std::string, std::vector<TransRef>> demands_by_trigger_;
    std::vector<TransRef> conditionals_;

    friend class Simulation;
};

/// Complete simulation state; every field participates in snapshots, so a
/// restored state evolves bit-identically.
struct SimState {
    double clock = 0;
    bool ended = false;
    std::string end_state;
    std::string end_severity;
    double path_prob = 1.0;

    std::vector<int> comp_state;
    std::vector<double> var_values;

    struct Timer {
        bool active = false;
        bool hazard = false;  // integrated-hazard mode (rate-modified exponential)
        double fire_time = 0; // scheduled mode
        double acc = 0, threshold = 0;
    };
    std::vector<Timer> timers; // one per timed transition, CompiledModel order

    std::deque<std::string> event_queue; // raised triggers, FIFO
    bool has_current_event = false;
    std::string current_event;
    int scan_comp = 0, scan_trans = 0;

    std::deque<int> pending_arm_slots; // branchable timers awaiting a branch point

    struct PendingBranch {
        std::uint64_t token = 0;
        double at_time = 0;
        bool timed_bins = false;
        int comp = -1, trans = -1;
        std::string source_id;
        std::uint64_t stats_key = 0;
        std::vector<int> outcome_idx;    // demand branches
        std::vector<double> probs;
        std::vector<double> fire_times;  // timed bins; -1 on the survival branch
    };
    std::optional<PendingBranch> pending;

    Rng rng;
    std::uint64_t branch_token_counter = 0;
    std::uint32_t instant_count = 0;
    double instant_clock = 0;

    std::vector<TraceEvent> trace;
};

struct StepOutcome {
    enum class Kind { Advanced, AtBranchPoint, Ended };
    Kind kind = Kind::Advanced;
};

struct Crossing {
    enum class What { EndState, Guard, Hazard };
    What what;
    int index; // end-state index / conditional index / timer slot
    double time;
};

using Snapshot = std::vector<std::uint8_t>;

/// Inverse-CDF firing time for a draw u in (0,1).
double sample_firing_time(const Distribution& d, double u);
/// P(T <= dt) for the distribution.
double dist_cdf(const Distribution& d, double dt);
/// Smallest t with P(T <= t) = p.
double dist_inverse_cdf(const Distribution& d, double p);

/// One executable story over a model. Owns its SimState; the CompiledModel is
/// shared and never written. A Simulation is confined to one thread at a time.
class Simulation {
  public:
    Simulation(const CompiledModel& cm, std::uint64_t seed, SimOptions opts = {});
    Simulation(const CompiledModel& cm, Rng rng, SimOptions opts = {});

    /// Advance to the next event: a discrete transition, a branch point, or an
    /// end state. Throws SimulationError if the state has ended or a branch
    /// point is unresolved.
    StepOutcome step();

    /// Run until a branch point or the end of the story.
    StepOutcome run_to_event();

    /// Resolve the pending branch point with one of its branches.
    void apply_branch(const Branch& b);

    const BranchPoint& pending_branch_point() const;
    bool at_branch_point() const { return state_.pending.has_value(); }

    /// Serialize the complete state (options, RNG, trace included) so that a
    /// restored simulation evolves bit-identically.
    Snapshot snapshot() const;
    static Simulation restore(const CompiledModel& cm, const Snapshot& bytes);

    /// Integrate the continuous state toward `until`, stopping at the first
    /// monitor crossing without applying its effect (exposed for tests; step()
    /// is the driver that also applies effects).
    std::optional<Crossing> integrate_until(double until);

    const SimState& state() const { return state_; }
    const CompiledModel& compiled() const { return cm_; }
    const SimOptions& options() const { return opts_; }

    /// Trace as CSV (`time,kind,detail,prob` with a header row).
    std::string trace_csv() const;

    /// Product of branch probabilities recomputed from the trace.
    double trace_probability() const;

  private:
    struct Monitor;

    void arm_component(int comp);
    void apply_state_change(int comp, int to_state);
    void queue_emits(const std::vector<std::string>& emits);
    void fire_transition(int comp, int trans, const char* how);
    bool scan_demand(StepOutcome& out);
    int satisfied_end_state() const;
    bool conditional_ready(int& index) const;
    StepOutcome end_story(int declared_index);
    void note_instant_work();
    std::vector<Monitor> build_monitors() const;

    const CompiledModel& cm_;
    SimOptions opts_;
    SimState state_;
};

} // namespace riskex
