#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "riskex/planner.hpp"
#include "riskex/sim.hpp"

namespace riskex {

enum class ExploreMode { Systematic, Guided, Targeted };

const char* explore_mode_name(ExploreMode m);
ExploreMode explore_mode_from_name(const std::string& n);

struct ExplorationConfig {
    ExploreMode mode = ExploreMode::Systematic;
    double p_lim = 0.0;            ///< abandon paths whose cumulative probability drops below
    std::uint64_t n_sequences = 1000;
    double alpha = 1.0;            ///< branch-probability exponent
    double beta = 1.0;             ///< plan-importance exponent
    double gamma = 1.0;            ///< entropy-score exponent
    std::uint64_t seed = 0;
    int max_depth = 256;           ///< branch points per path
    std::string target_event;     ///< targeted mode: "comp=STATE" or "functionality/lost|gained"
    double target_boost = 10.0;
    int workers = 1;
    int stats_batch = 32;          ///< stories per branch-stats refresh (fixed, so worker
                                   ///< count never changes results)
    SimOptions sim;                ///< timed policy is set per mode internally
};

struct TruncationLedger {
    double truncated_mass = 0;
    std::uint64_t truncated_count = 0;
    std::uint64_t depth_capped = 0; ///< subset of truncated_count cut by max_depth
};

/// Per-branch visit and end-state frequency counts, keyed by
/// (transition stats key << 8) | branch index.
struct BranchStats {
    struct Cell {
        std::uint64_t visits = 0;
        std::map<std::string, std::uint64_t> end_counts;
    };
    std::map<std::uint64_t, Cell> cells;
    void merge(const BranchStats& other);
    static std::uint64_t branch_key(std::uint64_t stats_key, int branch_index) {
        return (stats_key << 8) | static_cast<std::uint64_t>(branch_index & 0xff);
    }
};

inline constexpr double kEntropyFloor = 0.05;

/// Normalized Shannon entropy of the Dirichlet(1)-smoothed end-state
/// distribution recorded under a branch; in [kEntropyFloor, 1]. Unvisited
/// branches score 1; a degenerate single end state scores the floor.
double entropy_score(const BranchStats& bs, std::uint64_t branch_key, int n_end_states);

struct StoryRecord {
    std::uint64_t index = 0;
    std::string end_state;
    std::string severity;
    double path_prob = 1.0; ///< product of branch probabilities along the story
    double weight = 1.0;    ///< importance-sampling weight, 1 in systematic mode
    double end_time = 0;
    std::vector<TraceEvent> trace;
    std::vector<FuncEvent> func_events;
    std::vector<std::uint64_t> branch_keys;
    bool contains_target = false;
};

struct EndStateEstimate {
    std::string name;
    std::string severity;
    bool exact = false;
    double estimate = 0;
    double sum_w = 0, sum_w2 = 0; ///< importance-weighted indicator moments
    std::uint64_t n = 0;
    double variance = 0; ///< variance of the estimate (s^2/n)
    double ci_lo = 0, ci_hi = 0; ///< 95% normal interval; equal to estimate when exact
};

struct ExplorationResult {
    ExploreMode mode = ExploreMode::Systematic;
    std::string model_name;
    std::uint64_t seed = 0;
    std::uint64_t n_stories = 0;
    std::map<std::string, EndStateEstimate> estimates;
    std::vector<StoryRecord> stories;
    TruncationLedger ledger;
    double unexplored_mass = 0;
    BranchStats stats;
    int rounds = 1;
    double p_lim_final = 0;
    std::uint64_t target_hits = 0;
    std::string target_event;

    /// Recompute estimate/variance/CI fields from the accumulated moments.
    void finalize();
};

/// Exhaustive depth-first dynamic event tree with Plim truncation. Paths whose
/// cumulative probability falls below p_lim are abandoned into the ledger; if
/// the tree empties with fewer than n_sequences completed stories and mass was
/// truncated, another round runs with p_lim/10.
ExplorationResult explore_systematic(const CompiledModel& cm, const ExplorationConfig& cfg);

/// Plan-guided randomized exploration. At each branch point, branch b is
/// chosen with probability q_b proportional to p^alpha * I^beta * H^gamma and
/// every story carries the weight prod(p_b/q_b), which keeps end-state
/// estimates unbiased.
ExplorationResult explore_guided(const CompiledModel& cm, const PlanRuntime& plan,
                                 const ExplorationConfig& cfg);

/// Guided exploration with the importance of branches on scenarios containing
/// `target_event` multiplied by cfg.target_boost; reports how many distinct
/// stories contained the target.
ExplorationResult explore_targeted(const CompiledModel& cm, const PlanRuntime& plan,
                                   const std::string& target_event, const ExplorationConfig& cfg);

/// Order-independent pooling of results from the same model and mode.
ExplorationResult merge_results(const std::vector<ExplorationResult>& rs);

/// Abstract traces (for refine_plan) from a result's stories.
std::vector<AbstractTrace> abstract_traces(const ExplorationResult& r);

/// End-state table as CSV: end_state,estimate,ci_low,ci_high,n_stories.
std::string endstates_csv(const ExplorationResult& r);

} // namespace riskex
