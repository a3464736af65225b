#include "riskex/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

namespace riskex {

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// pow that is exact at the axis points so the pure strategies reduce cleanly
double wpow(double x, double e) {
    if (e == 0.0) return 1.0;
    if (e == 1.0) return x;
    return std::pow(x, e);
}

void check_config(const ExplorationConfig& cfg) {
    if (!(cfg.p_lim >= 0.0 && cfg.p_lim < 1.0))
        throw ValidationError("p_lim must lie in [0,1)");
    if (cfg.n_sequences < 1) throw ValidationError("n_sequences must be >= 1");
    if (cfg.alpha < 0 || cfg.beta < 0 || cfg.gamma < 0)
        throw ValidationError("selection exponents must be >= 0");
    if (cfg.max_depth < 1) throw ValidationError("max_depth must be >= 1");
}

void init_estimates(ExplorationResult& r, const SystemModel& m) {
    for (const auto& [name, severity] : m.all_end_states()) {
        EndStateEstimate e;
        e.name = name;
        e.severity = severity;
        r.estimates[name] = std::move(e);
    }
}

// Target of a targeted search: either a component entering a state or a
// functionality change.
struct TargetSpec {
    bool is_state = false;
    int comp = -1, state = -1;
    FuncEvent event;
};

TargetSpec parse_target(const CompiledModel& cm, const PlanRuntime* plan,
                        const std::string& text) {
    TargetSpec t;
    if (auto eq = text.find('='); eq != std::string::npos && text.find('/') == std::string::npos) {
        t.is_state = true;
        const std::string comp = text.substr(0, eq);
        const std::string state = text.substr(eq + 1);
        t.comp = cm.comp_index(comp);
        if (t.comp < 0)
            throw ValidationError("target event names unknown component '" + comp + "'");
        t.state = cm.model().state_index(t.comp, state);
        if (t.state < 0)
            throw ValidationError("'" + state + "' is not a state of component '" + comp + "'");
        return t;
    }
    t.event = FuncEvent::parse(text);
    if (plan) {
        const auto& names = plan->functionality_names();
        if (std::find(names.begin(), names.end(), t.event.functionality) == names.end())
            throw ValidationError("target event names unknown functionality '" +
                                  t.event.functionality + "'");
    }
    return t;
}

} // namespace

const char* explore_mode_name(ExploreMode m) {
    switch (m) {
        case ExploreMode::Systematic: return "systematic";
        case ExploreMode::Guided: return "guided";
        case ExploreMode::Targeted: return "targeted";
    }
    return "?";
}

ExploreMode explore_mode_from_name(const std::string& n) {
    if (n == "systematic") return ExploreMode::Systematic;
    if (n == "guided") return ExploreMode::Guided;
    if (n == "targeted") return ExploreMode::Targeted;
    throw ValidationError("unknown exploration mode '" + n + "'");
}

void BranchStats::merge(const BranchStats& other) {
    for (const auto& [key, cell] : other.cells) {
        auto& mine = cells[key];
        mine.visits += cell.visits;
        for (const auto& [name, c] : cell.end_counts) mine.end_counts[name] += c;
    }
}

double entropy_score(const BranchStats& bs, std::uint64_t branch_key, int n_end_states) {
    if (n_end_states <= 1) return kEntropyFloor;
    const BranchStats::Cell* cell = nullptr;
    if (auto it = bs.cells.find(branch_key); it != bs.cells.end()) cell = &it->second;

    const double total =
        static_cast<double>(n_end_states) + (cell ? static_cast<double>(cell->visits) : 0.0);
    double entropy = 0;
    int known = 0;
    if (cell) {
        for (const auto& [name, c] : cell->end_counts) {
            (void)name;
            const double p = (static_cast<double>(c) + 1.0) / total;
            entropy -= p * std::log(p);
            ++known;
        }
    }
    const int rest = n_end_states - known;
    if (rest > 0) {
        const double p0 = 1.0 / total;
        entropy -= rest * p0 * std::log(p0);
    }
    return std::max(entropy / std::log(static_cast<double>(n_end_states)), kEntropyFloor);
}

void ExplorationResult::finalize() {
    for (auto& [name, e] : estimates) {
        (void)name;
        if (e.exact) {
            e.variance = 0;
            e.ci_lo = e.ci_hi = e.estimate;
            continue;
        }
        const double n = static_cast<double>(e.n);
        if (e.n == 0) continue;
        e.estimate = e.sum_w / n;
        if (e.n > 1) {
            const double s2 =
                std::max(0.0, (e.sum_w2 - n * e.estimate * e.estimate) / (n - 1.0));
            e.variance = s2 / n;
        } else {
            e.variance = 0;
        }
        const double half = 1.959963984540054 * std::sqrt(e.variance);
        e.ci_lo = std::max(0.0, e.estimate - half);
        e.ci_hi = e.estimate + half;
    }
}

// ---- systematic -------------------------------------------------------------

namespace {

struct FrontierEntry {
    Snapshot snap;
    std::vector<Branch> branches;
    std::uint64_t stats_key = 0;
    int next = 0;
    double path_prob = 0; ///< cumulative probability at the branch point
    int depth = 0;
};

ExplorationResult run_systematic_round(const CompiledModel& cm, const ExplorationConfig& cfg,
                                       double p_lim) {
    ExplorationResult r;
    r.mode = ExploreMode::Systematic;
    r.model_name = cm.model().name;
    r.seed = cfg.seed;
    r.p_lim_final = p_lim;
    init_estimates(r, cm.model());

    SimOptions opts = cfg.sim;
    opts.timed_policy = TimedPolicy::SystematicBins;

    std::vector<FrontierEntry> stack;

    auto record_story = [&](Simulation& sim) {
        StoryRecord st;
        st.index = r.n_stories++;
        st.end_state = sim.state().end_state;
        st.severity = sim.state().end_severity;
        st.path_prob = sim.state().path_prob;
        st.weight = 1.0;
        st.end_time = sim.state().clock;
        st.trace = sim.state().trace;
        for (const auto& e : stack)
            st.branch_keys.push_back(BranchStats::branch_key(e.stats_key, e.next - 1));
        for (auto key : st.branch_keys) {
            auto& cell = r.stats.cells[key];
            ++cell.visits;
            ++cell.end_counts[st.end_state];
        }
        auto& est = r.estimates.at(st.end_state);
        est.exact = true;
        est.estimate += st.path_prob;
        ++est.n;
        r.stories.push_back(std::move(st));
    };

    // run a fresh or just-branched simulation until it ends or branches
    auto advance = [&](Simulation&& sim, int depth) {
        for (;;) {
            StepOutcome out = sim.run_to_event();
            if (out.kind == StepOutcome::Kind::Ended) {
                record_story(sim);
                return;
            }
            const BranchPoint& bp = sim.pending_branch_point();
            FrontierEntry e;
            e.snap = sim.snapshot();
            e.branches = bp.branches;
            e.stats_key = bp.stats_key;
            e.path_prob = sim.state().path_prob;
            e.depth = depth;
            stack.push_back(std::move(e));
            return;
        }
    };

    advance(Simulation(cm, cfg.seed, opts), 0);

    while (!stack.empty() && r.n_stories < cfg.n_sequences) {
        FrontierEntry& top = stack.back();
        if (top.next >= static_cast<int>(top.branches.size())) {
            stack.pop_back();
            continue;
        }
        const Branch& b = top.branches[static_cast<std::size_t>(top.next++)];
        const double cum = top.path_prob * b.prob;
        if (p_lim > 0 && cum < p_lim) {
            r.ledger.truncated_mass += cum;
            ++r.ledger.truncated_count;
            continue;
        }
        if (top.depth + 1 > cfg.max_depth) {
            r.ledger.truncated_mass += cum;
            ++r.ledger.truncated_count;
            ++r.ledger.depth_capped;
            continue;
        }
        Simulation sim = Simulation::restore(cm, top.snap);
        sim.apply_branch(b);
        const int depth = top.depth + 1; // top may dangle after stack growth
        advance(std::move(sim), depth);
    }

    // anything still on the stack was never expanded
    for (const auto& e : stack)
        for (std::size_t i = static_cast<std::size_t>(e.next); i < e.branches.size(); ++i)
            r.unexplored_mass += e.path_prob * e.branches[i].prob;

    r.finalize();
    return r;
}

} // namespace

ExplorationResult explore_systematic(const CompiledModel& cm, const ExplorationConfig& cfg) {
    check_config(cfg);
    if (cfg.mode != ExploreMode::Systematic)
        throw ValidationError("explore_systematic requires mode=systematic");
    double p_lim = cfg.p_lim;
    int rounds = 1;
    for (;;) {
        ExplorationResult r = run_systematic_round(cm, cfg, p_lim);
        r.rounds = rounds;
        const bool exhausted = r.unexplored_mass == 0.0;
        if (r.n_stories >= cfg.n_sequences || !exhausted || r.ledger.truncated_count == 0 ||
            p_lim <= 0)
            return r;
        // another round with a lower threshold until the user's story count is met
        p_lim = p_lim < 1e-300 ? 0.0 : p_lim / 10.0;
        ++rounds;
    }
}

// ---- guided / targeted -------------------------------------------------------

namespace {

struct GuidedContext {
    const CompiledModel& cm;
    const PlanRuntime& plan;
    const ExplorationConfig& cfg;
    const TargetSpec* target; // null unless targeted
    int n_end_states;
    std::vector<bool> scenario_has_target;
};

StoryRecord run_guided_story(const GuidedContext& g, std::uint64_t story_index,
                             const BranchStats& committed) {
    const auto& cfg = g.cfg;
    SimOptions opts = cfg.sim;
    opts.timed_policy = TimedPolicy::Sample;

    Simulation sim(g.cm, Rng::stream(cfg.seed, story_index), opts);
    Rng sel = Rng::stream(cfg.seed ^ 0x5DEECE66DULL, story_index);

    ScenarioCursors cursors = g.plan.make_cursors();
    // component states replayed from the trace so functionality changes keep
    // their time order even when one step applies several transitions
    std::vector<int> cs = sim.state().comp_state;
    std::vector<bool> fstat = g.plan.func_status(g.plan.binary_status(cs));

    StoryRecord st;
    st.index = story_index;
    std::size_t trace_pos = 0;
    int depth = 0;

    auto consume_trace = [&]() {
        const auto& trace = sim.state().trace;
        for (; trace_pos < trace.size(); ++trace_pos) {
            const auto& ev = trace[trace_pos];
            if (ev.comp < 0) continue;
            cs[static_cast<std::size_t>(ev.comp)] = ev.to_state;
            if (g.target && g.target->is_state && ev.comp == g.target->comp &&
                ev.to_state == g.target->state)
                st.contains_target = true;
            auto now = g.plan.func_status(g.plan.binary_status(cs));
            for (const auto& fe : g.plan.diff(fstat, now)) {
                match_event(g.plan.plan(), cursors, fe);
                st.func_events.push_back(fe);
                if (g.target && !g.target->is_state && fe == g.target->event)
                    st.contains_target = true;
            }
            fstat = std::move(now);
        }
    };

    for (;;) {
        StepOutcome out = sim.run_to_event();
        consume_trace();
        if (out.kind == StepOutcome::Kind::Ended) break;

        const BranchPoint& bp = sim.pending_branch_point();
        if (++depth > cfg.max_depth)
            throw SimulationError("max_depth exceeded in guided story " +
                                  std::to_string(story_index));
        const std::size_t nb = bp.branches.size();
        std::vector<double> q(nb);
        double total = 0;
        for (std::size_t i = 0; i < nb; ++i) {
            const Branch& b = bp.branches[i];
            double imp = 1.0;
            if (b.comp >= 0) {
                // hypothetical functionality changes if this outcome applied
                auto cs2 = cs;
                cs2[static_cast<std::size_t>(b.comp)] = b.to_state;
                auto f2 = g.plan.func_status(g.plan.binary_status(cs2));
                bool matched = false;
                for (const auto& fe : g.plan.diff(fstat, f2)) {
                    double fimp = 1.0;
                    bool fmatched = false;
                    for (std::size_t s = 0; s < g.plan.plan().scenarios.size(); ++s) {
                        const auto& sc = g.plan.plan().scenarios[s];
                        if (cursors.pos[s] < sc.events.size() &&
                            sc.events[cursors.pos[s]] == fe) {
                            double v = sc.importance;
                            if (g.target && !g.target->is_state && g.scenario_has_target[s])
                                v *= cfg.target_boost;
                            fimp = fmatched ? std::max(fimp, v) : v;
                            fmatched = true;
                        }
                    }
                    if (fmatched) {
                        imp = matched ? std::max(imp, fimp) : fimp;
                        matched = true;
                    }
                }
                if (g.target && g.target->is_state && ci == g.target->comp &&
                    b.to_state == g.target->state)
                    imp *= cfg.target_boost;
            }
            const double h = entropy_score(
                committed, BranchStats::branch_key(bp.stats_key, b.index), g.n_end_states);
            q[i] = wpow(b.prob, cfg.alpha) * wpow(imp, cfg.beta) * wpow(h, cfg.gamma);
            total += q[i];
        }
        if (!(total > 0))
            throw Error("branch selection weights vanished at " + bp.source);

        const double u = sel.uniform() * total;
        std::size_t chosen = nb - 1;
        double acc = 0;
        for (std::size_t i = 0; i < nb; ++i) {
            acc += q[i];
            if (u < acc) {
                chosen = i;
                break;
            }
        }
        const Branch& b = bp.branches[chosen];
        st.weight *= b.prob / (q[chosen] / total);
        st.branch_keys.push_back(BranchStats::branch_key(bp.stats_key, b.index));
        sim.apply_branch(b);
        consume_trace();
    }

    st.end_state = sim.state().end_state;
    st.severity = sim.state().end_severity;
    st.path_prob = sim.state().path_prob;
    st.end_time = sim.state().clock;
    st.trace = sim.state().trace;
    return st;
}

ExplorationResult run_sampled(const CompiledModel& cm, const PlanRuntime& plan,
                              const ExplorationConfig& cfg, const TargetSpec* target) {
    ExplorationResult r;
    r.mode = target ? ExploreMode::Targeted : ExploreMode::Guided;
    r.model_name = cm.model().name;
    r.seed = cfg.seed;
    r.p_lim_final = cfg.p_lim;
    init_estimates(r, cm.model());

    GuidedContext g{cm, plan, cfg, target,
                    static_cast<int>(cm.model().end_states.size()) + 1,
                    {}};
    if (target && !target->is_state) {
        for (const auto& sc : plan.plan().scenarios) {
            bool has = false;
            for (const auto& e : sc.events)
                if (e == target->event) has = true;
            g.scenario_has_target.push_back(has);
        }
    } else {
        g.scenario_has_target.assign(plan.plan().scenarios.size(), false);
    }

    const std::uint64_t n = cfg.n_sequences;
    const std::uint64_t batch = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(cfg.stats_batch));
    const int workers = std::max(1, cfg.workers);

    for (std::uint64_t base = 0; base < n; base += batch) {
        const std::uint64_t count = std::min(batch, n - base);
        std::vector<StoryRecord> records(count);
        auto work = [&](int tid) {
            for (std::uint64_t k = static_cast<std::uint64_t>(tid); k < count;
                 k += static_cast<std::uint64_t>(workers))
                records[k] = run_guided_story(g, base + k, r.stats);
        };
        if (workers == 1 || count == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < workers; ++t) pool.emplace_back(work, t);
            for (auto& th : pool) th.join();
        }
        // commit in story order: stats for the next batch, estimates, stories
        for (auto& st : records) {
            for (auto key : st.branch_keys) {
                auto& cell = r.stats.cells[key];
                ++cell.visits;
                ++cell.end_counts[st.end_state];
            }
            if (st.contains_target) ++r.target_hits;
            auto& est = r.estimates.at(st.end_state);
            est.sum_w += st.weight;
            est.sum_w2 += st.weight * st.weight;
            r.stories.push_back(std::move(st));
        }
        r.n_stories += count;
    }
    for (auto& [name, est] : r.estimates) {
        (void)name;
        est.n = r.n_stories;
    }
    r.finalize();
    return r;
}

} // namespace

ExplorationResult explore_guided(const CompiledModel& cm, const PlanRuntime& plan,
                                 const ExplorationConfig& cfg) {
    check_config(cfg);
    if (cfg.mode != ExploreMode::Guided)
        throw ValidationError("explore_guided requires mode=guided");
    return run_sampled(cm, plan, cfg, nullptr);
}

ExplorationResult explore_targeted(const CompiledModel& cm, const PlanRuntime& plan,
                                   const std::string& target_event,
                                   const ExplorationConfig& cfg) {
    check_config(cfg);
    if (cfg.mode != ExploreMode::Targeted)
        throw ValidationError("explore_targeted requires mode=targeted");
    TargetSpec target = parse_target(cm, &plan, target_event);
    ExplorationResult r = run_sampled(cm, plan, cfg, &target);
    r.target_event = target_event;
    return r;
}

ExplorationResult merge_results(const std::vector<ExplorationResult>& rs) {
    if (rs.empty()) throw ValidationError("merge_results needs at least one result");
    for (const auto& r : rs) {
        if (r.mode != rs[0].mode) throw ValidationError("cannot merge results of mixed modes");
        if (r.model_name != rs[0].model_name)
            throw ValidationError("cannot merge results from different models");
    }
    ExplorationResult out = rs[0];
    for (std::size_t i = 1; i < rs.size(); ++i) {
        const auto& r = rs[i];
        out.n_stories += r.n_stories;
        out.rounds = std::max(out.rounds, r.rounds);
        out.ledger.truncated_mass += r.ledger.truncated_mass;
        out.ledger.truncated_count += r.ledger.truncated_count;
        out.ledger.depth_capped += r.ledger.depth_capped;
        out.unexplored_mass += r.unexplored_mass;
        out.target_hits += r.target_hits;
        out.stats.merge(r.stats);
        for (const auto& st : r.stories) {
            out.stories.push_back(st);
            out.stories.back().index = out.stories.size() - 1;
        }
        for (const auto& [name, est] : r.estimates) {
            auto& mine = out.estimates[name];
            if (est.exact) {
                // disjoint partitions of one tree: masses add
                mine.estimate += est.estimate;
                mine.exact = true;
                mine.n += est.n;
            } else {
                mine.sum_w += est.sum_w;
                mine.sum_w2 += est.sum_w2;
                mine.n += est.n;
            }
        }
    }
    out.finalize();
    return out;
}

std::vector<AbstractTrace> abstract_traces(const ExplorationResult& r) {
    std::vector<AbstractTrace> out;
    out.reserve(r.stories.size());
    for (const auto& st : r.stories) out.push_back({st.func_events, st.end_state});
    return out;
}

std::string endstates_csv(const ExplorationResult& r) {
    std::string out = "end_state,estimate,ci_low,ci_high,n_stories\n";
    for (const auto& [name, e] : r.estimates) {
        out += name;
        out += ',';
        out += fmt_g(e.estimate);
        out += ',';
        out += fmt_g(e.ci_lo);
        out += ',';
        out += fmt_g(e.ci_hi);
        out += ',';
        out += std::to_string(e.n);
        out += '\n';
    }
    return out;
}

} // namespace riskex
