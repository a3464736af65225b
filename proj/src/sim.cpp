#include "riskex/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace riskex {

namespace {

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// ---- snapshot byte helpers -------------------------------------------------

constexpr std::uint32_t kSnapMagic = 0x4e535852; // "RXSN"
constexpr std::uint16_t kSnapVersion = 1;

struct Writer {
    std::vector<std::uint8_t> buf;
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
};

struct Reader {
    const std::uint8_t* p;
    std::size_t size, pos = 0;
    void need(std::size_t n) {
        if (pos + n > size) throw SnapshotError("snapshot truncated");
    }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint16_t u16() {
        std::uint16_t v;
        need(2);
        std::memcpy(&v, p + pos, 2);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        need(4);
        std::memcpy(&v, p + pos, 4);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        need(8);
        std::memcpy(&v, p + pos, 8);
        pos += 8;
        return v;
    }
    std::int32_t i32() {
        std::int32_t v;
        need(4);
        std::memcpy(&v, p + pos, 4);
        pos += 4;
        return v;
    }
    double f64() {
        double v;
        need(8);
        std::memcpy(&v, p + pos, 8);
        pos += 8;
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
};

// Environment over the live simulation state. `vars` may point at an
// integration stage buffer.
class SimEnv : public Env {
  public:
    SimEnv(const CompiledModel& cm, const std::vector<int>& comp_state, const double* vars,
           double t)
        : cm_(cm), comp_state_(comp_state), vars_(vars), t_(t) {}

    std::optional<Value> lookup(const std::string& name) const override {
        if (name == "t") return Value{t_};
        if (name == "mission_time") return Value{cm_.model().mission_time};
        if (int v = cm_.var_index(name); v >= 0)
            return Value{vars_ ? vars_[v] : cm_.model().var_initial(v)};
        if (int c = cm_.comp_index(name); c >= 0) {
            const auto& comp = cm_.model().components[static_cast<std::size_t>(c)];
            return Value{StateToken{comp.states[static_cast<std::size_t>(
                comp_state_[static_cast<std::size_t>(c)])]}};
        }
        return std::nullopt;
    }

  private:
    const CompiledModel& cm_;
    const std::vector<int>& comp_state_;
    const double* vars_;
    double t_;
};

} // namespace

const char* trace_kind_name(TraceEvent::Kind k) {
    switch (k) {
        case TraceEvent::Kind::Transition: return "transition";
        case TraceEvent::Kind::ThresholdCrossing: return "threshold_crossing";
        case TraceEvent::Kind::BranchTaken: return "branch_taken";
        case TraceEvent::Kind::EndState: return "end_state";
    }
    return "?";
}

// ---- distributions ----------------------------------------------------------

double sample_firing_time(const Distribution& d, double u) {
    if (!(u > 0.0 && u < 1.0)) throw SimulationError("firing-time draw must lie in (0,1)");
    switch (d.kind) {
        case Distribution::Kind::Exponential: return -std::log(u) / d.lambda;
        case Distribution::Kind::Weibull:
            return d.lambda * std::pow(-std::log(u), 1.0 / d.shape);
        case Distribution::Kind::Fixed: return d.time;
    }
    throw SimulationError("unknown distribution");
}

double dist_cdf(const Distribution& d, double dt) {
    if (dt <= 0) return 0.0;
    switch (d.kind) {
        case Distribution::Kind::Exponential: return -std::expm1(-d.lambda * dt);
        case Distribution::Kind::Weibull: return -std::expm1(-std::pow(dt / d.lambda, d.shape));
        case Distribution::Kind::Fixed: return dt >= d.time ? 1.0 : 0.0;
    }
    return 0.0;
}

double dist_inverse_cdf(const Distribution& d, double p) {
    if (!(p >= 0.0 && p < 1.0)) throw SimulationError("quantile level must lie in [0,1)");
    switch (d.kind) {
        case Distribution::Kind::Exponential: return -std::log1p(-p) / d.lambda;
        case Distribution::Kind::Weibull:
            return d.lambda * std::pow(-std::log1p(-p), 1.0 / d.shape);
        case Distribution::Kind::Fixed: return d.time;
    }
    return 0.0;
}

// ---- CompiledModel ----------------------------------------------------------

CompiledModel::CompiledModel(const SystemModel& m) : model_(&m) {
    const std::string canon = serialize_model(m);
    fingerprint_ = fnv1a64(canon.data(), canon.size());
    slots_by_comp_.resize(m.components.size());
    for (std::size_t c = 0; c < m.components.size(); ++c) {
        comp_index_[m.components[c].name] = static_cast<int>(c);
        for (std::size_t t = 0; t < m.components[c].transitions.size(); ++t) {
            const auto& tr = m.components[c].transitions[t];
            switch (tr.kind) {
                case TransitionSpec::Kind::Timed:
                    slots_by_comp_[c].push_back(static_cast<int>(timed_slots_.size()));
                    timed_slots_.push_back({static_cast<int>(c), static_cast<int>(t)});
                    break;
                case TransitionSpec::Kind::Demand:
                    demands_by_trigger_[tr.trigger].push_back(
                        {static_cast<int>(c), static_cast<int>(t)});
                    break;
                case TransitionSpec::Kind::Conditional:
                    conditionals_.push_back({static_cast<int>(c), static_cast<int>(t)});
                    break;
            }
        }
    }
    for (std::size_t v = 0; v < m.continuous_vars.size(); ++v)
        var_index_[m.continuous_vars[v].name] = static_cast<int>(v);
}

const std::vector<CompiledModel::TransRef>* CompiledModel::demands_for(
    const std::string& trigger) const {
    auto it = demands_by_trigger_.find(trigger);
    return it == demands_by_trigger_.end() ? nullptr : &it->second;
}

int CompiledModel::slot_for(int comp, int trans) const {
    for (std::size_t s = 0; s < timed_slots_.size(); ++s)
        if (timed_slots_[s].comp == comp && timed_slots_[s].trans == trans)
            return static_cast<int>(s);
    return -1;
}

int CompiledModel::comp_index(const std::string& n) const {
    auto it = comp_index_.find(n);
    return it == comp_index_.end() ? -1 : it->second;
}

int CompiledModel::var_index(const std::string& n) const {
    auto it = var_index_.find(n);
    return it == var_index_.end() ? -1 : it->second;
}

bool CompiledModel::expr_refs_vars(const Expression& e) const {
    for (const auto& n : e.referenced_names())
        if (var_index(n) >= 0) return true;
    return false;
}

bool CompiledModel::expr_refs_time(const Expression& e) {
    for (const auto& n : e.referenced_names())
        if (n == "t") return true;
    return false;
}

std::string CompiledModel::transition_id(int comp, int trans) const {
    const auto& c = model_->components[static_cast<std::size_t>(comp)];
    const auto& tr = c.transitions[static_cast<std::size_t>(trans)];
    switch (tr.kind) {
        case TransitionSpec::Kind::Demand: return c.name + "." + tr.trigger + "@" + tr.source;
        case TransitionSpec::Kind::Timed:
            return c.name + "." + tr.source + "->" + tr.target + "(timed)";
        case TransitionSpec::Kind::Conditional:
            return c.name + "." + tr.source + "->" + tr.target + "(guard)";
    }
    return c.name + ".?";
}

// ---- Simulation -------------------------------------------------------------

Simulation::Simulation(const CompiledModel& cm, std::uint64_t seed, SimOptions opts)
    : Simulation(cm, Rng(seed), opts) {}

Simulation::Simulation(const CompiledModel& cm, Rng rng, SimOptions opts)
    : cm_(cm), opts_(opts) {
    const auto& m = cm.model();
    state_.rng = rng;
    state_.comp_state.resize(m.components.size());
    for (std::size_t c = 0; c < m.components.size(); ++c) {
        const auto& name = m.components[c].name;
        state_.comp_state[c] = m.state_index(static_cast<int>(c), m.initial_states.at(name));
    }
    state_.var_values.resize(m.continuous_vars.size());
    for (std::size_t v = 0; v < m.continuous_vars.size(); ++v)
        state_.var_values[v] = m.var_initial(static_cast<int>(v));
    state_.timers.resize(cm.timed_slots().size());
    for (std::size_t c = 0; c < m.components.size(); ++c) arm_component(static_cast<int>(c));
}

void Simulation::arm_component(int comp) {
    const auto& m = cm_.model();
    const auto& cspec = m.components[static_cast<std::size_t>(comp)];
    const std::string& cur = cspec.states[static_cast<std::size_t>(
        state_.comp_state[static_cast<std::size_t>(comp)])];
    for (int s : cm_.slots_by_comp_[static_cast<std::size_t>(comp)]) {
        const auto& slot = cm_.timed_slots()[static_cast<std::size_t>(s)];
        const auto& tr = cspec.transitions[static_cast<std::size_t>(slot.trans)];
        auto& timer = state_.timers[static_cast<std::size_t>(s)];
        timer = {};
        // drop any stale arm request for this slot
        auto& q = state_.pending_arm_slots;
        q.erase(std::remove(q.begin(), q.end(), s), q.end());
        if (tr.source != cur) continue;
        if (tr.dist.kind == Distribution::Kind::Fixed) {
            timer.active = true;
            timer.fire_time = state_.clock + tr.dist.time;
            continue;
        }
        if (opts_.timed_policy == TimedPolicy::Sample) {
            if (tr.rate_modifier) {
                timer.active = true;
                timer.hazard = true;
                timer.acc = 0;
                timer.threshold = -std::log(state_.rng.uniform_open());
            } else {
                timer.active = true;
                timer.fire_time =
                    state_.clock + sample_firing_time(tr.dist, state_.rng.uniform_open());
            }
        } else if (tr.branchable) {
            state_.pending_arm_slots.push_back(s);
        }
        // non-branchable stochastic transitions never fire under SystematicBins
    }
}

void Simulation::apply_state_change(int comp, int to_state) {
    if (state_.comp_state[static_cast<std::size_t>(comp)] == to_state) return;
    state_.comp_state[static_cast<std::size_t>(comp)] = to_state;
    arm_component(comp);
}

void Simulation::queue_emits(const std::vector<std::string>& emits) {
    for (const auto& e : emits) state_.event_queue.push_back(e);
}

void Simulation::note_instant_work() {
    if (state_.clock != state_.instant_clock) {
        state_.instant_clock = state_.clock;
        state_.instant_count = 0;
    }
    if (++state_.instant_count > opts_.cascade_limit)
        throw SimulationError("event cascade exceeded " + std::to_string(opts_.cascade_limit) +
                              " applications at t=" + fmt_g(state_.clock));
}

void Simulation::fire_transition(int comp, int trans, const char* how) {
    const auto& m = cm_.model();
    const auto& cspec = m.components[static_cast<std::size_t>(comp)];
    const auto& tr = cspec.transitions[static_cast<std::size_t>(trans)];
    const std::string& from = cspec.states[static_cast<std::size_t>(
        state_.comp_state[static_cast<std::size_t>(comp)])];
    const int target = m.state_index(comp, tr.target);
    TraceEvent ev;
    ev.time = state_.clock;
    ev.kind = TraceEvent::Kind::Transition;
    ev.detail = cspec.name + ": " + from + "->" + tr.target + " (" + how + ")";
    ev.comp = comp;
    ev.to_state = target;
    state_.trace.push_back(std::move(ev));
    apply_state_change(comp, target);
    queue_emits(tr.emits);
    note_instant_work();
}

bool Simulation::scan_demand(StepOutcome& out) {
    const auto& m = cm_.model();
    while (state_.has_current_event || !state_.event_queue.empty()) {
        if (!state_.has_current_event) {
            state_.current_event = state_.event_queue.front();
            state_.event_queue.pop_front();
            state_.scan_comp = 0;
            state_.scan_trans = 0;
            state_.has_current_event = true;
        }
        while (state_.scan_comp < static_cast<int>(m.components.size())) {
            const auto& cspec = m.components[static_cast<std::size_t>(state_.scan_comp)];
            if (state_.scan_trans >= static_cast<int>(cspec.transitions.size())) {
                state_.scan_trans = 0;
                ++state_.scan_comp;
                continue;
            }
            const int comp = state_.scan_comp;
            const int ti = state_.scan_trans++;
            const auto& tr = cspec.transitions[static_cast<std::size_t>(ti)];
            if (tr.kind != TransitionSpec::Kind::Demand || tr.trigger != state_.current_event)
                continue;
            const std::string& cur = cspec.states[static_cast<std::size_t>(
                state_.comp_state[static_cast<std::size_t>(comp)])];
            if (tr.source != cur) continue;

            std::vector<int> live;
            for (std::size_t o = 0; o < tr.outcomes.size(); ++o)
                if (tr.outcomes[o].prob > 0) live.push_back(static_cast<int>(o));
            if (live.empty()) continue;
            if (live.size() == 1) {
                const auto& oc = tr.outcomes[static_cast<std::size_t>(live[0])];
                const int target = m.state_index(comp, oc.target);
                TraceEvent ev;
                ev.time = state_.clock;
                ev.kind = TraceEvent::Kind::Transition;
                ev.detail = cspec.name + ": " + cur + "->" + oc.target + " (demand " +
                            tr.trigger + ")";
                ev.comp = comp;
                ev.to_state = target;
                state_.trace.push_back(std::move(ev));
                apply_state_change(comp, target);
                queue_emits(oc.emits);
                note_instant_work();
                out.kind = StepOutcome::Kind::Advanced;
                return true;
            }
            SimState::PendingBranch pb;
            pb.token = ++state_.branch_token_counter;
            pb.at_time = state_.clock;
            pb.comp = comp;
            pb.trans = ti;
            pb.source_id = cm_.transition_id(comp, ti);
            pb.stats_key = (static_cast<std::uint64_t>(comp) << 24) |
                           static_cast<std::uint64_t>(ti);
            for (int o : live) {
                pb.outcome_idx.push_back(o);
                pb.probs.push_back(tr.outcomes[static_cast<std::size_t>(o)].prob);
            }
            state_.pending = std::move(pb);
            out.kind = StepOutcome::Kind::AtBranchPoint;
            return true;
        }
        state_.has_current_event = false;
    }
    return false;
}

int Simulation::satisfied_end_state() const {
    const auto& m = cm_.model();
    SimEnv env(cm_, state_.comp_state, state_.var_values.data(), state_.clock);
    for (std::size_t i = 0; i < m.end_states.size(); ++i)
        if (eval_bool(m.end_states[i].predicate, env)) return static_cast<int>(i);
    return -1;
}

bool Simulation::conditional_ready(int& index) const {
    const auto& m = cm_.model();
    SimEnv env(cm_, state_.comp_state, state_.var_values.data(), state_.clock);
    for (std::size_t i = 0; i < cm_.conditionals().size(); ++i) {
        const auto& ref = cm_.conditionals()[i];
        const auto& cspec = m.components[static_cast<std::size_t>(ref.comp)];
        const auto& tr = cspec.transitions[static_cast<std::size_t>(ref.trans)];
        const std::string& cur = cspec.states[static_cast<std::size_t>(
            state_.comp_state[static_cast<std::size_t>(ref.comp)])];
        if (tr.source != cur) continue;
        if (eval_bool(*tr.guard, env)) {
            index = static_cast<int>(i);
            return true;
        }
    }
    return false;
}

StepOutcome Simulation::end_story(int declared_index) {
    const auto& m = cm_.model();
    if (declared_index >= 0) {
        state_.end_state = m.end_states[static_cast<std::size_t>(declared_index)].name;
        state_.end_severity = m.end_states[static_cast<std::size_t>(declared_index)].severity;
    } else {
        state_.end_state = kMissionCompleteName;
        state_.end_severity = kMissionCompleteSeverity;
    }
    TraceEvent ev;
    ev.time = state_.clock;
    ev.kind = TraceEvent::Kind::EndState;
    ev.detail = state_.end_state;
    state_.trace.push_back(std::move(ev));
    state_.ended = true;
    return {StepOutcome::Kind::Ended};
}

// ---- integration -----------------------------------------------------------

struct Simulation::Monitor {
    Crossing::What what;
    int index;   // end state / conditional / hazard slot
    int haz_pos; // position of the accumulator inside y, for hazards
    const Expression* pred;
    bool dynamic; // depends on vars or t; static monitors cannot flip mid-segment
};

std::vector<Simulation::Monitor> Simulation::build_monitors() const {
    const auto& m = cm_.model();
    std::vector<Monitor> mons;
    for (std::size_t i = 0; i < m.end_states.size(); ++i) {
        const auto& e = m.end_states[i].predicate;
        if (cm_.expr_refs_vars(e) || CompiledModel::expr_refs_time(e))
            mons.push_back({Crossing::What::EndState, static_cast<int>(i), -1, &e, true});
    }
    for (std::size_t i = 0; i < cm_.conditionals().size(); ++i) {
        const auto& ref = cm_.conditionals()[i];
        const auto& cspec = m.components[static_cast<std::size_t>(ref.comp)];
        const auto& tr = cspec.transitions[static_cast<std::size_t>(ref.trans)];
        const std::string& cur = cspec.states[static_cast<std::size_t>(
            state_.comp_state[static_cast<std::size_t>(ref.comp)])];
        if (tr.source != cur) continue;
        if (cm_.expr_refs_vars(*tr.guard) || CompiledModel::expr_refs_time(*tr.guard))
            mons.push_back({Crossing::What::Guard, static_cast<int>(i), -1, &*tr.guard, true});
    }
    return mons;
}

std::optional<Crossing> Simulation::integrate_until(double until) {
    const auto& m = cm_.model();
    if (until <= state_.clock) return std::nullopt;

    // Derivative clause selection is a function of the discrete configuration,
    // which cannot change during a segment.
    const std::size_t nv = m.continuous_vars.size();
    std::vector<const Expression*> rate(nv);
    {
        SimEnv denv(cm_, state_.comp_state, state_.var_values.data(), state_.clock);
        for (std::size_t v = 0; v < nv; ++v) {
            const auto& clauses = m.continuous_vars[v].derivative;
            rate[v] = &clauses.back().rate;
            for (const auto& cl : clauses) {
                if (!cl.when) break; // default reached
                if (eval_bool(*cl.when, denv)) {
                    rate[v] = &cl.rate;
                    break;
                }
            }
        }
    }

    // Active hazard accumulators ride along as extra state.
    std::vector<int> haz_slots;
    for (std::size_t s = 0; s < state_.timers.size(); ++s)
        if (state_.timers[s].active && state_.timers[s].hazard)
            haz_slots.push_back(static_cast<int>(s));

    auto mons = build_monitors();
    for (std::size_t j = 0; j < haz_slots.size(); ++j)
        mons.push_back({Crossing::What::Hazard, haz_slots[j],
                        static_cast<int>(nv + j), nullptr, true});

    const std::size_t dims = nv + haz_slots.size();
    std::vector<double> y0(dims), y1(dims), k1(dims), k2(dims), k3(dims), k4(dims), tmp(dims);
    for (std::size_t v = 0; v < nv; ++v) y0[v] = state_.var_values[v];
    for (std::size_t j = 0; j < haz_slots.size(); ++j)
        y0[nv + j] = state_.timers[static_cast<std::size_t>(haz_slots[j])].acc;

    auto deriv = [&](double t, const std::vector<double>& y, std::vector<double>& dy) {
        SimEnv env(cm_, state_.comp_state, y.data(), t);
        for (std::size_t v = 0; v < nv; ++v) {
            dy[v] = eval_number(*rate[v], env);
            if (!std::isfinite(dy[v]))
                throw SimulationError("non-finite derivative for var '" +
                                      m.continuous_vars[v].name + "' at t=" + fmt_g(t));
        }
        for (std::size_t j = 0; j < haz_slots.size(); ++j) {
            const auto& slot = cm_.timed_slots()[static_cast<std::size_t>(haz_slots[j])];
            const auto& tr = m.components[static_cast<std::size_t>(slot.comp)]
                                 .transitions[static_cast<std::size_t>(slot.trans)];
            double mod = tr.rate_modifier ? eval_number(*tr.rate_modifier, env) : 1.0;
            if (mod < 0)
                throw SimulationError("negative rate modifier on " +
                                      cm_.transition_id(slot.comp, slot.trans) +
                                      " at t=" + fmt_g(t));
            dy[nv + j] = tr.dist.lambda * mod;
        }
    };

    auto rk4 = [&](double t0, const std::vector<double>& y, double dt, std::vector<double>& out) {
        if (dims == 0) return;
        deriv(t0, y, k1);
        for (std::size_t i = 0; i < dims; ++i) tmp[i] = y[i] + 0.5 * dt * k1[i];
        deriv(t0 + 0.5 * dt, tmp, k2);
        for (std::size_t i = 0; i < dims; ++i) tmp[i] = y[i] + 0.5 * dt * k2[i];
        deriv(t0 + 0.5 * dt, tmp, k3);
        for (std::size_t i = 0; i < dims; ++i) tmp[i] = y[i] + dt * k3[i];
        deriv(t0 + dt, tmp, k4);
        for (std::size_t i = 0; i < dims; ++i) {
            out[i] = y[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
            if (!std::isfinite(out[i])) throw SimulationError("non-finite state at t=" + fmt_g(t0 + dt));
        }
    };

    auto mon_true = [&](const Monitor& mo, double t, const std::vector<double>& y) {
        if (mo.what == Crossing::What::Hazard)
            return y[static_cast<std::size_t>(mo.haz_pos)] >=
                   state_.timers[static_cast<std::size_t>(mo.index)].threshold;
        SimEnv env(cm_, state_.comp_state, y.data(), t);
        return eval_bool(*mo.pred, env);
    };

    auto commit = [&](double t, const std::vector<double>& y) {
        state_.clock = t;
        for (std::size_t v = 0; v < nv; ++v) state_.var_values[v] = y[v];
        for (std::size_t j = 0; j < haz_slots.size(); ++j)
            state_.timers[static_cast<std::size_t>(haz_slots[j])].acc = y[nv + j];
    };

    if (!(opts_.step_h > 0)) throw SimulationError("integration step underflow");
    // With no continuous state, predicates can only move through t; one macro
    // step with bisection refinement suffices (non-monotone pure-time pulses
    // narrower than a segment are not detected; see docs).
    const double h = dims == 0 ? (until - state_.clock) : opts_.step_h;
    const double tol = opts_.step_h / 100.0;

    double t0 = state_.clock;
    while (t0 < until) {
        const double t1 = std::min(t0 + h, until);
        rk4(t0, y0, t1 - t0, y1);

        int best = -1;
        double best_t = 0;
        std::vector<double> best_y(dims);
        for (std::size_t mi = 0; mi < mons.size(); ++mi) {
            if (!mon_true(mons[mi], t1, y1)) continue;
            // bisect [t0, t1]; invariants: false at lo, true at hi
            double lo = t0, hi = t1;
            std::vector<double> yhi = y1;
            while (hi - lo > tol) {
                const double mid = 0.5 * (lo + hi);
                rk4(t0, y0, mid - t0, tmp);
                if (mon_true(mons[mi], mid, tmp)) {
                    hi = mid;
                    yhi = tmp;
                } else {
                    lo = mid;
                }
            }
            if (best < 0 || hi < best_t) {
                best = static_cast<int>(mi);
                best_t = hi;
                best_y = yhi;
            }
        }
        if (best >= 0) {
            commit(best_t, best_y);
            return Crossing{mons[static_cast<std::size_t>(best)].what,
                            mons[static_cast<std::size_t>(best)].index, best_t};
        }
        y0 = y1;
        t0 = t1;
    }
    commit(until, y0);
    return std::nullopt;
}

// ---- stepping ---------------------------------------------------------------

StepOutcome Simulation::step() {
    if (state_.ended) throw SimulationError("step() on an ended state");
    if (state_.pending) throw SimulationError("resolve the pending branch point before stepping");
    const auto& m = cm_.model();

    for (;;) {
        // branchable timers waiting for their firing-time branch point
        while (!state_.pending_arm_slots.empty()) {
            const int s = state_.pending_arm_slots.front();
            state_.pending_arm_slots.pop_front();
            const auto& slot = cm_.timed_slots()[static_cast<std::size_t>(s)];
            const auto& tr = m.components[static_cast<std::size_t>(slot.comp)]
                                 .transitions[static_cast<std::size_t>(slot.trans)];
            const double p_fire = dist_cdf(tr.dist, m.mission_time - state_.clock);
            if (p_fire < 1e-15) continue; // cannot fire within the mission
            SimState::PendingBranch pb;
            pb.token = ++state_.branch_token_counter;
            pb.at_time = state_.clock;
            pb.timed_bins = true;
            pb.comp = slot.comp;
            pb.trans = slot.trans;
            pb.source_id = cm_.transition_id(slot.comp, slot.trans);
            pb.stats_key = (static_cast<std::uint64_t>(slot.comp) << 24) |
                           static_cast<std::uint64_t>(slot.trans);
            const int K = opts_.quantile_bins;
            for (int i = 1; i <= K; ++i) {
                const double q = static_cast<double>(i) / (K + 1);
                pb.probs.push_back(p_fire / K);
                pb.fire_times.push_back(state_.clock + dist_inverse_cdf(tr.dist, q * p_fire));
            }
            if (1.0 - p_fire > 0) {
                pb.probs.push_back(1.0 - p_fire);
                pb.fire_times.push_back(-1.0);
            }
            if (pb.probs.size() < 2) {
                // a single live alternative is not a branch point
                auto& timer = state_.timers[static_cast<std::size_t>(s)];
                timer.active = true;
                timer.fire_time = pb.fire_times[0];
                continue;
            }
            state_.pending = std::move(pb);
            return {StepOutcome::Kind::AtBranchPoint};
        }

        StepOutcome out;
        if (scan_demand(out)) return out;

        // quiescent instant
        if (int e = satisfied_end_state(); e >= 0) return end_story(e);
        if (state_.clock >= m.mission_time) return end_story(-1);
        if (int ci = 0; conditional_ready(ci)) {
            const auto& ref = cm_.conditionals()[static_cast<std::size_t>(ci)];
            fire_transition(ref.comp, ref.trans, "guard");
            return {StepOutcome::Kind::Advanced};
        }

        // integrate toward the next scheduled event
        double target = m.mission_time;
        int fire_slot = -1;
        for (std::size_t s = 0; s < state_.timers.size(); ++s) {
            const auto& timer = state_.timers[s];
            if (timer.active && !timer.hazard && timer.fire_time < target) {
                target = timer.fire_time;
                fire_slot = static_cast<int>(s);
            }
        }
        auto crossing = integrate_until(target);
        if (crossing) {
            switch (crossing->what) {
                case Crossing::What::EndState: return end_story(crossing->index);
                case Crossing::What::Guard: {
                    const auto& ref =
                        cm_.conditionals()[static_cast<std::size_t>(crossing->index)];
                    const auto& tr = m.components[static_cast<std::size_t>(ref.comp)]
                                         .transitions[static_cast<std::size_t>(ref.trans)];
                    TraceEvent ev;
                    ev.time = state_.clock;
                    ev.kind = TraceEvent::Kind::ThresholdCrossing;
                    ev.detail = "guard '" + tr.guard->source() + "' on " +
                                m.components[static_cast<std::size_t>(ref.comp)].name;
                    state_.trace.push_back(std::move(ev));
                    fire_transition(ref.comp, ref.trans, "guard");
                    return {StepOutcome::Kind::Advanced};
                }
                case Crossing::What::Hazard: {
                    const int s = crossing->index;
                    const auto& slot = cm_.timed_slots()[static_cast<std::size_t>(s)];
                    state_.timers[static_cast<std::size_t>(s)].active = false;
                    TraceEvent ev;
                    ev.time = state_.clock;
                    ev.kind = TraceEvent::Kind::ThresholdCrossing;
                    ev.detail = "hazard threshold on " + cm_.transition_id(slot.comp, slot.trans);
                    state_.trace.push_back(std::move(ev));
                    fire_transition(slot.comp, slot.trans, "timed");
                    return {StepOutcome::Kind::Advanced};
                }
            }
        }
        if (fire_slot >= 0 && target < m.mission_time) {
            const auto& slot = cm_.timed_slots()[static_cast<std::size_t>(fire_slot)];
            state_.timers[static_cast<std::size_t>(fire_slot)].active = false;
            fire_transition(slot.comp, slot.trans, "timed");
            return {StepOutcome::Kind::Advanced};
        }
        // mission_time reached: loop back so declared end states get first try
    }
}

StepOutcome Simulation::run_to_event() {
    for (;;) {
        StepOutcome out = step();
        if (out.kind != StepOutcome::Kind::Advanced) return out;
    }
}

const BranchPoint& Simulation::pending_branch_point() const {
    if (!state_.pending) throw SimulationError("no pending branch point");
    static thread_local BranchPoint bp;
    const auto& pb = *state_.pending;
    const auto& m = cm_.model();
    bp = {};
    bp.token = pb.token;
    bp.at_time = pb.at_time;
    bp.source = pb.source_id;
    bp.stats_key = pb.stats_key;
    for (std::size_t i = 0; i < pb.probs.size(); ++i) {
        Branch b;
        b.token = pb.token;
        b.index = static_cast<int>(i);
        b.prob = pb.probs[i];
        if (pb.timed_bins) {
            b.label = pb.fire_times[i] < 0
                          ? pb.source_id + ": no firing within mission"
                          : pb.source_id + ": fires at t=" + fmt_g(pb.fire_times[i]);
        } else {
            const auto& cspec = m.components[static_cast<std::size_t>(pb.comp)];
            const auto& tr = cspec.transitions[static_cast<std::size_t>(pb.trans)];
            const auto& oc = tr.outcomes[static_cast<std::size_t>(pb.outcome_idx[i])];
            b.comp = pb.comp;
            b.to_state = m.state_index(pb.comp, oc.target);
            b.label = cspec.name + ": " +
                      cspec.states[static_cast<std::size_t>(
                          state_.comp_state[static_cast<std::size_t>(pb.comp)])] +
                      "->" + oc.target + " (demand " + tr.trigger + ")";
        }
        bp.branches.push_back(std::move(b));
    }
    return bp;
}

void Simulation::apply_branch(const Branch& b) {
    if (!state_.pending) throw SimulationError("no pending branch point");
    auto pb = *state_.pending;
    if (b.token != pb.token)
        throw SimulationError("branch does not belong to the pending branch point");
    if (b.index < 0 || b.index >= static_cast<int>(pb.probs.size()))
        throw SimulationError("branch index out of range");
    const auto& m = cm_.model();
    const double p = pb.probs[static_cast<std::size_t>(b.index)];

    TraceEvent ev;
    ev.time = state_.clock;
    ev.kind = TraceEvent::Kind::BranchTaken;
    ev.prob = p;

    state_.pending.reset();
    state_.path_prob *= p;

    if (pb.timed_bins) {
        const double ft = pb.fire_times[static_cast<std::size_t>(b.index)];
        const int s = cm_.slot_for(pb.comp, pb.trans);
        auto& timer = state_.timers[static_cast<std::size_t>(s)];
        if (ft < 0) {
            timer = {};
            ev.detail = pb.source_id + ": no firing within mission";
        } else {
            timer = {};
            timer.active = true;
            timer.fire_time = ft;
            ev.detail = pb.source_id + ": fires at t=" + fmt_g(ft);
        }
        state_.trace.push_back(std::move(ev));
    } else {
        const auto& cspec = m.components[static_cast<std::size_t>(pb.comp)];
        const auto& tr = cspec.transitions[static_cast<std::size_t>(pb.trans)];
        const auto& oc = tr.outcomes[static_cast<std::size_t>(
            pb.outcome_idx[static_cast<std::size_t>(b.index)])];
        const int target = m.state_index(pb.comp, oc.target);
        ev.detail = cspec.name + ": " +
                    cspec.states[static_cast<std::size_t>(
                        state_.comp_state[static_cast<std::size_t>(pb.comp)])] +
                    "->" + oc.target + " (demand " + tr.trigger + ")";
        ev.comp = pb.comp;
        ev.to_state = target;
        state_.trace.push_back(std::move(ev));
        apply_state_change(pb.comp, target);
        queue_emits(oc.emits);
    }
    note_instant_work();
}

// ---- snapshot ---------------------------------------------------------------

Snapshot Simulation::snapshot() const {
    Writer w;
    w.u32(kSnapMagic);
    w.u16(kSnapVersion);
    w.u64(cm_.fingerprint());
    w.f64(opts_.step_h);
    w.u8(opts_.timed_policy == TimedPolicy::SystematicBins ? 1 : 0);
    w.i32(opts_.quantile_bins);
    w.u32(opts_.cascade_limit);

    const auto& s = state_;
    w.f64(s.clock);
    w.u8(s.ended ? 1 : 0);
    w.str(s.end_state);
    w.str(s.end_severity);
    w.f64(s.path_prob);
    w.u32(static_cast<std::uint32_t>(s.comp_state.size()));
    for (int v : s.comp_state) w.i32(v);
    w.u32(static_cast<std::uint32_t>(s.var_values.size()));
    for (double v : s.var_values) w.f64(v);
    w.u32(static_cast<std::uint32_t>(s.timers.size()));
    for (const auto& t : s.timers) {
        w.u8(t.active ? 1 : 0);
        w.u8(t.hazard ? 1 : 0);
        w.f64(t.fire_time);
        w.f64(t.acc);
        w.f64(t.threshold);
    }
    w.u32(static_cast<std::uint32_t>(s.event_queue.size()));
    for (const auto& e : s.event_queue) w.str(e);
    w.u8(s.has_current_event ? 1 : 0);
    w.str(s.current_event);
    w.i32(s.scan_comp);
    w.i32(s.scan_trans);
    w.u32(static_cast<std::uint32_t>(s.pending_arm_slots.size()));
    for (int v : s.pending_arm_slots) w.i32(v);
    w.u8(s.pending ? 1 : 0);
    if (s.pending) {
        const auto& pb = *s.pending;
        w.u64(pb.token);
        w.f64(pb.at_time);
        w.u8(pb.timed_bins ? 1 : 0);
        w.i32(pb.comp);
        w.i32(pb.trans);
        w.str(pb.source_id);
        w.u64(pb.stats_key);
        w.u32(static_cast<std::uint32_t>(pb.outcome_idx.size()));
        for (int v : pb.outcome_idx) w.i32(v);
        w.u32(static_cast<std::uint32_t>(pb.probs.size()));
        for (double v : pb.probs) w.f64(v);
        w.u32(static_cast<std::uint32_t>(pb.fire_times.size()));
        for (double v : pb.fire_times) w.f64(v);
    }
    const auto rng = s.rng.save();
    for (auto v : rng) w.u64(v);
    w.u64(s.branch_token_counter);
    w.u32(s.instant_count);
    w.f64(s.instant_clock);
    w.u32(static_cast<std::uint32_t>(s.trace.size()));
    for (const auto& ev : s.trace) {
        w.f64(ev.time);
        w.u8(static_cast<std::uint8_t>(ev.kind));
        w.str(ev.detail);
        w.f64(ev.prob);
        w.i32(ev.comp);
        w.i32(ev.to_state);
    }
    w.u64(fnv1a64(w.buf.data(), w.buf.size()));
    return w.buf;
}

Simulation Simulation::restore(const CompiledModel& cm, const Snapshot& bytes) {
    if (bytes.size() < 30) throw SnapshotError("snapshot too short");
    const std::uint64_t want = fnv1a64(bytes.data(), bytes.size() - 8);
    std::uint64_t got;
    std::memcpy(&got, bytes.data() + bytes.size() - 8, 8);
    if (want != got) throw SnapshotError("snapshot checksum mismatch");

    Reader r{bytes.data(), bytes.size() - 8};
    if (r.u32() != kSnapMagic) throw SnapshotError("not a snapshot");
    if (r.u16() != kSnapVersion) throw SnapshotError("snapshot version mismatch");
    if (r.u64() != cm.fingerprint())
        throw SnapshotError("snapshot was taken from a different model");
    SimOptions opts;
    opts.step_h = r.f64();
    opts.timed_policy = r.u8() ? TimedPolicy::SystematicBins : TimedPolicy::Sample;
    opts.quantile_bins = r.i32();
    opts.cascade_limit = r.u32();

    Simulation sim(cm, Rng(0), opts);
    SimState& s = sim.state_;
    s = SimState{};
    s.clock = r.f64();
    s.ended = r.u8() != 0;
    s.end_state = r.str();
    s.end_severity = r.str();
    s.path_prob = r.f64();
    s.comp_state.resize(r.u32());
    for (auto& v : s.comp_state) v = r.i32();
    if (s.comp_state.size() != cm.model().components.size())
        throw SnapshotError("component count mismatch");
    s.var_values.resize(r.u32());
    for (auto& v : s.var_values) v = r.f64();
    if (s.var_values.size() != cm.model().continuous_vars.size())
        throw SnapshotError("var count mismatch");
    s.timers.resize(r.u32());
    if (s.timers.size() != cm.timed_slots().size()) throw SnapshotError("timer count mismatch");
    for (auto& t : s.timers) {
        t.active = r.u8() != 0;
        t.hazard = r.u8() != 0;
        t.fire_time = r.f64();
        t.acc = r.f64();
        t.threshold = r.f64();
    }
    for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) s.event_queue.push_back(r.str());
    s.has_current_event = r.u8() != 0;
    s.current_event = r.str();
    s.scan_comp = r.i32();
    s.scan_trans = r.i32();
    for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) s.pending_arm_slots.push_back(r.i32());
    if (r.u8()) {
        SimState::PendingBranch pb;
        pb.token = r.u64();
        pb.at_time = r.f64();
        pb.timed_bins = r.u8() != 0;
        pb.comp = r.i32();
        pb.trans = r.i32();
        pb.source_id = r.str();
        pb.stats_key = r.u64();
        pb.outcome_idx.resize(r.u32());
        for (auto& v : pb.outcome_idx) v = r.i32();
        pb.probs.resize(r.u32());
        for (auto& v : pb.probs) v = r.f64();
        pb.fire_times.resize(r.u32());
        for (auto& v : pb.fire_times) v = r.f64();
        s.pending = std::move(pb);
    }
    std::array<std::uint64_t, 4> rng{};
    for (auto& v : rng) v = r.u64();
    s.rng.load(rng);
    s.branch_token_counter = r.u64();
    s.instant_count = r.u32();
    s.instant_clock = r.f64();
    s.trace.resize(r.u32());
    for (auto& ev : s.trace) {
        ev.time = r.f64();
        ev.kind = static_cast<TraceEvent::Kind>(r.u8());
        ev.detail = r.str();
        ev.prob = r.f64();
        ev.comp = r.i32();
        ev.to_state = r.i32();
    }
    if (r.pos != r.size) throw SnapshotError("trailing bytes in snapshot");
    return sim;
}

std::string Simulation::trace_csv() const {
    std::string out = "time,kind,detail,prob\n";
    for (const auto& ev : state_.trace) {
        std::string detail = ev.detail;
        bool quote = detail.find_first_of(",\"\n") != std::string::npos;
        if (quote) {
            std::string q = "\"";
            for (char c : detail) {
                if (c == '"') q += "\"\"";
                else q += c;
            }
            q += "\"";
            detail = std::move(q);
        }
        out += fmt_g(ev.time);
        out += ',';
        out += trace_kind_name(ev.kind);
        out += ',';
        out += detail;
        out += ',';
        if (ev.prob >= 0) out += fmt_g(ev.prob);
        out += '\n';
    }
    return out;
}

double Simulation::trace_probability() const {
    double p = 1.0;
    for (const auto& ev : state_.trace)
        if (ev.kind == TraceEvent::Kind::BranchTaken) p *= ev.prob;
    return p;
}

} // namespace riskex
