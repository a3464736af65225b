#include <doctest.h>

#include <cmath>

#include "riskex/sim.hpp"

using namespace riskex;

namespace {

SystemModel parse(const char* text) { return parse_model(text); }

// one pump demanded at t=1, backup demanded if the pump fails
const char* kPumpBackup = R"({
  "name": "pump_backup",
  "mission_time": 2.0,
  "components": [
    {"name": "mission", "states": ["INIT", "GO"],
     "transitions": [
       {"kind": "timed", "source": "INIT", "target": "GO",
        "distribution": {"type": "fixed", "time": 1.0}, "emits": ["demand_pump"]}
     ]},
    {"name": "pump", "states": ["RUNNING", "FAILED"],
     "transitions": [
       {"kind": "demand", "source": "RUNNING", "trigger": "demand_pump",
        "outcomes": [{"target": "RUNNING", "prob": 0.9},
                      {"target": "FAILED", "prob": 0.1, "emits": ["demand_backup"]}]}
     ]},
    {"name": "backup", "states": ["STANDBY", "RUNNING", "FAILED"],
     "transitions": [
       {"kind": "demand", "source": "STANDBY", "trigger": "demand_backup",
        "outcomes": [{"target": "RUNNING", "prob": 0.99},
                      {"target": "FAILED", "prob": 0.01}]}
     ]}
  ],
  "end_states": [
    {"name": "MELT", "predicate": "pump == FAILED and backup == FAILED", "severity": "fail"},
    {"name": "OK", "predicate": "t >= mission_time", "severity": "ok"}
  ],
  "initial": {"components": {"mission": "INIT", "pump": "RUNNING", "backup": "STANDBY"}}
})";

const char* kTank = R"({
  "name": "tank",
  "mission_time": 10.0,
  "components": [{"name": "drain", "states": ["OPEN", "SHUT"]}],
  "continuous_vars": [
    {"name": "level", "initial": 10.0,
     "derivative": [{"when": "drain == OPEN", "rate": "-2"}, {"rate": "0"}]}
  ],
  "end_states": [{"name": "DRY", "predicate": "level <= 0", "severity": "fail"}],
  "initial": {"components": {"drain": "OPEN"}}
})";

const char* kFuse = R"({
  "name": "fuse_ramp",
  "mission_time": 20.0,
  "components": [
    {"name": "fuse", "states": ["INTACT", "MELTED"],
     "transitions": [
       {"kind": "conditional", "source": "INTACT", "target": "MELTED",
        "guard": "current >= 8", "emits": []}
     ]}
  ],
  "continuous_vars": [
    {"name": "current", "initial": 0.0, "derivative": [{"rate": "1"}]}
  ],
  "end_states": [{"name": "BLOWN", "predicate": "fuse == MELTED", "severity": "fail"}],
  "initial": {"components": {"fuse": "INTACT"}}
})";

} // namespace

TEST_CASE("init is deterministic and reads the initial section") {
    auto m = parse(kPumpBackup);
    CompiledModel cm(m);
    Simulation a(cm, 42), b(cm, 42);
    CHECK(a.state().clock == 0.0);
    CHECK(a.state().comp_state == b.state().comp_state);
    CHECK(a.state().rng == b.state().rng);
    CHECK(m.components[1].states[static_cast<std::size_t>(a.state().comp_state[1])] ==
          "RUNNING");
}

TEST_CASE("tank drains to the end state at t=5 within integrator tolerance") {
    auto m = parse(kTank);
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    auto out = sim.run_to_event();
    CHECK(out.kind == StepOutcome::Kind::Ended);
    CHECK(sim.state().end_state == "DRY");
    CHECK(sim.state().clock == doctest::Approx(5.0).epsilon(0.01));
    CHECK(std::abs(sim.state().clock - 5.0) <= sim.options().step_h);
}

TEST_CASE("zero derivative leaves the variable unchanged") {
    auto m = parse(kTank);
    m.initial_states["drain"] = "SHUT"; // default clause: rate 0
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    auto out = sim.run_to_event();
    CHECK(out.kind == StepOutcome::Kind::Ended);
    CHECK(sim.state().end_state == kMissionCompleteName);
    CHECK(sim.state().var_values[0] == doctest::Approx(10.0));
}

TEST_CASE("conditional guard fires at the ramp crossing") {
    auto m = parse(kFuse);
    CompiledModel cm(m);
    Simulation sim(cm, 7);
    auto out = sim.step(); // first event: the guard crossing
    CHECK(out.kind == StepOutcome::Kind::Advanced);
    CHECK(std::abs(sim.state().clock - 8.0) <= sim.options().step_h);
    const auto& trace = sim.state().trace;
    REQUIRE(trace.size() == 2);
    CHECK(trace[0].kind == TraceEvent::Kind::ThresholdCrossing);
    CHECK(trace[1].kind == TraceEvent::Kind::Transition);
    out = sim.run_to_event();
    CHECK(sim.state().end_state == "BLOWN");
}

TEST_CASE("simultaneous crossings resolve by declaration order") {
    // both predicates cross at exactly t=5; the first declared wins
    std::string text = kTank;
    auto pos = text.find("[{\"name\": \"DRY\"");
    text.replace(pos, std::string("[{\"name\": \"DRY\"").size(),
                 "[{\"name\": \"EMPTY_A\", \"predicate\": \"2*level <= 0\", \"severity\": "
                 "\"fail\"}, {\"name\": \"DRY\"");
    auto m = parse_model(text);
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    sim.run_to_event();
    CHECK(sim.state().end_state == "EMPTY_A");
}

TEST_CASE("demand with two outcomes yields a branch point") {
    auto m = parse(kPumpBackup);
    CompiledModel cm(m);
    Simulation sim(cm, 3);
    auto out = sim.run_to_event();
    REQUIRE(out.kind == StepOutcome::Kind::AtBranchPoint);
    const auto& bp = sim.pending_branch_point();
    CHECK(bp.branches.size() == 2);
    CHECK(bp.at_time == doctest::Approx(1.0));
    CHECK(bp.branches[0].prob + bp.branches[1].prob == doctest::Approx(1.0));

    SUBCASE("success outcome keeps the pump running") {
        sim.apply_branch(bp.branches[0]);
        auto end = sim.run_to_event();
        CHECK(end.kind == StepOutcome::Kind::Ended);
        CHECK(sim.state().end_state == "OK");
        CHECK(sim.state().path_prob == doctest::Approx(0.9));
    }
    SUBCASE("failure outcome demands the backup") {
        auto fail = bp.branches[1];
        sim.apply_branch(fail);
        auto next = sim.run_to_event();
        REQUIRE(next.kind == StepOutcome::Kind::AtBranchPoint);
        const auto& bp2 = sim.pending_branch_point();
        CHECK(bp2.source.find("backup") != std::string::npos);
        sim.apply_branch(bp2.branches[1]); // backup fails too
        sim.run_to_event();
        CHECK(sim.state().end_state == "MELT");
        CHECK(sim.state().path_prob == doctest::Approx(0.001));
        CHECK(sim.trace_probability() == doctest::Approx(0.001));
    }
    SUBCASE("a stale branch is rejected") {
        auto b = bp.branches[0];
        sim.apply_branch(b);
        CHECK_THROWS_AS(sim.apply_branch(b), SimulationError);
    }
}

TEST_CASE("snapshot/restore reproduces the uninterrupted run exactly") {
    auto m = parse(kPumpBackup);
    CompiledModel cm(m);

    Simulation straight(cm, 11);
    auto out = straight.run_to_event();
    REQUIRE(out.kind == StepOutcome::Kind::AtBranchPoint);
    auto snap = straight.snapshot();
    straight.apply_branch(straight.pending_branch_point().branches[1]);
    auto mid = straight.run_to_event();
    REQUIRE(mid.kind == StepOutcome::Kind::AtBranchPoint);
    straight.apply_branch(straight.pending_branch_point().branches[0]);
    straight.run_to_event();
    const auto reference_trace = straight.trace_csv();

    // explore the sibling first, then restore and take the same route
    auto sibling = Simulation::restore(cm, snap);
    sibling.apply_branch(sibling.pending_branch_point().branches[0]);
    sibling.run_to_event();
    CHECK(sibling.state().end_state == "OK");

    auto replay = Simulation::restore(cm, snap);
    replay.apply_branch(replay.pending_branch_point().branches[1]);
    auto r2 = replay.run_to_event();
    REQUIRE(r2.kind == StepOutcome::Kind::AtBranchPoint);
    replay.apply_branch(replay.pending_branch_point().branches[0]);
    replay.run_to_event();
    CHECK(replay.trace_csv() == reference_trace);
    CHECK(replay.state().end_state == straight.state().end_state);
}

TEST_CASE("restore from corrupted bytes is an explicit error") {
    auto m = parse(kTank);
    CompiledModel cm(m);
    Simulation sim(cm, 5);
    auto snap = sim.snapshot();
    auto bad = snap;
    bad[bad.size() / 2] ^= 0x5a;
    CHECK_THROWS_AS(Simulation::restore(cm, bad), SnapshotError);
    bad = snap;
    bad.resize(bad.size() / 2);
    CHECK_THROWS_AS(Simulation::restore(cm, bad), SnapshotError);

    auto other = parse(kPumpBackup);
    CompiledModel cm2(other);
    CHECK_THROWS_AS(Simulation::restore(cm2, snap), SnapshotError);
}

TEST_CASE("sample_firing_time inverse CDFs") {
    Distribution w;
    w.kind = Distribution::Kind::Weibull;
    w.lambda = 100;
    w.shape = 2;
    CHECK(sample_firing_time(w, std::exp(-1.0)) == doctest::Approx(100.0));
    Distribution e;
    e.kind = Distribution::Kind::Exponential;
    e.lambda = 0.5;
    CHECK(sample_firing_time(e, std::exp(-1.0)) == doctest::Approx(2.0));
    Distribution f;
    f.kind = Distribution::Kind::Fixed;
    f.time = 7;
    CHECK(sample_firing_time(f, 0.123) == doctest::Approx(7.0));
    CHECK_THROWS_AS(sample_firing_time(e, 0.0), SimulationError);
    CHECK_THROWS_AS(sample_firing_time(e, 1.0), SimulationError);
}

namespace {

// Mean firing time of a rate-modified exponential over many seeded runs.
double empirical_mean_firing(const char* modifier, double lambda, double mission, int n,
                             double* out_sd = nullptr) {
    std::string text = std::string(R"({
      "name": "haz",
      "mission_time": )") +
                       std::to_string(mission) + R"(,
      "components": [
        {"name": "unit", "states": ["UP", "DOWN"],
         "transitions": [
           {"kind": "timed", "source": "UP", "target": "DOWN",
            "distribution": {"type": "exponential", "lambda": )" +
                       std::to_string(lambda) + R"(},
            "rate_modifier": ")" + modifier +
                       R"("}
         ]}
      ],
      "continuous_vars": [{"name": "level", "initial": 0.0, "derivative": [{"rate": "1"}]}],
      "end_states": [{"name": "DOWN_END", "predicate": "unit == DOWN", "severity": "fail"}],
      "initial": {"components": {"unit": "UP"}}
    })";
    auto m = parse_model(text);
    CompiledModel cm(m);
    double sum = 0, sum2 = 0;
    int fired = 0;
    SimOptions opts;
    opts.step_h = 0.05;
    for (int i = 0; i < n; ++i) {
        Simulation sim(cm, Rng::stream(1234, static_cast<std::uint64_t>(i)), opts);
        sim.run_to_event();
        if (sim.state().end_state == "DOWN_END") {
            sum += sim.state().clock;
            sum2 += sim.state().clock * sim.state().clock;
            ++fired;
        }
    }
    REQUIRE(fired == n); // mission long enough that everything fires
    const double mean = sum / n;
    if (out_sd) *out_sd = std::sqrt((sum2 / n - mean * mean) / n);
    return mean;
}

} // namespace

TEST_CASE("hazard with unit modifier reduces to the plain exponential") {
    double sd = 0;
    const double mean = empirical_mean_firing("1", 2.0, 40.0, 4000, &sd);
    CHECK(std::abs(mean - 0.5) <= 3 * sd);
}

TEST_CASE("hazard with constant modifier 2 doubles the rate") {
    double sd = 0;
    const double mean = empirical_mean_firing("2", 2.0, 40.0, 4000, &sd);
    CHECK(std::abs(mean - 0.25) <= 3 * sd);
}

TEST_CASE("negative rate modifier is an error") {
    CHECK_THROWS_AS(empirical_mean_firing("-1", 1.0, 10.0, 1), SimulationError);
}

TEST_CASE("mission timeout yields the implicit end state") {
    auto m = parse(kFuse);
    m.mission_time = 3.0; // current never reaches 8
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    auto out = sim.run_to_event();
    CHECK(out.kind == StepOutcome::Kind::Ended);
    CHECK(sim.state().end_state == kMissionCompleteName);
    CHECK(sim.state().end_severity == "ok");
    CHECK(sim.state().clock == doctest::Approx(3.0));
}

TEST_CASE("stepping an ended state is an error") {
    auto m = parse(kTank);
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    sim.run_to_event();
    CHECK_THROWS_AS(sim.step(), SimulationError);
}

TEST_CASE("branchable timed transition produces quantile bins under SystematicBins") {
    const char* text = R"({
      "name": "bins",
      "mission_time": 100.0,
      "components": [
        {"name": "unit", "states": ["UP", "DOWN"],
         "transitions": [
           {"kind": "timed", "source": "UP", "target": "DOWN",
            "distribution": {"type": "exponential", "lambda": 0.01}, "branchable": true}
         ]}
      ],
      "end_states": [{"name": "FAILED_END", "predicate": "unit == DOWN", "severity": "fail"}],
      "initial": {"components": {"unit": "UP"}}
    })";
    auto m = parse(text);
    CompiledModel cm(m);
    SimOptions opts;
    opts.timed_policy = TimedPolicy::SystematicBins;
    Simulation sim(cm, 1, opts);
    auto out = sim.run_to_event();
    REQUIRE(out.kind == StepOutcome::Kind::AtBranchPoint);
    const auto& bp = sim.pending_branch_point();
    REQUIRE(bp.branches.size() == 4); // 3 bins + survival
    const double p_fire = 1.0 - std::exp(-0.01 * 100.0);
    for (int i = 0; i < 3; ++i) CHECK(bp.branches[static_cast<std::size_t>(i)].prob ==
                                      doctest::Approx(p_fire / 3));
    CHECK(bp.branches[3].prob == doctest::Approx(1.0 - p_fire));
    double sum = 0;
    for (const auto& b : bp.branches) sum += b.prob;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    // median bin fires at the conditional 0.5 quantile
    sim.apply_branch(bp.branches[1]);
    auto end = sim.run_to_event();
    CHECK(end.kind == StepOutcome::Kind::Ended);
    CHECK(sim.state().clock == doctest::Approx(-std::log1p(-0.5 * p_fire) / 0.01));

    // non-branchable stochastic transitions never fire in this policy
    auto m2 = parse(text);
    m2.components[0].transitions[0].branchable = false;
    CompiledModel cm2(m2);
    Simulation sim2(cm2, 1, opts);
    auto out2 = sim2.run_to_event();
    CHECK(out2.kind == StepOutcome::Kind::Ended);
    CHECK(sim2.state().end_state == kMissionCompleteName);
}

TEST_CASE("discrete state switches the active derivative clause") {
    const char* text = R"({
      "name": "valve_cycle",
      "mission_time": 4.0,
      "components": [
        {"name": "valve", "states": ["OPEN", "CLOSED"],
         "transitions": [
           {"kind": "timed", "source": "OPEN", "target": "CLOSED",
            "distribution": {"type": "fixed", "time": 1.0}},
           {"kind": "timed", "source": "CLOSED", "target": "OPEN",
            "distribution": {"type": "fixed", "time": 1.0}}
         ]}
      ],
      "continuous_vars": [
        {"name": "x", "initial": 0.0,
         "derivative": [{"when": "valve == OPEN", "rate": "1"}, {"rate": "-1"}]}
      ],
      "end_states": [{"name": "NEVER", "predicate": "x > 99", "severity": "fail"}],
      "initial": {"components": {"valve": "OPEN"}}
    })";
    auto m = parse(text);
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    sim.step(); // first toggle at t=1
    CHECK(sim.state().var_values[0] == doctest::Approx(1.0));
    sim.step(); // second toggle at t=2
    CHECK(sim.state().var_values[0] == doctest::Approx(0.0).epsilon(1e-9));
    sim.run_to_event();
    CHECK(sim.state().end_state == kMissionCompleteName);
    CHECK(sim.state().var_values[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("integrate_until stops at a crossing without applying it") {
    auto m = parse(kFuse);
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    auto crossing = sim.integrate_until(20.0);
    REQUIRE(crossing.has_value());
    CHECK(crossing->what == Crossing::What::Guard);
    CHECK(std::abs(crossing->time - 8.0) <= sim.options().step_h);
    CHECK(sim.state().comp_state[0] == 0); // still INTACT
}

TEST_CASE("trace CSV has the contract columns") {
    auto m = parse(kTank);
    CompiledModel cm(m);
    Simulation sim(cm, 1);
    sim.run_to_event();
    auto csv = sim.trace_csv();
    CHECK(csv.rfind("time,kind,detail,prob\n", 0) == 0);
    CHECK(csv.find("end_state") != std::string::npos);
}
