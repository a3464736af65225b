#pragma once

// Random fixtures and independent oracles shared by the unit and acceptance
// suites. Everything here is deliberately separate from the library's
// implementation paths: probabilities come from closed-form products, truth
// tables from a second evaluator, path sets from a plain recursive search.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "riskex/model.hpp"
#include "riskex/planner.hpp"
#include "riskex/rng.hpp"

namespace riskex::testgen {

// ---- purely-demand-branching chain models ------------------------------------
//
// A fixed timer raises d0 at t=0.5; component i consumes d_i with 2-3 weighted
// outcomes; an outcome either chains (emits d_{i+1}) or stops the story in a
// dedicated end state. End-state probabilities have the closed form
// P(E_ij) = p_ij * prod_{l<i} C_l with C_l the chaining mass of component l.

struct ChainModel {
    SystemModel model;
    std::map<std::string, double> expected; // includes mission_complete
    int branch_points = 0;
};

inline ChainModel make_chain_model(Rng& rng, int max_components = 4) {
    ChainModel out;
    const int k = 1 + static_cast<int>(rng.next() % static_cast<std::uint64_t>(max_components));

    SystemModel& m = out.model;
    m.name = "chain";
    m.mission_time = 1.0;

    ComponentSpec kick;
    kick.name = "kickoff";
    kick.states = {"INIT", "GO"};
    TransitionSpec kt;
    kt.kind = TransitionSpec::Kind::Timed;
    kt.source = "INIT";
    kt.target = "GO";
    kt.dist.kind = Distribution::Kind::Fixed;
    kt.dist.time = 0.5;
    kt.emits = {"d0"};
    kick.transitions.push_back(kt);
    m.components.push_back(kick);
    m.initial_states["kickoff"] = "INIT";

    struct Outcome {
        double prob;
        bool chains;
    };
    std::vector<std::vector<Outcome>> plan(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int n = 2 + static_cast<int>(rng.next() % 2);
        std::vector<int> weights;
        int total = 0;
        for (int j = 0; j < n; ++j) {
            int w = 1 + static_cast<int>(rng.next() % 9);
            weights.push_back(w);
            total += w;
        }
        for (int j = 0; j < n; ++j) {
            const bool last = i == k - 1;
            const bool chains = !last && (rng.next() % 2 == 0);
            plan[static_cast<std::size_t>(i)].push_back(
                {static_cast<double>(weights[static_cast<std::size_t>(j)]) / total, chains});
        }
    }

    for (int i = 0; i < k; ++i) {
        ComponentSpec c;
        c.name = "c" + std::to_string(i);
        c.states = {"IDLE"};
        TransitionSpec t;
        t.kind = TransitionSpec::Kind::Demand;
        t.source = "IDLE";
        t.trigger = "d" + std::to_string(i);
        for (std::size_t j = 0; j < plan[static_cast<std::size_t>(i)].size(); ++j) {
            const auto& o = plan[static_cast<std::size_t>(i)][j];
            DemandOutcome oc;
            oc.target = "S" + std::to_string(i) + "_" + std::to_string(j);
            oc.prob = o.prob;
            if (o.chains) oc.emits = {"d" + std::to_string(i + 1)};
            c.states.push_back(oc.target);
            t.outcomes.push_back(oc);
        }
        c.transitions.push_back(t);
        m.components.push_back(c);
        m.initial_states[c.name] = "IDLE";
    }

    // closed-form end-state probabilities
    double reach = 1.0;
    for (int i = 0; i < k; ++i) {
        double chain_mass = 0;
        for (std::size_t j = 0; j < plan[static_cast<std::size_t>(i)].size(); ++j) {
            const auto& o = plan[static_cast<std::size_t>(i)][j];
            if (o.chains) {
                chain_mass += o.prob;
                continue;
            }
            EndStateSpec e;
            e.name = "E" + std::to_string(i) + "_" + std::to_string(j);
            e.predicate = Expression::parse("c" + std::to_string(i) + " == S" +
                                            std::to_string(i) + "_" + std::to_string(j));
            e.severity = (i + static_cast<int>(j)) % 2 == 0 ? "fail" : "ok";
            m.end_states.push_back(e);
            out.expected[e.name] = reach * o.prob;
        }
        if (reach > 0) ++out.branch_points;
        reach *= chain_mass;
    }
    out.expected[kMissionCompleteName] = 0.0;
    return out;
}

// ---- random AND/OR trees and their brute-force duals ---------------------------

inline TreeNode random_tree(Rng& rng, int max_leaves, std::vector<std::string>& components,
                            int depth = 0) {
    const bool leaf = depth >= 3 || max_leaves <= 1 || rng.next() % 3 == 0;
    static int node_counter = 0;
    if (leaf) {
        TreeNode n;
        n.gate = TreeNode::Gate::Leaf;
        // reuse an existing component occasionally
        if (!components.empty() && rng.next() % 5 == 0) {
            n.component = components[rng.next() % components.size()];
        } else {
            n.component = "c" + std::to_string(components.size());
            components.push_back(n.component);
        }
        n.name = "n" + std::to_string(node_counter++);
        return n;
    }
    TreeNode n;
    n.gate = rng.next() % 2 == 0 ? TreeNode::Gate::And : TreeNode::Gate::Or;
    n.name = "g" + std::to_string(node_counter++);
    const int kids = 2 + static_cast<int>(rng.next() % 2);
    int budget = max_leaves;
    for (int i = 0; i < kids && budget > 0; ++i) {
        const int share = std::max(1, budget / (kids - i));
        n.children.push_back(random_tree(rng, share, components, depth + 1));
        budget -= share;
    }
    return n;
}

/// Second, independent tree evaluator (counting semantics).
inline bool eval_tree_oracle(const TreeNode& t, const StatusVector& sv) {
    if (t.gate == TreeNode::Gate::Leaf) return sv.at(t.component);
    int up = 0;
    for (const auto& c : t.children)
        if (eval_tree_oracle(c, sv)) ++up;
    return t.gate == TreeNode::Gate::And ? up == static_cast<int>(t.children.size()) : up > 0;
}

/// Brute-force minimal failure sets: enumerate all 2^n component subsets,
/// keep those whose joint failure takes the root down, filter to minimal.
inline std::vector<std::set<std::string>> failure_sets_oracle(
    const TreeNode& t, const std::vector<std::string>& components) {
    const std::size_t n = components.size();
    std::vector<std::set<std::string>> failing;
    for (std::size_t mask = 1; mask < (1u << n); ++mask) {
        StatusVector sv;
        std::set<std::string> downs;
        for (std::size_t i = 0; i < n; ++i) {
            const bool down = mask & (1u << i);
            sv[components[i]] = !down;
            if (down) downs.insert(components[i]);
        }
        if (!eval_tree_oracle(t, sv)) failing.push_back(std::move(downs));
    }
    std::vector<std::set<std::string>> minimal;
    for (const auto& s : failing) {
        bool is_min = true;
        for (const auto& other : failing)
            if (other != s &&
                std::includes(s.begin(), s.end(), other.begin(), other.end())) {
                is_min = false;
                break;
            }
        if (is_min) minimal.push_back(s);
    }
    std::sort(minimal.begin(), minimal.end());
    minimal.erase(std::unique(minimal.begin(), minimal.end()), minimal.end());
    return minimal;
}

// ---- random FSMs and brute-force simple-path enumeration -----------------------

inline AbstractFsm random_fsm(Rng& rng, int max_states = 8) {
    AbstractFsm f;
    const int n = 2 + static_cast<int>(rng.next() % static_cast<std::uint64_t>(max_states - 1));
    for (int i = 0; i < n; ++i) f.states.push_back("S" + std::to_string(i));
    f.initial = "S0";
    static const char* funcs[] = {"fa", "fb", "fc", "fd"};
    for (int i = 0; i < n; ++i) {
        std::set<std::string> used;
        const int outs = static_cast<int>(rng.next() % 4); // 0..3
        for (int j = 0; j < outs; ++j) {
            FuncEvent ev{funcs[rng.next() % 4], rng.next() % 2 == 0};
            if (!used.insert(ev.str()).second) continue;
            f.transitions.push_back(
                {"S" + std::to_string(i), "S" + std::to_string(rng.next() % n), ev});
        }
    }
    std::set<std::string> goals;
    const int g = 1 + static_cast<int>(rng.next() % 2);
    for (int i = 0; i < g; ++i) goals.insert("S" + std::to_string(rng.next() % n));
    f.goals.assign(goals.begin(), goals.end());
    return f;
}

/// All simple label paths from initial to a goal, length-capped.
inline std::set<std::pair<std::string, std::vector<std::string>>> simple_paths_oracle(
    const AbstractFsm& f, int max_len) {
    std::set<std::pair<std::string, std::vector<std::string>>> out;
    std::set<std::string> goals(f.goals.begin(), f.goals.end());
    std::vector<std::string> path;
    std::set<std::string> visited;
    auto rec = [&](auto&& self, const std::string& s) -> void {
        if (goals.count(s)) out.insert({s, path});
        if (static_cast<int>(path.size()) >= max_len) return;
        for (const auto& t : f.transitions) {
            if (t.from != s || visited.count(t.to)) continue;
            visited.insert(t.to);
            path.push_back(t.label.str());
            self(self, t.to);
            path.pop_back();
            visited.erase(t.to);
        }
    };
    visited.insert(f.initial);
    rec(rec, f.initial);
    return out;
}

} // namespace riskex::testgen
