#include "riskex/planner.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace riskex {

using nlohmann::json;
using nlohmann::ordered_json;

FuncEvent FuncEvent::parse(const std::string& s) {
    auto slash = s.rfind('/');
    if (slash == std::string::npos)
        throw ParseError("functionality event '" + s + "' must look like name/lost or name/gained");
    const std::string kind = s.substr(slash + 1);
    if (kind != "lost" && kind != "gained")
        throw ParseError("functionality event '" + s + "' must end in /lost or /gained");
    return {s.substr(0, slash), kind == "lost"};
}

std::string PlanScenario::describe() const {
    std::string out = "[";
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (i) out += ", ";
        out += events[i].str();
    }
    out += "] -> " + target;
    return out;
}

bool evaluate_tree(const TreeNode& t, const StatusVector& sv) {
    switch (t.gate) {
        case TreeNode::Gate::Leaf: {
            auto it = sv.find(t.component);
            if (it == sv.end())
                throw Error("status vector is missing component '" + t.component + "'");
            return it->second;
        }
        case TreeNode::Gate::And:
            for (const auto& c : t.children)
                if (!evaluate_tree(c, sv)) return false;
            return true;
        case TreeNode::Gate::Or:
            for (const auto& c : t.children)
                if (evaluate_tree(c, sv)) return true;
            return false;
    }
    return false;
}

namespace {

using CutSets = std::vector<std::set<std::string>>;

CutSets minimize(CutSets sets) {
    std::sort(sets.begin(), sets.end(), [](const auto& a, const auto& b) {
        return a.size() < b.size() || (a.size() == b.size() && a < b);
    });
    CutSets out;
    for (auto& s : sets) {
        bool dominated = false;
        for (const auto& kept : out) {
            if (std::includes(s.begin(), s.end(), kept.begin(), kept.end())) {
                dominated = true;
                break;
            }
        }
        if (!dominated) out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end());
    return out;
}

CutSets cut_sets(const TreeNode& t) {
    switch (t.gate) {
        case TreeNode::Gate::Leaf: return {{t.component}};
        case TreeNode::Gate::And: {
            // any child down takes an AND node down
            CutSets all;
            for (const auto& c : t.children)
                for (auto& s : cut_sets(c)) all.push_back(std::move(s));
            return minimize(std::move(all));
        }
        case TreeNode::Gate::Or: {
            // every child must fail: cross-union of the children's sets
            CutSets acc = {{}};
            for (const auto& c : t.children) {
                CutSets child = cut_sets(c);
                CutSets next;
                for (const auto& a : acc)
                    for (const auto& b : child) {
                        std::set<std::string> u = a;
                        u.insert(b.begin(), b.end());
                        next.push_back(std::move(u));
                    }
                acc = minimize(std::move(next));
            }
            return acc;
        }
    }
    return {};
}

const TreeNode* find_node(const TreeNode& t, const std::string& name) {
    const std::string& n = t.gate == TreeNode::Gate::Leaf && t.name.empty() ? t.component : t.name;
    if (n == name) return &t;
    for (const auto& c : t.children)
        if (const TreeNode* f = find_node(c, name)) return f;
    return nullptr;
}

void collect_leaves(const TreeNode& t, std::vector<const TreeNode*>& out) {
    if (t.gate == TreeNode::Gate::Leaf) out.push_back(&t);
    for (const auto& c : t.children) collect_leaves(c, out);
}

} // namespace

std::vector<std::set<std::string>> minimal_failure_sets(const TreeNode& t) {
    return cut_sets(t);
}

std::map<std::string, bool> functionality_status(const CFMatrix& m, const TreeNode& tree,
                                                 const StatusVector& sv) {
    std::map<std::string, bool> out;
    for (const auto& [func, nodes] : m) {
        bool ok = true;
        for (const auto& name : nodes) {
            const TreeNode* n = find_node(tree, name);
            if (!n) throw Error("functionality '" + func + "' requires unknown node '" + name + "'");
            if (!evaluate_tree(*n, sv)) {
                ok = false;
                break;
            }
        }
        out[func] = ok;
    }
    return out;
}

std::vector<PlanScenario> generate_plan(const AbstractFsm& fsm, const CFMatrix& m, int max_len,
                                        std::vector<std::string>* warnings) {
    (void)m;
    std::vector<PlanScenario> out;
    std::set<std::string> goals(fsm.goals.begin(), fsm.goals.end());
    std::set<std::string> reached;

    std::vector<FuncEvent> path;
    std::set<std::string> visited;
    auto dfs = [&](auto&& self, const std::string& state) -> void {
        if (goals.count(state)) {
            PlanScenario sc;
            sc.events = path;
            sc.target = state;
            sc.generated = true;
            out.push_back(std::move(sc));
            reached.insert(state);
        }
        if (static_cast<int>(path.size()) >= max_len) return;
        for (const auto& tr : fsm.transitions) {
            if (tr.from != state || visited.count(tr.to)) continue;
            visited.insert(tr.to);
            path.push_back(tr.label);
            self(self, tr.to);
            path.pop_back();
            visited.erase(tr.to);
        }
    };
    visited.insert(fsm.initial);
    dfs(dfs, fsm.initial);

    std::sort(out.begin(), out.end(), [](const PlanScenario& a, const PlanScenario& b) {
        if (a.target != b.target) return a.target < b.target;
        return a.events < b.events;
    });
    if (warnings)
        for (const auto& g : fsm.goals)
            if (!reached.count(g)) warnings->push_back("goal state '" + g + "' is unreachable");
    return out;
}

double match_event(const Plan& p, ScenarioCursors& cursors, const FuncEvent& ev) {
    double imp = 1.0;
    bool matched = false;
    for (std::size_t i = 0; i < p.scenarios.size(); ++i) {
        const auto& sc = p.scenarios[i];
        if (cursors.pos[i] < sc.events.size() && sc.events[cursors.pos[i]] == ev) {
            imp = matched ? std::max(imp, sc.importance) : sc.importance;
            matched = true;
            if (++cursors.pos[i] == sc.events.size()) ++cursors.completions[i];
        }
    }
    return matched ? imp : 1.0;
}

double peek_importance(const Plan& p, const ScenarioCursors& cursors, const FuncEvent& ev) {
    double imp = 1.0;
    bool matched = false;
    for (std::size_t i = 0; i < p.scenarios.size(); ++i) {
        const auto& sc = p.scenarios[i];
        if (cursors.pos[i] < sc.events.size() && sc.events[cursors.pos[i]] == ev) {
            imp = matched ? std::max(imp, sc.importance) : sc.importance;
            matched = true;
        }
    }
    return matched ? imp : 1.0;
}

RefinementReport refine_plan(const Plan& p, const std::vector<AbstractTrace>& traces) {
    RefinementReport rep;
    std::vector<bool> realized(p.scenarios.size(), false);

    auto completes = [](const PlanScenario& sc, const std::vector<FuncEvent>& events) {
        std::size_t pos = 0;
        for (const auto& ev : events) {
            if (pos < sc.events.size() && sc.events[pos] == ev) ++pos;
        }
        return pos == sc.events.size();
    };

    std::map<std::pair<std::vector<FuncEvent>, std::string>, int> unseen;
    for (const auto& tr : traces) {
        bool any = false;
        for (std::size_t i = 0; i < p.scenarios.size(); ++i) {
            if (completes(p.scenarios[i], tr.events)) {
                realized[i] = true;
                any = true;
            }
        }
        if (!any && !tr.events.empty()) ++unseen[{tr.events, tr.end_state}];
    }
    for (std::size_t i = 0; i < p.scenarios.size(); ++i)
        if (!realized[i]) rep.never_realized.push_back(p.scenarios[i].describe());
    for (const auto& [key, count] : unseen)
        rep.unseen.push_back({key.first, key.second, count});
    return rep;
}

std::string RefinementReport::text() const {
    std::ostringstream os;
    os << "refinement report\n";
    os << "  never realized (" << never_realized.size() << "):\n";
    for (const auto& s : never_realized) os << "    - " << s << "\n";
    os << "  unseen (" << unseen.size() << "):\n";
    for (const auto& u : unseen) {
        os << "    - [";
        for (std::size_t i = 0; i < u.events.size(); ++i) {
            if (i) os << ", ";
            os << u.events[i].str();
        }
        os << "] -> " << u.end_state << " (x" << u.count << ")\n";
    }
    return os.str();
}

std::string RefinementReport::to_json() const {
    ordered_json j;
    j["never_realized"] = never_realized;
    j["unseen"] = ordered_json::array();
    for (const auto& u : unseen) {
        ordered_json uj;
        uj["events"] = ordered_json::array();
        for (const auto& e : u.events) uj["events"].push_back(e.str());
        uj["end_state"] = u.end_state;
        uj["count"] = u.count;
        j["unseen"].push_back(uj);
    }
    return j.dump(2) + "\n";
}

// ---- plan (de)serialization --------------------------------------------------

namespace {

TreeNode tree_from_json(const json& j, const std::string& where) {
    TreeNode n;
    if (j.contains("component")) {
        n.gate = TreeNode::Gate::Leaf;
        n.component = j.at("component").get<std::string>();
        n.name = j.value("name", n.component);
        if (j.contains("children") || j.contains("gate"))
            throw ParseError(where + ": a leaf may not carry a gate or children");
        return n;
    }
    if (!j.contains("gate") || !j.contains("children") || !j.contains("name"))
        throw ParseError(where + ": internal node needs name, gate and children");
    const std::string g = j.at("gate").get<std::string>();
    if (g == "AND") n.gate = TreeNode::Gate::And;
    else if (g == "OR") n.gate = TreeNode::Gate::Or;
    else throw ParseError(where + ": gate must be AND or OR");
    n.name = j.at("name").get<std::string>();
    for (const auto& c : j.at("children"))
        n.children.push_back(tree_from_json(c, where + "." + n.name));
    return n;
}

ordered_json tree_to_json(const TreeNode& n) {
    ordered_json j;
    if (n.gate == TreeNode::Gate::Leaf) {
        if (!n.name.empty() && n.name != n.component) j["name"] = n.name;
        j["component"] = n.component;
        return j;
    }
    j["name"] = n.name;
    j["gate"] = n.gate == TreeNode::Gate::And ? "AND" : "OR";
    j["children"] = ordered_json::array();
    for (const auto& c : n.children) j["children"].push_back(tree_to_json(c));
    return j;
}

FunctionalityNode ftree_from_json(const json& j) {
    FunctionalityNode n;
    n.name = j.at("name").get<std::string>();
    if (j.contains("children"))
        for (const auto& c : j.at("children")) n.children.push_back(ftree_from_json(c));
    return n;
}

ordered_json ftree_to_json(const FunctionalityNode& n) {
    ordered_json j;
    j["name"] = n.name;
    if (!n.children.empty()) {
        j["children"] = ordered_json::array();
        for (const auto& c : n.children) j["children"].push_back(ftree_to_json(c));
    }
    return j;
}

void collect_names(const TreeNode& t, std::vector<std::string>& out) {
    out.push_back(t.gate == TreeNode::Gate::Leaf && t.name.empty() ? t.component : t.name);
    for (const auto& c : t.children) collect_names(c, out);
}

} // namespace

Plan plan_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("plan file: ") + e.what());
    }
    Plan p;
    try {
        p.component_tree = tree_from_json(doc.at("component_tree"), "component_tree");
        p.functionality_tree = ftree_from_json(doc.at("functionality_tree"));
        for (auto it = doc.at("cf_matrix").begin(); it != doc.at("cf_matrix").end(); ++it) {
            std::vector<std::string> nodes;
            for (const auto& n : it.value()) nodes.push_back(n.get<std::string>());
            p.cf_matrix[it.key()] = std::move(nodes);
        }
        const auto& f = doc.at("fsm");
        for (const auto& s : f.at("states")) p.fsm.states.push_back(s.get<std::string>());
        p.fsm.initial = f.at("initial").get<std::string>();
        for (const auto& g : f.at("goals")) p.fsm.goals.push_back(g.get<std::string>());
        for (const auto& t : f.at("transitions"))
            p.fsm.transitions.push_back({t.at("from").get<std::string>(),
                                         t.at("to").get<std::string>(),
                                         FuncEvent::parse(t.at("event").get<std::string>())});
        if (doc.contains("scenarios")) {
            for (const auto& s : doc.at("scenarios")) {
                PlanScenario sc;
                for (const auto& e : s.at("events"))
                    sc.events.push_back(FuncEvent::parse(e.get<std::string>()));
                sc.target = s.at("target").get<std::string>();
                sc.importance = s.value("importance", 1.0);
                sc.generated = s.value("generated", false);
                p.scenarios.push_back(std::move(sc));
            }
        }
        if (doc.contains("down_states"))
            for (auto it = doc.at("down_states").begin(); it != doc.at("down_states").end(); ++it) {
                std::vector<std::string> states;
                for (const auto& s : it.value()) states.push_back(s.get<std::string>());
                p.down_states[it.key()] = std::move(states);
            }
        p.provenance = doc.value("provenance", "");
    } catch (const json::exception& e) {
        throw ParseError(std::string("plan file: ") + e.what());
    }

    auto diags = validate_plan(p);
    std::string errors;
    for (const auto& d : diags)
        if (d.severity == Diagnostic::Severity::Error) errors += "\n  " + format_diagnostic(d);
    if (!errors.empty()) throw ValidationError("invalid plan:" + errors);
    return p;
}

std::string plan_to_json_text(const Plan& p) {
    ordered_json doc;
    doc["component_tree"] = tree_to_json(p.component_tree);
    doc["functionality_tree"] = ftree_to_json(p.functionality_tree);
    doc["cf_matrix"] = p.cf_matrix;
    ordered_json f;
    f["states"] = p.fsm.states;
    f["initial"] = p.fsm.initial;
    f["goals"] = p.fsm.goals;
    f["transitions"] = ordered_json::array();
    for (const auto& t : p.fsm.transitions) {
        ordered_json tj;
        tj["from"] = t.from;
        tj["to"] = t.to;
        tj["event"] = t.label.str();
        f["transitions"].push_back(tj);
    }
    doc["fsm"] = f;
    doc["scenarios"] = ordered_json::array();
    for (const auto& s : p.scenarios) {
        ordered_json sj;
        sj["events"] = ordered_json::array();
        for (const auto& e : s.events) sj["events"].push_back(e.str());
        sj["target"] = s.target;
        sj["importance"] = s.importance;
        if (s.generated) sj["generated"] = true;
        doc["scenarios"].push_back(sj);
    }
    if (!p.down_states.empty()) doc["down_states"] = p.down_states;
    if (!p.provenance.empty()) doc["provenance"] = p.provenance;
    return doc.dump(2) + "\n";
}

Plan plan_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read plan file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return plan_from_json_text(ss.str());
}

void plan_store(const Plan& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write plan file '" + path + "'");
    out << plan_to_json_text(p);
}

std::vector<Diagnostic> validate_plan(const Plan& p, const SystemModel* model) {
    std::vector<Diagnostic> out;
    auto error = [&](std::string loc, std::string msg) {
        out.push_back({Diagnostic::Severity::Error, std::move(loc), std::move(msg)});
    };
    auto warning = [&](std::string loc, std::string msg) {
        out.push_back({Diagnostic::Severity::Warning, std::move(loc), std::move(msg)});
    };

    std::vector<std::string> node_names;
    collect_names(p.component_tree, node_names);
    {
        auto sorted = node_names;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            error("component_tree", "node names must be unique");
    }
    std::vector<const TreeNode*> leaves;
    collect_leaves(p.component_tree, leaves);
    if (leaves.empty()) error("component_tree", "tree has no leaves");

    std::function<void(const TreeNode&)> check_node = [&](const TreeNode& n) {
        if (n.gate != TreeNode::Gate::Leaf && n.children.empty())
            error("component_tree", "gate node '" + n.name + "' has no children");
        for (const auto& c : n.children) check_node(c);
    };
    check_node(p.component_tree);

    for (const auto& [func, nodes] : p.cf_matrix) {
        if (nodes.empty()) warning("cf_matrix", "functionality '" + func + "' requires nothing");
        for (const auto& n : nodes)
            if (!find_node(p.component_tree, n))
                error("cf_matrix", "functionality '" + func + "' references unknown node '" + n +
                                       "'");
    }

    std::set<std::string> states(p.fsm.states.begin(), p.fsm.states.end());
    if (states.size() != p.fsm.states.size()) error("fsm", "duplicate states");
    if (!states.count(p.fsm.initial)) error("fsm", "initial state not declared");
    if (p.fsm.goals.empty()) error("fsm", "goal states must be nonempty");
    for (const auto& g : p.fsm.goals)
        if (!states.count(g)) error("fsm", "goal state '" + g + "' not declared");
    std::set<std::pair<std::string, std::string>> labels;
    for (const auto& t : p.fsm.transitions) {
        if (!states.count(t.from) || !states.count(t.to))
            error("fsm", "transition references undeclared state");
        if (!labels.insert({t.from, t.label.str()}).second)
            error("fsm", "state '" + t.from + "' has two transitions labeled '" + t.label.str() +
                             "'");
        if (!p.cf_matrix.count(t.label.functionality))
            error("fsm", "label '" + t.label.str() + "' names an unknown functionality");
    }

    for (std::size_t i = 0; i < p.scenarios.size(); ++i) {
        const auto& sc = p.scenarios[i];
        const std::string loc = "scenario " + std::to_string(i + 1);
        if (!(sc.importance > 0)) error(loc, "importance must be positive");
        if (!states.count(sc.target)) error(loc, "target '" + sc.target + "' is not an FSM state");
        for (const auto& e : sc.events)
            if (!p.cf_matrix.count(e.functionality))
                error(loc, "event '" + e.str() + "' names an unknown functionality");
        // the event list must drive the FSM from initial to target
        std::string cur = p.fsm.initial;
        bool dead = false;
        for (const auto& e : sc.events) {
            bool moved = false;
            for (const auto& t : p.fsm.transitions)
                if (t.from == cur && t.label == e) {
                    cur = t.to;
                    moved = true;
                    break;
                }
            if (!moved) {
                error(loc, "event '" + e.str() + "' has no transition from FSM state '" + cur +
                               "'");
                dead = true;
                break;
            }
        }
        if (!dead && cur != sc.target)
            error(loc, "event list ends in '" + cur + "', not the target '" + sc.target + "'");
    }

    if (model) {
        for (const TreeNode* leaf : leaves)
            if (model->component_index(leaf->component) < 0)
                error("component_tree",
                      "leaf references undeclared component '" + leaf->component + "'");
        for (const auto& [comp, sts] : p.down_states) {
            int ci = model->component_index(comp);
            if (ci < 0) {
                error("down_states", "undeclared component '" + comp + "'");
                continue;
            }
            for (const auto& s : sts)
                if (model->state_index(ci, s) < 0)
                    error("down_states", "'" + s + "' is not a state of '" + comp + "'");
        }
    }
    return out;
}

// ---- PlanRuntime -------------------------------------------------------------

PlanRuntime::PlanRuntime(Plan plan, const CompiledModel& cm) : plan_(std::move(plan)), cm_(&cm) {
    const auto& model = cm.model();
    auto diags = validate_plan(plan_, &model);
    std::string errors;
    for (const auto& d : diags)
        if (d.severity == Diagnostic::Severity::Error) errors += "\n  " + format_diagnostic(d);
    if (!errors.empty()) throw ValidationError("plan does not fit the model:" + errors);

    for (const auto& [func, nodes] : plan_.cf_matrix) {
        func_names_.push_back(func);
        std::vector<const TreeNode*> resolved;
        for (const auto& n : nodes) resolved.push_back(find_node(plan_.component_tree, n));
        func_nodes_.push_back(std::move(resolved));
    }

    down_state_idx_.resize(model.components.size());
    static const std::vector<std::string> kDefaultDown = {"DOWN", "FAILED", "FAIL"};
    for (std::size_t c = 0; c < model.components.size(); ++c) {
        const auto& comp = model.components[c];
        auto it = plan_.down_states.find(comp.name);
        const std::vector<std::string>& names =
            it != plan_.down_states.end() ? it->second : kDefaultDown;
        for (const auto& s : names) {
            int si = model.state_index(static_cast<int>(c), s);
            if (si >= 0) down_state_idx_[c].insert(si);
        }
    }
}

std::vector<bool> PlanRuntime::binary_status(const std::vector<int>& comp_state) const {
    std::vector<bool> up(comp_state.size());
    for (std::size_t c = 0; c < comp_state.size(); ++c)
        up[c] = !down_state_idx_[c].count(comp_state[c]);
    return up;
}

namespace {

bool eval_node_fast(const TreeNode& n, const CompiledModel& cm, const std::vector<bool>& up) {
    switch (n.gate) {
        case TreeNode::Gate::Leaf: {
            int ci = cm.comp_index(n.component);
            return ci < 0 ? true : up[static_cast<std::size_t>(ci)];
        }
        case TreeNode::Gate::And:
            for (const auto& c : n.children)
                if (!eval_node_fast(c, cm, up)) return false;
            return true;
        case TreeNode::Gate::Or:
            for (const auto& c : n.children)
                if (eval_node_fast(c, cm, up)) return true;
            return false;
    }
    return true;
}

} // namespace

std::vector<bool> PlanRuntime::func_status(const std::vector<bool>& up) const {
    std::vector<bool> out(func_names_.size(), true);
    for (std::size_t f = 0; f < func_nodes_.size(); ++f)
        for (const TreeNode* n : func_nodes_[f])
            if (!eval_node_fast(*n, *cm_, up)) {
                out[f] = false;
                break;
            }
    return out;
}

std::vector<FuncEvent> PlanRuntime::diff(const std::vector<bool>& before,
                                         const std::vector<bool>& after) const {
    std::vector<FuncEvent> out;
    for (std::size_t f = 0; f < func_names_.size(); ++f)
        if (before[f] != after[f]) out.push_back({func_names_[f], before[f]});
    return out;
}

} // namespace riskex
