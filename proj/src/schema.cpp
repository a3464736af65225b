#include "riskex/schema.hpp"

#include <regex>

namespace riskex {

using nlohmann::json;

namespace {

const json* resolve_ref(const json& root, const std::string& ref) {
    const std::string prefix = "#/definitions/";
    if (ref.rfind(prefix, 0) != 0) return nullptr;
    const std::string name = ref.substr(prefix.size());
    auto defs = root.find("definitions");
    if (defs == root.end()) return nullptr;
    auto it = defs->find(name);
    return it == defs->end() ? nullptr : &*it;
}

bool type_matches(const std::string& t, const json& v) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "number") return v.is_number();
    if (t == "integer") return v.is_number_integer();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    return false;
}

void check(const json& root, const json& schema, const json& doc, const std::string& path,
           std::vector<std::string>& out) {
    if (auto ref = schema.find("$ref"); ref != schema.end()) {
        if (const json* target = resolve_ref(root, ref->get<std::string>()))
            check(root, *target, doc, path, out);
        else
            out.push_back(path + ": unresolvable $ref " + ref->get<std::string>());
        return;
    }
    if (auto ty = schema.find("type"); ty != schema.end()) {
        if (!type_matches(ty->get<std::string>(), doc)) {
            out.push_back(path + ": expected " + ty->get<std::string>());
            return;
        }
    }
    if (auto en = schema.find("enum"); en != schema.end()) {
        bool ok = false;
        for (const auto& cand : *en)
            if (cand == doc) ok = true;
        if (!ok) out.push_back(path + ": value not in enum");
    }
    if (doc.is_number()) {
        double v = doc.get<double>();
        if (auto m = schema.find("minimum"); m != schema.end() && v < m->get<double>())
            out.push_back(path + ": below minimum " + m->dump());
        if (auto m = schema.find("exclusiveMinimum"); m != schema.end() && v <= m->get<double>())
            out.push_back(path + ": must be > " + m->dump());
        if (auto m = schema.find("maximum"); m != schema.end() && v > m->get<double>())
            out.push_back(path + ": above maximum " + m->dump());
    }
    if (doc.is_string()) {
        if (auto p = schema.find("pattern"); p != schema.end()) {
            std::regex re(p->get<std::string>());
            if (!std::regex_search(doc.get<std::string>(), re))
                out.push_back(path + ": string does not match pattern " + p->get<std::string>());
        }
    }
    if (doc.is_array()) {
        if (auto m = schema.find("minItems");
            m != schema.end() && doc.size() < m->get<std::size_t>())
            out.push_back(path + ": fewer than " + m->dump() + " items");
        if (auto items = schema.find("items"); items != schema.end()) {
            for (std::size_t i = 0; i < doc.size(); ++i)
                check(root, *items, doc[i], path + "[" + std::to_string(i) + "]", out);
        }
    }
    if (doc.is_object()) {
        auto props = schema.find("properties");
        if (auto req = schema.find("required"); req != schema.end()) {
            for (const auto& r : *req)
                if (!doc.contains(r.get<std::string>()))
                    out.push_back(path + ": missing required key '" + r.get<std::string>() + "'");
        }
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            const json* sub = nullptr;
            if (props != schema.end()) {
                auto p = props->find(it.key());
                if (p != props->end()) sub = &*p;
            }
            if (sub) {
                check(root, *sub, it.value(), path + "." + it.key(), out);
            } else if (auto ap = schema.find("additionalProperties");
                       ap != schema.end() && ap->is_boolean() && !ap->get<bool>()) {
                out.push_back(path + ": unexpected key '" + it.key() + "'");
            }
        }
    }
}

} // namespace

std::vector<std::string> schema_check(const json& schema, const json& doc) {
    std::vector<std::string> out;
    check(schema, schema, doc, "$", out);
    return out;
}

const std::string& model_schema_text() {
    static const std::string text = R"SCHEMA({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "riskex system model",
  "type": "object",
  "required": ["name", "components", "end_states", "initial", "mission_time"],
  "additionalProperties": false,
  "properties": {
    "name": {"$ref": "#/definitions/identifier"},
    "mission_time": {"type": "number", "exclusiveMinimum": 0},
    "components": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["name", "states"],
        "additionalProperties": false,
        "properties": {
          "name": {"$ref": "#/definitions/identifier"},
          "states": {"type": "array", "minItems": 2, "items": {"$ref": "#/definitions/identifier"}},
          "transitions": {"type": "array", "items": {"$ref": "#/definitions/transition"}}
        }
      }
    },
    "continuous_vars": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["name", "initial", "derivative"],
        "additionalProperties": false,
        "properties": {
          "name": {"$ref": "#/definitions/identifier"},
          "initial": {"type": "number"},
          "derivative": {
            "type": "array",
            "minItems": 1,
            "items": {
              "type": "object",
              "required": ["rate"],
              "additionalProperties": false,
              "properties": {
                "when": {"type": "string"},
                "rate": {"type": "string"}
              }
            }
          }
        }
      }
    },
    "end_states": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["name", "predicate", "severity"],
        "additionalProperties": false,
        "properties": {
          "name": {"$ref": "#/definitions/identifier"},
          "predicate": {"type": "string"},
          "severity": {"$ref": "#/definitions/identifier"}
        }
      }
    },
    "initial": {
      "type": "object",
      "required": ["components"],
      "additionalProperties": false,
      "properties": {
        "components": {"type": "object"},
        "vars": {"type": "object"}
      }
    }
  },
  "definitions": {
    "identifier": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
    "transition": {
      "type": "object",
      "required": ["kind", "source"],
      "additionalProperties": false,
      "properties": {
        "kind": {"enum": ["demand", "timed", "conditional"]},
        "source": {"$ref": "#/definitions/identifier"},
        "trigger": {"$ref": "#/definitions/identifier"},
        "outcomes": {
          "type": "array",
          "minItems": 1,
          "items": {
            "type": "object",
            "required": ["target", "prob"],
            "additionalProperties": false,
            "properties": {
              "target": {"$ref": "#/definitions/identifier"},
              "prob": {"type": "number", "minimum": 0, "maximum": 1},
              "emits": {"type": "array", "items": {"$ref": "#/definitions/identifier"}}
            }
          }
        },
        "target": {"$ref": "#/definitions/identifier"},
        "distribution": {
          "type": "object",
          "required": ["type"],
          "additionalProperties": false,
          "properties": {
            "type": {"enum": ["exponential", "weibull", "fixed"]},
            "lambda": {"type": "number", "exclusiveMinimum": 0},
            "k": {"type": "number", "exclusiveMinimum": 0},
            "time": {"type": "number", "exclusiveMinimum": 0}
          }
        },
        "rate_modifier": {"type": "string"},
        "branchable": {"type": "boolean"},
        "guard": {"type": "string"},
        "emits": {"type": "array", "items": {"$ref": "#/definitions/identifier"}}
      }
    }
  }
}
)SCHEMA";
    return text;
}

} // namespace riskex
