#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace riskex {

/// Check `doc` against a JSON-Schema document (draft-07 subset: type,
/// required, properties, additionalProperties, items, enum, minimum,
/// exclusiveMinimum, maximum, minItems, pattern, $ref into #/definitions).
/// Returns one message per violation, each prefixed with the JSON path.
std::vector<std::string> schema_check(const nlohmann::json& schema, const nlohmann::json& doc);

/// The model-file schema, embedded so the parser enforces the same text that
/// ships in schemas/model.schema.json.
const std::string& model_schema_text();

} // namespace riskex
