#pragma once

// Validator for the JSON-schema keywords used under docs/schemas: type,
// required, properties, items, enum, minimum, maximum, exclusiveMinimum.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace livesong::test_support {

inline bool schema_type_matches(const std::string& type, const nlohmann::json& v) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  return false;
}

inline void schema_validate(const nlohmann::json& schema, const nlohmann::json& v, const std::string& where,
                            std::vector<std::string>& errors) {
  if (schema.contains("type") && !schema_type_matches(schema["type"].get<std::string>(), v)) {
    errors.push_back(where + ": expected " + schema["type"].get<std::string>());
    return;
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == v;
    if (!found) errors.push_back(where + ": value not in enum");
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>()) errors.push_back(where + ": below minimum");
    if (schema.contains("maximum") && x > schema["maximum"].get<double>()) errors.push_back(where + ": above maximum");
    if (schema.contains("exclusiveMinimum") && x <= schema["exclusiveMinimum"].get<double>())
      errors.push_back(where + ": not above exclusiveMinimum");
  }
  if (v.is_object()) {
    if (schema.contains("required"))
      for (const auto& key : schema["required"])
        if (!v.contains(key.get<std::string>())) errors.push_back(where + ": missing '" + key.get<std::string>() + "'");
    if (schema.contains("properties"))
      for (const auto& [key, sub] : schema["properties"].items())
        if (v.contains(key)) schema_validate(sub, v[key], where + "." + key, errors);
  }
  if (v.is_array() && schema.contains("items"))
    for (std::size_t i = 0; i < v.size(); ++i)
      schema_validate(schema["items"], v[i], where + "[" + std::to_string(i) + "]", errors);
}

inline nlohmann::json load_schema(const std::string& name) {
  std::ifstream in(std::filesystem::path(LIVESONG_SCHEMA_DIR) / name);
  return nlohmann::json::parse(in);
}

/// Empty when `value` satisfies docs/schemas/<name>.
inline std::vector<std::string> schema_errors(const std::string& name, const nlohmann::json& value) {
  std::vector<std::string> errors;
  schema_validate(load_schema(name), value, "$", errors);
  return errors;
}

}  // namespace livesong::test_support
