// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

// Validator for the JSON Schema subset used by docs/report.schema.json:
// type, required, properties, additionalProperties, items, enum, minimum,
// maximum.

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtprop::schema {

using nlohmann::json;

inline bool type_matches(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "number") return v.is_number();
  if (type == "integer") return v.is_number_integer();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  return false;
}

inline void validate(const json& v, const json& s, const std::string& path, std::vector<std::string>& errors) {
  if (s.contains("type") && !type_matches(v, s["type"].get<std::string>())) {
    errors.push_back(path + ": expected " + s["type"].get<std::string>());
    return;
  }
  if (s.contains("enum")) {
    bool ok = false;
    for (const auto& e : s["enum"]) ok = ok || e == v;
    if (!ok) errors.push_back(path + ": not in enum");
  }
  if (v.is_number()) {
    if (s.contains("minimum") && v.get<double>() < s["minimum"].get<double>()) errors.push_back(path + ": below minimum");
    if (s.contains("maximum") && v.get<double>() > s["maximum"].get<double>()) errors.push_back(path + ": above maximum");
  }
  if (v.is_array() && s.contains("items"))
    for (std::size_t i = 0; i < v.size(); ++i) validate(v[i], s["items"], path + "[" + std::to_string(i) + "]", errors);
  if (v.is_object()) {
    if (s.contains("required"))
      for (const auto& r : s["required"])
        if (!v.contains(r.get<std::string>())) errors.push_back(path + ": missing " + r.get<std::string>());
    for (const auto& [key, value] : v.items()) {
      if (s.contains("properties") && s["properties"].contains(key)) {
        validate(value, s["properties"][key], path + "." + key, errors);
      } else if (s.contains("additionalProperties")) {
        const auto& ap = s["additionalProperties"];
        if (ap.is_boolean()) {
          if (!ap.get<bool>()) errors.push_back(path + ": unexpected key " + key);
        } else {
          validate(value, ap, path + "." + key, errors);
        }
      }
    }
  }
}

inline std::vector<std::string> validate(const json& v, const json& s) {
  std::vector<std::string> errors;
  validate(v, s, "$", errors);
  return errors;
}

}  // namespace mtprop::schema
