#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "hbdnn/errors.hpp"

namespace hbdnn {

using json = nlohmann::json;

inline constexpr int schema_version = 1;

/// Checks a versioned JSON object: it must carry "schema_version": 1 and no
/// keys outside `allowed` (schema_version is implicitly allowed).
inline void check_object(const json& j, std::string_view type_name,
                         std::initializer_list<std::string_view> allowed) {
  if (!j.is_object())
    throw SchemaError(std::string(type_name) + ": expected a JSON object");
  if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer() ||
      j.at("schema_version").get<int>() != schema_version)
    throw SchemaError(std::string(type_name) + ": schema_version must be 1");
  for (const auto& [key, _] : j.items()) {
    if (key == "schema_version") continue;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw SchemaError(std::string(type_name) + ": unknown field '" + key + "'");
  }
}

template <class T>
T required(const json& j, std::string_view type_name, const char* key) {
  if (!j.contains(key))
    throw SchemaError(std::string(type_name) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string(type_name) + ": bad field '" + key + "': " + e.what());
  }
}

template <class T>
T optional_field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad field '") + key + "': " + e.what());
  }
}

inline json versioned(json body) {
  body["schema_version"] = schema_version;
  return body;
}

}  // namespace hbdnn
