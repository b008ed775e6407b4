#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace dmf::io {

/// Throws E naming the first key of `j` that is not in `allowed`.
template <typename E = std::invalid_argument>
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& section) {
  if (!j.is_object()) throw E(section + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw E(section + ": unknown key '" + key + "'");
  }
}

/// Assigns j[key] to `out` when present, converting type errors to E.
template <typename E = std::invalid_argument, typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw E(section + "." + key + ": " + e.what());
  }
}

}  // namespace dmf::io
