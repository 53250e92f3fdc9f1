#pragma once

// Shared helpers for the JSONL readers. Internal to the library.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segmil/error.hpp"

namespace segmil::detail {

using json = nlohmann::json;

inline const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(where + ": missing field '" + key + "'");
  return *it;
}

inline double finite_number(const json& value, const std::string& where) {
  if (!value.is_number()) throw SchemaError(where + ": expected a number");
  const double x = value.get<double>();
  if (!std::isfinite(x)) throw SchemaError(where + ": non-finite value");
  return x;
}

inline long long integer(const json& value, const std::string& where) {
  if (!value.is_number_integer()) throw SchemaError(where + ": expected an integer");
  return value.get<long long>();
}

inline std::vector<double> finite_array(const json& value, const std::string& where) {
  if (!value.is_array()) throw SchemaError(where + ": expected an array");
  std::vector<double> out;
  out.reserve(value.size());
  for (const auto& x : value) out.push_back(finite_number(x, where));
  return out;
}

inline void check_finite(const std::vector<double>& xs, const std::string& where) {
  for (double x : xs)
    if (!std::isfinite(x)) throw SchemaError(where + ": non-finite value");
}

}  // namespace segmil::detail
