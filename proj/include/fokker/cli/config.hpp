#pragma once

// Run configuration: a flat JSON object of typed scalars and short numeric
// arrays. Every key is listed in schema(); anything else is rejected.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "fokker/action.hpp"
#include "fokker/error.hpp"
#include "fokker/propagator.hpp"
#include "fokker/vec.hpp"

namespace fokker::cli {

/// Bad, missing or ill-typed configuration; the message names the key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class KeyType { Number, Integer, String, Boolean, Vec4, NumberList };

struct KeySpec {
  const char* name;
  KeyType type;
  bool required;
  const char* doc;  ///< meaning and units
};

inline const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"mode", KeyType::String, true, "\"euclidean\" or \"minkowski\""},
      {"m1", KeyType::Number, true, "mass of particle 1 (>= 0)"},
      {"m2", KeyType::Number, true, "mass of particle 2 (>= 0)"},
      {"coupling", KeyType::Number, true, "charge product e1*e2"},
      {"hbar", KeyType::Number, true, "Planck constant (> 0)"},
      {"delta_width", KeyType::Number, true, "regulator width eps, length^2 (> 0)"},
      {"segment_points", KeyType::Integer, false, "Gauss-Legendre points per interval (1..64), default 1"},
      {"n1", KeyType::Integer, false, "proper-time steps of particle 1, default 4"},
      {"n2", KeyType::Integer, false, "proper-time steps of particle 2, default 4"},
      {"S1", KeyType::Number, false, "total proper time of particle 1, default 1"},
      {"S2", KeyType::Number, false, "total proper time of particle 2, default 1"},
      {"x1_in", KeyType::Vec4, false, "start point of particle 1, [x0, x1, x2, x3]"},
      {"x1_out", KeyType::Vec4, false, "end point of particle 1"},
      {"x2_in", KeyType::Vec4, false, "start point of particle 2"},
      {"x2_out", KeyType::Vec4, false, "end point of particle 2"},
      {"P1_in", KeyType::Number, false, "initial self-energy of particle 1 (> 0), default 0.5"},
      {"P2_in", KeyType::Number, false, "initial self-energy of particle 2 (> 0), default 0.5"},
      {"n_samples", KeyType::Integer, false, "Monte Carlo samples per estimate, default 4000"},
      {"seed", KeyType::Integer, false, "base seed, default 1"},
      {"workers", KeyType::Integer, false, "sampling workers, default 1"},
      {"max_skip_fraction", KeyType::Number, false, "tolerated fraction of singular samples, default 0.01"},
      {"proper_time_integral", KeyType::Boolean, false, "propagate: also integrate over (S1, S2), default false"},
      {"ptg_s_min", KeyType::Number, false, "smallest proper-time grid point, default 1e-3"},
      {"ptg_s_max", KeyType::Number, false, "largest proper-time grid point, default 50"},
      {"ptg_count", KeyType::Integer, false, "proper-time grid points per axis (odd), default 97"},
      {"sweep_key", KeyType::String, false, "sweep: scalar key to vary"},
      {"sweep_values", KeyType::NumberList, false, "sweep: values taken by sweep_key"},
  };
  return keys;
}

struct RunConfig {
  ModelParams params;
  std::size_t n1 = 4;
  std::size_t n2 = 4;
  double S1 = 1.0;
  double S2 = 1.0;
  Endpoints<4> p1{{0.0, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}};
  Endpoints<4> p2{{0.0, 0.3, 0.0, 0.0}, {1.0, 0.3, 0.0, 0.0}};
  double P1_in = 0.5;
  double P2_in = 0.5;
  std::size_t n_samples = 4000;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  double max_skip_fraction = 0.01;
  bool proper_time_integral = false;
  ProperTimeGrid ptg{};
  std::string sweep_key;
  std::vector<double> sweep_values;
  nlohmann::json source;  ///< the parsed document, echoed into metadata

  KernelEstimatorConfig estimator() const {
    KernelEstimatorConfig c;
    c.n1 = n1;
    c.n2 = n2;
    c.sampling.n_samples = n_samples;
    c.sampling.seed = seed;
    c.sampling.workers = workers;
    c.max_skip_fraction = max_skip_fraction;
    return c;
  }
};

/// Keys that sweep may vary.
inline const std::vector<std::string>& sweepable_keys() {
  static const std::vector<std::string> k = {"coupling", "m1", "m2", "hbar", "delta_width", "S1", "S2"};
  return k;
}

namespace detail {

inline const KeySpec* find_key(const std::string& name) {
  for (const auto& k : schema())
    if (name == k.name) return &k;
  return nullptr;
}

inline const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::Number: return "a number";
    case KeyType::Integer: return "a non-negative integer";
    case KeyType::String: return "a string";
    case KeyType::Boolean: return "a boolean";
    case KeyType::Vec4: return "an array of 4 numbers";
    case KeyType::NumberList: return "a non-empty array of numbers";
  }
  return "?";
}

inline bool has_type(const nlohmann::json& v, KeyType t) {
  switch (t) {
    case KeyType::Number: return v.is_number();
    case KeyType::Integer: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    case KeyType::String: return v.is_string();
    case KeyType::Boolean: return v.is_boolean();
    case KeyType::Vec4:
      if (!v.is_array() || v.size() != 4) return false;
      for (const auto& e : v)
        if (!e.is_number()) return false;
      return true;
    case KeyType::NumberList:
      if (!v.is_array() || v.empty()) return false;
      for (const auto& e : v)
        if (!e.is_number()) return false;
      return true;
  }
  return false;
}

inline Vec4 to_vec4(const nlohmann::json& v) {
  Vec4 r{};
  for (std::size_t i = 0; i < 4; ++i) r[i] = v[i].get<double>();
  return r;
}

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace detail

/// Scalar value of a sweepable key.
inline void set_scalar(RunConfig& c, const std::string& key, double value) {
  if (key == "coupling") c.params.coupling = value;
  else if (key == "m1") c.params.m1 = value;
  else if (key == "m2") c.params.m2 = value;
  else if (key == "hbar") c.params.hbar = value;
  else if (key == "delta_width") c.params.delta_width = value;
  else if (key == "S1") c.S1 = value;
  else if (key == "S2") c.S2 = value;
  else throw ConfigError("sweep_key: \"" + key + "\" cannot be swept");
}

/// Checks the physical invariants, naming the first offending key.
inline void validate(const RunConfig& c) {
  using detail::require;
  const ModelParams& p = c.params;
  require(p.m1 >= 0.0 && std::isfinite(p.m1), "m1", "must be finite and >= 0");
  require(p.m2 >= 0.0 && std::isfinite(p.m2), "m2", "must be finite and >= 0");
  require(std::isfinite(p.coupling), "coupling", "must be finite");
  require(p.hbar > 0.0 && std::isfinite(p.hbar), "hbar", "must be > 0");
  require(p.delta_width > 0.0 && std::isfinite(p.delta_width), "delta_width", "must be > 0");
  require(p.segment_points >= 1 && p.segment_points <= kMaxSegmentPoints, "segment_points",
          "must lie in [1, 64]");
  require(c.n1 >= 1, "n1", "must be >= 1");
  require(c.n2 >= 1, "n2", "must be >= 1");
  require(c.n1 + c.n2 <= 512, "n1", "n1 + n2 must not exceed 512");
  require(c.S1 > 0.0 && std::isfinite(c.S1), "S1", "must be > 0");
  require(c.S2 > 0.0 && std::isfinite(c.S2), "S2", "must be > 0");
  for (const auto* e : {&c.p1, &c.p2})
    require(all_finite(e->x_in) && all_finite(e->x_out), e == &c.p1 ? "x1_in" : "x2_in",
            "endpoint components must be finite");
  require(c.P1_in > 0.0 && std::isfinite(c.P1_in), "P1_in", "must be > 0");
  require(c.P2_in > 0.0 && std::isfinite(c.P2_in), "P2_in", "must be > 0");
  require(c.n_samples >= 1, "n_samples", "must be >= 1");
  require(c.workers >= 1 && c.workers <= 256, "workers", "must lie in [1, 256]");
  require(c.max_skip_fraction >= 0.0 && c.max_skip_fraction <= 1.0, "max_skip_fraction",
          "must lie in [0, 1]");
  require(c.ptg.s_min > 0.0, "ptg_s_min", "must be > 0");
  require(c.ptg.s_max > c.ptg.s_min, "ptg_s_max", "must exceed ptg_s_min");
  require(c.ptg.count1 >= 3 && c.ptg.count1 % 2 == 1, "ptg_count", "must be odd and >= 3");
  if (!c.sweep_key.empty()) {
    bool known = false;
    for (const auto& k : sweepable_keys()) known = known || k == c.sweep_key;
    require(known, "sweep_key", "\"" + c.sweep_key + "\" cannot be swept");
    require(!c.sweep_values.empty(), "sweep_values", "required when sweep_key is set");
  }
}

inline RunConfig parse_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const KeySpec* k = detail::find_key(it.key());
    if (!k) throw ConfigError(it.key() + ": unknown key");
    if (!detail::has_type(it.value(), k->type))
      throw ConfigError(it.key() + ": expected " + detail::type_name(k->type));
  }
  for (const auto& k : schema())
    if (k.required && !doc.contains(k.name)) throw ConfigError(std::string(k.name) + ": missing required key");

  RunConfig c;
  c.source = doc;
  const std::string mode = doc.at("mode").get<std::string>();
  if (mode == "euclidean") c.params.mode = Mode::Euclidean;
  else if (mode == "minkowski") c.params.mode = Mode::Minkowski;
  else throw ConfigError("mode: must be \"euclidean\" or \"minkowski\"");

  auto num = [&](const char* key, double& out) {
    if (doc.contains(key)) out = doc.at(key).get<double>();
  };
  auto uint = [&](const char* key, auto& out) {
    if (doc.contains(key)) out = static_cast<std::remove_reference_t<decltype(out)>>(doc.at(key).get<std::uint64_t>());
  };
  num("m1", c.params.m1);
  num("m2", c.params.m2);
  num("coupling", c.params.coupling);
  num("hbar", c.params.hbar);
  num("delta_width", c.params.delta_width);
  if (doc.contains("segment_points")) {
    const auto q = doc.at("segment_points").get<std::uint64_t>();
    c.params.segment_points = q > 1000 ? 1000 : static_cast<int>(q);
  }
  uint("n1", c.n1);
  uint("n2", c.n2);
  num("S1", c.S1);
  num("S2", c.S2);
  if (doc.contains("x1_in")) c.p1.x_in = detail::to_vec4(doc.at("x1_in"));
  if (doc.contains("x1_out")) c.p1.x_out = detail::to_vec4(doc.at("x1_out"));
  if (doc.contains("x2_in")) c.p2.x_in = detail::to_vec4(doc.at("x2_in"));
  if (doc.contains("x2_out")) c.p2.x_out = detail::to_vec4(doc.at("x2_out"));
  num("P1_in", c.P1_in);
  num("P2_in", c.P2_in);
  uint("n_samples", c.n_samples);
  uint("seed", c.seed);
  uint("workers", c.workers);
  num("max_skip_fraction", c.max_skip_fraction);
  if (doc.contains("proper_time_integral")) c.proper_time_integral = doc.at("proper_time_integral").get<bool>();
  num("ptg_s_min", c.ptg.s_min);
  num("ptg_s_max", c.ptg.s_max);
  if (doc.contains("ptg_count")) {
    uint("ptg_count", c.ptg.count1);
    c.ptg.count2 = c.ptg.count1;
  }
  if (doc.contains("sweep_key")) c.sweep_key = doc.at("sweep_key").get<std::string>();
  if (doc.contains("sweep_values")) c.sweep_values = doc.at("sweep_values").get<std::vector<double>>();
  if (c.sweep_values.size() && c.sweep_key.empty())
    throw ConfigError("sweep_key: required when sweep_values is set");

  validate(c);
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  return parse_config(doc);
}

}  // namespace fokker::cli
