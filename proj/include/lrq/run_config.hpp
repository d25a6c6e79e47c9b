#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrq/train.hpp"

// Plain-text run configuration: one `key = value` per line, '#' starts a
// comment. Values are typed by the key's default; unknown keys are errors.
//
// Training keys: lr0 decay_factor decay_epoch batch_size epochs seed beta1
// beta2 adam_eps weight_decay weight_decay_mode alpha1 alpha2 alpha3 lambda
// margin checkpoint_every grad_clip gradop_k, and the model keys num_queries
// hidden_dim num_heads ffn_expansion ln_eps query_init_std feature_dim
// num_layers residual_alpha rope_base normalize_covariance. Input and output
// widths and the readout follow from the dataset's task.
//
// Dataset keys: task count points seed.

namespace lrq {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// "key=value" → (key, value), both trimmed.
inline std::pair<std::string, std::string> parse_assignment(const std::string& s, const std::string& where) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + trim(s) + "'");
  std::string k = trim(s.substr(0, eq)), v = trim(s.substr(eq + 1));
  if (k.empty()) throw ConfigError(where + ": missing key");
  if (v.empty()) throw ConfigError(where + ": missing value for '" + k + "'");
  return {k, v};
}

inline KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    if (trim(line).empty()) continue;
    const std::string where = origin + ":" + std::to_string(no);
    auto [k, v] = parse_assignment(line, where);
    if (!kv.emplace(k, v).second) throw ConfigError(where + ": duplicate key '" + k + "'");
  }
  return kv;
}

/// Later layers win.
inline KeyValues merge(KeyValues base, const KeyValues& over) {
  for (const auto& [k, v] : over) base[k] = v;
  return base;
}

/// LRQ_SEED, if set, as an override layer.
inline KeyValues env_seed_override() {
  KeyValues kv;
  if (const char* s = std::getenv("LRQ_SEED"); s && *s) kv["seed"] = trim(s);
  return kv;
}

namespace detail {

/// Sets j[key] from text, converting to the type of the existing entry.
inline void assign_typed(nlohmann::json& j, const std::string& key, const std::string& text) {
  auto& slot = j[key];
  std::size_t used = 0;
  try {
    if (slot.is_boolean()) {
      if (text == "true" || text == "1") slot = true;
      else if (text == "false" || text == "0") slot = false;
      else throw ConfigError("");
      return;
    }
    if (slot.is_string()) {
      slot = text;
      return;
    }
    if (slot.is_number_unsigned() || slot.is_number_integer()) {
      if (text.empty() || text[0] == '-' || text[0] == '+') throw ConfigError("");
      const auto v = std::stoull(text, &used);
      if (used != text.size()) throw ConfigError("");
      slot = static_cast<std::uint64_t>(v);
      return;
    }
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigError("");
    slot = v;
  } catch (const std::exception&) {
    const char* want = slot.is_boolean() ? "a boolean" : slot.is_number_float() ? "a number" : "a non-negative integer";
    throw ConfigError("config key '" + key + "' expects " + std::string(want) + ", got '" + text + "'");
  }
}

inline std::string format_value(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  return v.dump();
}

inline const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> k{"num_queries",    "hidden_dim", "num_heads",   "ffn_expansion",
                                          "ln_eps",         "query_init_std", "feature_dim", "num_layers",
                                          "residual_alpha", "rope_base",  "normalize_covariance"};
  return k;
}

}  // namespace detail

struct TrainRun {
  TaskKind task = TaskKind::kFlow;
  ModelConfig model;
  TrainConfig train;
};

inline std::vector<std::string> train_run_keys() {
  std::vector<std::string> keys;
  const nlohmann::json defaults = to_json(TrainConfig{});
  for (const auto& [k, v] : defaults.items()) keys.push_back(k);
  for (const auto& k : detail::model_keys()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

inline void reject_unknown(const KeyValues& kv, const std::vector<std::string>& allowed, const std::string& what) {
  for (const auto& [k, v] : kv) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown " + what + " config key '" + k + "' (known: " + list + ")");
    }
  }
}

/// Applies key/value settings on top of the given configs.
inline TrainRun apply_settings(TrainRun base, const KeyValues& kv) {
  reject_unknown(kv, train_run_keys(), "training");
  nlohmann::json tj = to_json(base.train), mj = to_json(base.model);
  const auto& mk = detail::model_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(mk.begin(), mk.end(), k) != mk.end()) detail::assign_typed(mj, k, v);
    else detail::assign_typed(tj, k, v);
  }
  if (kv.count("feature_dim")) mj["rope_axis_split"] = {0, 0, 0};
  try {
    base.train = train_config_from_json(tj);
    base.model = model_config_from_json(mj);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return base;
}

inline TrainRun resolve_train_run(TaskKind task, const KeyValues& kv) {
  TrainRun r;
  r.task = task;
  r.model = default_model_config(task);
  return apply_settings(r, kv);
}

/// Every training key with its resolved value; feeding it back reproduces
/// the run.
inline std::string effective_config_text(const TrainRun& r) {
  const nlohmann::json tj = to_json(r.train), mj = to_json(r.model);
  std::ostringstream os;
  os << "# task = " << to_string(r.task) << " (from the dataset)\n";
  for (const auto& k : train_run_keys()) {
    const auto& v = tj.contains(k) ? tj.at(k) : mj.at(k);
    os << k << " = " << detail::format_value(v) << "\n";
  }
  return os.str();
}

struct GenConfig {
  TaskKind task = TaskKind::kFlow;
  std::size_t count = 100;
  std::size_t points = 1024;
  std::uint64_t seed = 0;
};

inline GenConfig resolve_gen_config(const KeyValues& kv) {
  reject_unknown(kv, {"count", "points", "seed", "task"}, "dataset");
  nlohmann::json j = {{"task", "flow"}, {"count", std::uint64_t(100)}, {"points", std::uint64_t(1024)}, {"seed", std::uint64_t(0)}};
  for (const auto& [k, v] : kv) detail::assign_typed(j, k, v);
  GenConfig g;
  g.task = parse_task(j["task"].get<std::string>());
  g.count = j["count"].get<std::size_t>();
  g.points = j["points"].get<std::size_t>();
  g.seed = j["seed"].get<std::uint64_t>();
  if (g.count == 0) throw ConfigError("count must be positive");
  require_points(g.points);
  return g;
}

inline std::string effective_config_text(const GenConfig& g) {
  std::ostringstream os;
  os << "count = " << g.count << "\npoints = " << g.points << "\nseed = " << g.seed << "\ntask = " << to_string(g.task) << "\n";
  return os.str();
}

}  // namespace lrq
