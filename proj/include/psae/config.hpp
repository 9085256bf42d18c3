#pragma once

// Run configuration. Precedence: command-line flag > config file > default.
//
// Config file (JSON), every section and key optional:
//   { "seed": 7,
//     "paths":   { "input": "...", "output": "..." },
//     "augment": { "transpositions_per_seq": 31, "truncated_per_seq": 16,
//                  "truncation_min": 1, "truncation_max": 100 },
//     "model":   { "vocab_size": 131, "embed_dim": 64, "hidden_dim": 64, "num_layers": 2,
//                  "num_heads": 4, "ffn_dim": 352, "max_position": 384, "output_classes": 128 },
//     "train":   { "batch_size": 64, "learning_rate": 0.001, "epochs": 10, "flood_b": 0.05,
//                  "mask_rate": 0.15, "weight_decay": 0.01, "masking": "replace" | "bert" } }
// Unknown keys are rejected.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include "psae/augment.hpp"
#include "psae/error.hpp"
#include "psae/model.hpp"

namespace psae {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string input_path;
  std::string output_path;
  AugmentPolicy augment;
  ModelConfig model;
  TrainHyper train;

  void validate() const {
    augment.validate();
    model.validate();
    train.validate();
  }
};

/// Values given on the command line; unset fields defer to file/defaults.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> input_path, output_path;
  std::optional<int> transpositions_per_seq, truncated_per_seq, truncation_min, truncation_max;
  std::optional<int> batch_size, epochs;
  std::optional<double> learning_rate, flood_b, mask_rate, weight_decay;
  std::optional<std::string> masking;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be a JSON object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + k + "' in " + where);
  }
}

template <typename V>
void take(const nlohmann::json& obj, const char* key, V& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string(where) + "." + key + ": " + e.what());
  }
}

inline MaskingStrategy parse_masking(const std::string& s) {
  if (s == "replace") return MaskingStrategy::Replace;
  if (s == "bert") return MaskingStrategy::BertMixed;
  throw Error(ErrorCode::InvalidConfig, "masking must be 'replace' or 'bert', got '" + s + "'");
}

}  // namespace detail

inline void apply_config_json(RunConfig& cfg, const nlohmann::json& root) {
  using detail::take;
  detail::reject_unknown(root, {"seed", "paths", "augment", "model", "train"}, "config");
  take(root, "seed", cfg.seed, "config");
  if (root.contains("paths")) {
    const auto& p = root["paths"];
    detail::reject_unknown(p, {"input", "output"}, "paths");
    take(p, "input", cfg.input_path, "paths");
    take(p, "output", cfg.output_path, "paths");
  }
  if (root.contains("augment")) {
    const auto& a = root["augment"];
    detail::reject_unknown(a, {"transpositions_per_seq", "truncated_per_seq", "truncation_min", "truncation_max"},
                           "augment");
    take(a, "transpositions_per_seq", cfg.augment.transpositions_per_seq, "augment");
    take(a, "truncated_per_seq", cfg.augment.truncated_per_seq, "augment");
    take(a, "truncation_min", cfg.augment.truncation_min, "augment");
    take(a, "truncation_max", cfg.augment.truncation_max, "augment");
  }
  if (root.contains("model")) {
    const auto& m = root["model"];
    detail::reject_unknown(m, {"vocab_size", "embed_dim", "hidden_dim", "num_layers", "num_heads", "ffn_dim",
                               "max_position", "output_classes"},
                           "model");
    take(m, "vocab_size", cfg.model.vocab_size, "model");
    take(m, "embed_dim", cfg.model.embed_dim, "model");
    take(m, "hidden_dim", cfg.model.hidden_dim, "model");
    take(m, "num_layers", cfg.model.num_layers, "model");
    take(m, "num_heads", cfg.model.num_heads, "model");
    take(m, "ffn_dim", cfg.model.ffn_dim, "model");
    take(m, "max_position", cfg.model.max_position, "model");
    take(m, "output_classes", cfg.model.output_classes, "model");
  }
  if (root.contains("train")) {
    const auto& t = root["train"];
    detail::reject_unknown(t, {"batch_size", "learning_rate", "epochs", "flood_b", "mask_rate", "weight_decay",
                               "masking"},
                           "train");
    take(t, "batch_size", cfg.train.batch_size, "train");
    take(t, "learning_rate", cfg.train.learning_rate, "train");
    take(t, "epochs", cfg.train.epochs, "train");
    take(t, "flood_b", cfg.train.flood_b, "train");
    take(t, "mask_rate", cfg.train.mask_rate, "train");
    take(t, "weight_decay", cfg.train.weight_decay, "train");
    if (t.contains("masking")) {
      std::string s;
      take(t, "masking", s, "train");
      cfg.train.masking = detail::parse_masking(s);
    }
  }
}

inline void apply_overrides(RunConfig& cfg, const ConfigOverrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.input_path) cfg.input_path = *o.input_path;
  if (o.output_path) cfg.output_path = *o.output_path;
  if (o.transpositions_per_seq) cfg.augment.transpositions_per_seq = *o.transpositions_per_seq;
  if (o.truncated_per_seq) cfg.augment.truncated_per_seq = *o.truncated_per_seq;
  if (o.truncation_min) cfg.augment.truncation_min = *o.truncation_min;
  if (o.truncation_max) cfg.augment.truncation_max = *o.truncation_max;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
  if (o.flood_b) cfg.train.flood_b = *o.flood_b;
  if (o.mask_rate) cfg.train.mask_rate = *o.mask_rate;
  if (o.weight_decay) cfg.train.weight_decay = *o.weight_decay;
  if (o.masking) cfg.train.masking = detail::parse_masking(*o.masking);
}

/// Defaults, then `file_json` (may be null), then overrides. The seed is
/// propagated to the augment policy and training loop.
inline RunConfig resolve_config(const nlohmann::json& file_json, const ConfigOverrides& overrides) {
  RunConfig cfg;
  if (!file_json.is_null()) apply_config_json(cfg, file_json);
  apply_overrides(cfg, overrides);
  cfg.augment.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

inline nlohmann::json load_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace psae
