// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat key=value settings shared by every command. Each key has a default
// and a one-line description; unknown keys are rejected. Text form:
//
//   # comment
//   image_size = 32
//   alpha = 0.01

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "span/model.hpp"
#include "span/sim.hpp"

namespace span::config {

struct KeyInfo {
  std::string key;
  std::string default_value;
  std::string description;
};

/// All recognised keys in documentation order.
const std::vector<KeyInfo>& known_keys();

class Settings {
 public:
  Settings();  // every key at its default

  /// Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_default(const std::string& key) const;

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Parses key=value text and applies it; ConfigError cites the line.
  void merge_text(const std::string& text, const std::string& origin);
  /// Canonical text, one key per line, sorted by key.
  std::string to_text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Model hyperparameters: `preset` first, then explicit overrides.
model::SpanConfig model_config(const Settings& s);
sim::SimConfig sim_config(const Settings& s);

/// Checkpoint sidecar: model kind plus every architecture/loss setting.
std::string format_model_sidecar(model::ModelKind kind, const model::SpanConfig& cfg);
std::pair<model::ModelKind, model::SpanConfig> parse_model_sidecar(const std::string& text,
                                                                   const std::string& origin);

}  // namespace span::config
