// SPDX-License-Identifier: Apache-2.0
#include "span/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "span/error.hpp"

namespace span::config {

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = {
      {"preset", "desk", "architecture preset: full (64 px), desk (32 px), miniature (16 px)"},
      {"image_size", "", "frame size in pixels; empty = preset value"},
      {"points", "", "attention point count K; empty = preset value"},
      {"encoder", "", "encoder plan channels/kernel/stride,...; empty = preset"},
      {"decoder", "", "decoder plan channels/kernel/stride,...; empty = preset"},
      {"lstm_hidden", "", "LSTM width; empty = preset value"},
      {"baseline_features", "", "baseline feature vector width; empty = preset value"},
      {"alpha", "0.01", "weight of the attention-point consistency term"},
      {"sigma", "0.1", "heatmap width in normalized units"},
      {"beta", "1", "soft-argmax temperature"},
      {"lr", "0.001", "Adam learning rate"},
      {"gf_target", "same", "consistency reference: same (f_t) or next (f_{t+1})"},
      {"decoder_bypass", "false", "drop the image prediction path"},
      {"model", "span", "span, span_alpha0 or cnnrnn"},
      {"epochs", "1500", "training epochs"},
      {"seed", "0", "master seed (SPAN_SEED is used when unset)"},
      {"data", "", "dataset directory"},
      {"out", "", "output directory or file"},
      {"checkpoint", "", "checkpoint path"},
      {"positions", "A,C,E", "block positions"},
      {"demos", "4", "demonstrations per position"},
      {"trials", "10", "evaluation trials per position"},
      {"situation", "i", "evaluation situation: i, ii, iii, iv"},
      {"workers", "1", "evaluation worker threads"},
      {"episode_length", "100", "steps per episode T"},
      {"noise_scale", "0.1", "start-pose jitter in radians"},
      {"rate_limit", "0.15", "per-step joint change limit in radians"},
      {"grasp_radius", "0.03", "grasp radius in frame units"},
      {"lift_threshold", "0.05", "lift height for success in frame units"},
      {"brightness", "0.6", "situation ii brightness factor"},
      {"position_spacing", "0.15", "distance between neighbouring positions in frame widths"},
      {"pca_dims", "2", "principal components to export"},
  };
  return keys;
}

namespace {

const KeyInfo* find_key(const std::string& key) {
  for (const auto& k : known_keys())
    if (k.key == key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Settings::Settings() {
  for (const auto& k : known_keys()) values_[k.key] = k.default_value;
}

void Settings::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown configuration key '" + key + "'");
  values_[key] = value;
}

const std::string& Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

bool Settings::is_default(const std::string& key) const {
  const KeyInfo* k = find_key(key);
  return k && get(key) == k->default_value;
}

std::int64_t Settings::get_int(const std::string& key) const {
  const auto& v = get(key);
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t Settings::get_u64(const std::string& key) const {
  const auto& v = get(key);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double Settings::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool Settings::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

void Settings::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (!find_key(key))
      throw ConfigError(origin + ":" + std::to_string(n) + ": unknown key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

std::string Settings::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

model::SpanConfig model_config(const Settings& s) {
  auto c = model::SpanConfig::preset(s.get("preset"));
  auto size = [&](const char* key, std::size_t& field) {
    if (s.get(key).empty()) return;
    const auto v = s.get_int(key);
    if (v < 1) throw ConfigError(std::string("key '") + key + "' must be >= 1");
    field = static_cast<std::size_t>(v);
  };
  size("image_size", c.image_size);
  size("points", c.points);
  size("lstm_hidden", c.lstm_hidden);
  size("baseline_features", c.baseline_features);
  if (!s.get("encoder").empty()) c.encoder = model::parse_layer_plan(s.get("encoder"));
  if (!s.get("decoder").empty()) c.decoder = model::parse_layer_plan(s.get("decoder"));
  // A changed K must reach the last encoder layer.
  if (!s.get("points").empty() && s.get("encoder").empty()) c.encoder.back().channels = c.points;
  c.alpha = s.get_double("alpha");
  c.sigma = s.get_double("sigma");
  c.beta = s.get_double("beta");
  c.learning_rate = s.get_double("lr");
  const auto& gf = s.get("gf_target");
  if (gf == "same") c.gf_target = model::GfTarget::same;
  else if (gf == "next") c.gf_target = model::GfTarget::next;
  else throw ConfigError("gf_target must be 'same' or 'next', got '" + gf + "'");
  c.decoder_bypass = s.get_bool("decoder_bypass");
  c.validate();
  return c;
}

sim::SimConfig sim_config(const Settings& s) {
  sim::SimConfig c;
  const auto m = model::SpanConfig::preset(s.get("preset"));
  c.image_size = s.get("image_size").empty() ? m.image_size
                                              : static_cast<std::size_t>(s.get_int("image_size"));
  const auto T = s.get_int("episode_length");
  if (T < 2) throw ConfigError("episode_length must be >= 2");
  c.episode_length = static_cast<std::size_t>(T);
  c.noise_scale = s.get_double("noise_scale");
  c.rate_limit = s.get_double("rate_limit");
  c.grasp_radius = s.get_double("grasp_radius");
  c.lift_threshold = s.get_double("lift_threshold");
  c.brightness = s.get_double("brightness");
  c.position_spacing = s.get_double("position_spacing");
  c.validate();
  return c;
}

std::string format_model_sidecar(model::ModelKind kind, const model::SpanConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "model=" << model::to_string(kind) << "\n"
     << "image_size=" << c.image_size << "\n"
     << "channels=" << c.channels << "\n"
     << "joints=" << c.joints << "\n"
     << "points=" << c.points << "\n"
     << "encoder=" << model::format_layer_plan(c.encoder) << "\n"
     << "decoder=" << model::format_layer_plan(c.decoder) << "\n"
     << "lstm_hidden=" << c.lstm_hidden << "\n"
     << "baseline_features=" << c.baseline_features << "\n"
     << "alpha=" << c.alpha << "\n"
     << "sigma=" << c.sigma << "\n"
     << "beta=" << c.beta << "\n"
     << "lr=" << c.learning_rate << "\n"
     << "gf_target=" << (c.gf_target == model::GfTarget::same ? "same" : "next") << "\n"
     << "decoder_bypass=" << (c.decoder_bypass ? "true" : "false") << "\n";
  return os.str();
}

std::pair<model::ModelKind, model::SpanConfig> parse_model_sidecar(const std::string& text,
                                                                   const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ": malformed line '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError(origin + ": missing key '" + k + "'");
    return it->second;
  };
  auto num = [&](const char* k) {
    try {
      return std::stod(need(k));
    } catch (const std::invalid_argument&) {
      throw ConfigError(origin + ": key '" + k + "' is not a number");
    }
  };
  model::SpanConfig c;
  const auto kind = model::parse_model_kind(need("model"));
  c.image_size = static_cast<std::size_t>(num("image_size"));
  c.channels = static_cast<std::size_t>(num("channels"));
  c.joints = static_cast<std::size_t>(num("joints"));
  c.points = static_cast<std::size_t>(num("points"));
  c.encoder = model::parse_layer_plan(need("encoder"));
  c.decoder = model::parse_layer_plan(need("decoder"));
  c.lstm_hidden = static_cast<std::size_t>(num("lstm_hidden"));
  c.baseline_features = static_cast<std::size_t>(num("baseline_features"));
  c.alpha = num("alpha");
  c.sigma = num("sigma");
  c.beta = num("beta");
  c.learning_rate = num("lr");
  c.gf_target = need("gf_target") == "next" ? model::GfTarget::next : model::GfTarget::same;
  c.decoder_bypass = need("decoder_bypass") == "true";
  c.validate();
  return {kind, c};
}

}  // namespace span::config
