// SPDX-License-Identifier: Apache-2.0
#include "span/model.hpp"

#include <sstream>

#include "span/attention.hpp"
#include "span/error.hpp"

namespace span::model {

using ag::Tape;

std::vector<LayerSpec> parse_layer_plan(const std::string& text) {
  std::vector<LayerSpec> plan;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    LayerSpec s{};
    char a = 0, b = 0;
    std::istringstream is(item);
    if (!(is >> s.channels >> a >> s.kernel >> b >> s.stride) || a != '/' || b != '/' ||
        s.channels == 0 || s.kernel == 0 || s.stride == 0)
      throw ConfigError("bad layer spec '" + item + "' (expected channels/kernel/stride)");
    std::string rest;
    if (is >> rest) throw ConfigError("bad layer spec '" + item + "'");
    plan.push_back(s);
  }
  if (plan.empty()) throw ConfigError("empty layer plan");
  return plan;
}

std::string format_layer_plan(const std::vector<LayerSpec>& plan) {
  std::ostringstream os;
  for (std::size_t i = 0; i < plan.size(); ++i)
    os << (i ? "," : "") << plan[i].channels << '/' << plan[i].kernel << '/' << plan[i].stride;
  return os.str();
}

SpanConfig SpanConfig::full() { return SpanConfig{}; }

SpanConfig SpanConfig::desk() {
  SpanConfig c;
  c.image_size = 32;
  // 32 -> 15 -> 15 -> 15: pointwise layers after the strided one keep the
  // feature grid spanning the frame. Decoder 15 -> 15 -> 32.
  c.encoder = {{16, 4, 2}, {16, 1, 1}, {8, 1, 1}};
  c.decoder = {{16, 1, 1}, {3, 4, 2}};
  return c;
}

SpanConfig SpanConfig::miniature() {
  SpanConfig c;
  c.image_size = 16;
  c.points = 2;
  c.encoder = {{4, 3, 2}, {2, 3, 1}};
  c.decoder = {{4, 3, 1}, {3, 4, 2}};
  c.lstm_hidden = 6;
  c.baseline_features = 4;
  return c;
}

SpanConfig SpanConfig::preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  if (name == "miniature") return miniature();
  throw ConfigError("unknown preset '" + name + "' (full, desk, miniature)");
}

std::size_t SpanConfig::feature_extent() const {
  std::size_t e = image_size;
  for (const auto& l : encoder) e = nn::conv_out_extent(e, l.kernel, l.stride);
  return e;
}

void SpanConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid model config: " + m); };
  if (points < 1) fail("point count K must be >= 1");
  if (channels < 1 || joints < 1) fail("channels and joints must be >= 1");
  if (encoder.empty() || decoder.empty()) fail("encoder and decoder plans must be non-empty");
  if (encoder.back().channels != points)
    fail("last encoder layer outputs " + std::to_string(encoder.back().channels) +
         " channels but K = " + std::to_string(points));
  if (feature_extent() < 2)
    fail("encoder reduces a " + std::to_string(image_size) + " px image below 2x2");
  if (decoder.back().channels != channels)
    fail("last decoder layer must output " + std::to_string(channels) + " channels");
  if (lstm_hidden < 1 || baseline_features < 1) fail("LSTM width and baseline features must be >= 1");
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be >= 0");
  if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
  if (!(beta > 0.0)) throw ParameterError("beta must be > 0");
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "span") return ModelKind::span;
  if (name == "span_alpha0") return ModelKind::span_alpha0;
  if (name == "cnnrnn") return ModelKind::cnnrnn;
  throw ConfigError("unknown model '" + name + "' (span, span_alpha0, cnnrnn)");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::span: return "span";
    case ModelKind::span_alpha0: return "span_alpha0";
    case ModelKind::cnnrnn: return "cnnrnn";
  }
  return "?";
}

LossTerms loss_total(const StepVars& step, Var image_next, Var joints_next, Var f_reference,
                     double alpha) {
  if (!(alpha >= 0.0)) throw ParameterError("loss weight alpha must be >= 0");
  Tape& t = *step.joints.tape;
  LossTerms l;
  l.image = step.image.valid() ? ag::mse(step.image, image_next) : t.constant(Tensor::scalar(0.0));
  l.joints = ag::mse(step.joints, joints_next);
  l.points = (f_reference.valid() && step.points_dec.valid()) ? ag::mse(step.points_dec, f_reference)
                                                              : t.constant(Tensor::scalar(0.0));
  l.total = ag::add(ag::add(l.image, l.joints), ag::scale(l.points, alpha));
  return l;
}

std::size_t Policy::parameter_count() {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::pair<Var, Var> zero_state(Tape& tape, std::size_t hidden) {
  return {tape.constant(Tensor({hidden})), tape.constant(Tensor({hidden}))};
}

namespace {

std::vector<nn::Conv2dLayer> build_convs(const std::string& prefix, std::size_t c_in,
                                         const std::vector<LayerSpec>& plan, Xorshift64Star& rng) {
  std::vector<nn::Conv2dLayer> out;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    out.emplace_back(prefix + "." + std::to_string(i), c_in, plan[i].channels, plan[i].kernel,
                     plan[i].stride, rng);
    c_in = plan[i].channels;
  }
  return out;
}

std::vector<nn::Deconv2dLayer> build_deconvs(const std::string& prefix, std::size_t c_in,
                                             const std::vector<LayerSpec>& plan,
                                             Xorshift64Star& rng) {
  std::vector<nn::Deconv2dLayer> out;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    out.emplace_back(prefix + "." + std::to_string(i), c_in, plan[i].channels, plan[i].kernel,
                     plan[i].stride, rng);
    c_in = plan[i].channels;
  }
  return out;
}

// ReLU between layers, linear after the last one.
Var run_convs(std::vector<nn::Conv2dLayer>& layers, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x);
    if (i + 1 < layers.size()) x = ag::relu(x);
  }
  return x;
}

Var run_decoder(std::vector<nn::Deconv2dLayer>& layers, Var x, std::size_t size) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x);
    if (i + 1 < layers.size()) x = ag::relu(x);
  }
  const auto& s = x.shape();
  if (s[1] != size || s[2] != size) x = nn::crop_pad2d(x, size, size);
  return ag::sigmoid(x);
}

void check_input(const SpanConfig& cfg, Var image) {
  const ag::Shape want{cfg.channels, cfg.image_size, cfg.image_size};
  if (image.shape() != want)
    throw ContractError("model input image has shape " + ag::shape_str(image.shape()) +
                        ", expected " + ag::shape_str(want));
}

}  // namespace

// ---------------------------------------------------------------------------

SpanModel::SpanModel(SpanConfig config, std::uint64_t seed, ModelKind kind)
    : Policy(std::move(config)), kind_(kind) {
  if (kind == ModelKind::cnnrnn) throw ConfigError("SpanModel cannot be built as cnnrnn");
  config_.validate();
  Xorshift64Star rng(seed);
  const auto& c = config_;
  feature_block_ = build_convs("feature_block", c.channels, c.encoder, rng);
  area_block_ = build_convs("area_block", c.channels, c.encoder, rng);
  lstm_ = nn::LstmCell("lstm", 2 * c.points + c.joints, c.lstm_hidden, rng);
  head_ = nn::LinearLayer("head", c.lstm_hidden, c.joints + 2 * c.points, rng);
  decoder_ = build_deconvs("decoder", c.points, c.decoder, rng);
}

Var SpanModel::image_features(Var image) {
  check_input(config_, image);
  return run_convs(feature_block_, image);
}

Var SpanModel::area_maps(Var image) {
  check_input(config_, image);
  return run_convs(area_block_, image);
}

Encoded SpanModel::encode(Var image) {
  Encoded e;
  if (!config_.decoder_bypass && !inference_only) e.features = image_features(image);
  e.points = attention::softargmax2d(area_maps(image), config_.beta);
  return e;
}

SpanModel::Recurrent SpanModel::recurrent(Var points, Var joints, Var h, Var c) {
  const auto& cfg = config_;
  if (points.size() != 2 * cfg.points || joints.size() != cfg.joints)
    throw ContractError("recurrent_forward: got " + std::to_string(points.size()) +
                        " point coordinates and " + std::to_string(joints.size()) + " joints");
  if (h.size() != cfg.lstm_hidden || c.size() != cfg.lstm_hidden)
    throw ContractError("recurrent_forward: state width " + std::to_string(h.size()) +
                        " does not match LSTM width " + std::to_string(cfg.lstm_hidden));
  Var parts[] = {points, joints};
  auto state = lstm_.step(ag::concat(parts), h, c);
  Var out = head_.forward(state.h);
  Recurrent r;
  r.joints = ag::slice(out, 0, cfg.joints);
  r.points = ag::reshape(ag::tanh(ag::slice(out, cfg.joints, 2 * cfg.points)), {cfg.points, 2});
  r.h = state.h;
  r.c = state.c;
  return r;
}

Var SpanModel::decode(Var features, Var points_hat) {
  const auto& fs = features.shape();
  if (fs.size() != 3 || fs[0] != config_.points)
    throw ContractError("decoder_forward: features " + ag::shape_str(fs) + " do not carry K = " +
                        std::to_string(config_.points) + " channels");
  Var heat = attention::make_heatmap(points_hat, fs[1], fs[2], config_.sigma);
  if (zero_heatmaps) heat = ag::scale(heat, 0.0);
  Var gated = attention::apply_attention_weighting(features, heat);
  return run_decoder(decoder_, gated, config_.image_size);
}

StepVars SpanModel::advance(const Encoded& enc, Var joints, Var h, Var c) {
  auto r = recurrent(enc.points, joints, h, c);
  StepVars s;
  s.points_enc = enc.points;
  s.points_dec = r.points;
  s.joints = r.joints;
  s.h = r.h;
  s.c = r.c;
  if (!config_.decoder_bypass && !inference_only) s.image = decode(enc.features, r.points);
  return s;
}

std::vector<Parameter*> SpanModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : feature_block_) l.collect(out);
  for (auto& l : area_block_) l.collect(out);
  lstm_.collect(out);
  head_.collect(out);
  for (auto& l : decoder_) l.collect(out);
  return out;
}

// ---------------------------------------------------------------------------

CnnRnnModel::CnnRnnModel(SpanConfig config, std::uint64_t seed) : Policy(std::move(config)) {
  config_.validate();
  Xorshift64Star rng(seed);
  const auto& c = config_;
  map_extent_ = c.feature_extent();
  encoder_ = build_convs("encoder", c.channels, c.encoder, rng);
  const std::size_t flat = c.points * map_extent_ * map_extent_;
  squeeze_ = nn::LinearLayer("squeeze", flat, c.baseline_features, rng);
  lstm_ = nn::LstmCell("lstm", c.baseline_features + c.joints, c.lstm_hidden, rng);
  joint_head_ = nn::LinearLayer("joint_head", c.lstm_hidden, c.joints, rng);
  image_head_ = nn::LinearLayer("image_head", c.lstm_hidden, flat, rng);
  decoder_ = build_deconvs("decoder", c.points, c.decoder, rng);
}

Encoded CnnRnnModel::encode(Var image) {
  check_input(config_, image);
  Var maps = run_convs(encoder_, image);
  Encoded e;
  e.features = ag::tanh(squeeze_.forward(ag::reshape(maps, {maps.size()})));
  return e;
}

StepVars CnnRnnModel::advance(const Encoded& enc, Var joints, Var h, Var c) {
  const auto& cfg = config_;
  if (joints.size() != cfg.joints || h.size() != cfg.lstm_hidden || c.size() != cfg.lstm_hidden)
    throw ContractError("cnnrnn_step: joint or state width mismatch");
  Var parts[] = {enc.features, joints};
  auto state = lstm_.step(ag::concat(parts), h, c);
  StepVars s;
  s.joints = joint_head_.forward(state.h);
  s.h = state.h;
  s.c = state.c;
  if (!cfg.decoder_bypass && !inference_only) {
    Var seed_map = ag::reshape(ag::relu(image_head_.forward(state.h)),
                               {cfg.points, map_extent_, map_extent_});
    s.image = run_decoder(decoder_, seed_map, cfg.image_size);
  }
  return s;
}

std::vector<Parameter*> CnnRnnModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : encoder_) l.collect(out);
  squeeze_.collect(out);
  lstm_.collect(out);
  joint_head_.collect(out);
  image_head_.collect(out);
  for (auto& l : decoder_) l.collect(out);
  return out;
}

std::unique_ptr<Policy> make_policy(ModelKind kind, SpanConfig config, std::uint64_t seed) {
  if (kind == ModelKind::cnnrnn) return std::make_unique<CnnRnnModel>(std::move(config), seed);
  return std::make_unique<SpanModel>(std::move(config), seed, kind);
}

}  // namespace span::model
