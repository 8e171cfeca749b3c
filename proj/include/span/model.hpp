// SPDX-License-Identifier: Apache-2.0
#pragma once

// The spatial attention point network and the CNN+LSTM baseline.
//
// SPAN, per step t:
//   image i_t --feature block--> features [K x h x w] -------------+
//          \--feature-area block--> maps --softargmax--> f_t       |
//   (f_t, a_t) --LSTM--> head --> a_hat_{t+1}, f_hat_{t+1}         |
//   heatmap(f_hat_{t+1}) * features --deconv stack--> i_hat_{t+1} <+
//
// The baseline replaces the attention path with flatten -> linear feature
// vector and decodes the image from the LSTM output.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "span/layers.hpp"

namespace span::model {

using ag::Parameter;
using ag::Tensor;
using ag::Var;

struct LayerSpec {
  std::size_t channels;
  std::size_t kernel;
  std::size_t stride;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// "16/5/2,32/5/2" <-> {{16,5,2},{32,5,2}}
std::vector<LayerSpec> parse_layer_plan(const std::string& text);
std::string format_layer_plan(const std::vector<LayerSpec>& plan);

/// Which encoder points the consistency term compares f_hat_{t+1} against:
/// the current frame's (same) or the next frame's (next).
enum class GfTarget { same, next };

struct SpanConfig {
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::size_t joints = 3;
  std::size_t points = 8;
  // Both encoder blocks use this plan; the last entry must output `points` channels.
  std::vector<LayerSpec> encoder{{16, 5, 2}, {32, 5, 2}, {8, 5, 1}};
  // Transposed convolutions from the gated K-channel map; the last entry must
  // output `channels`. The result is cropped/padded to image_size.
  std::vector<LayerSpec> decoder{{32, 5, 1}, {16, 5, 2}, {3, 5, 2}};
  std::size_t lstm_hidden = 64;
  std::size_t baseline_features = 15;
  double alpha = 0.01;
  double sigma = 0.1;
  double beta = 1.0;
  double learning_rate = 1e-3;
  GfTarget gf_target = GfTarget::same;
  bool decoder_bypass = false;

  /// 64x64 reference architecture.
  static SpanConfig full();
  /// 32x32 desk-scale architecture used by the experiment protocol.
  static SpanConfig desk();
  /// 16x16 architecture for gradient checks.
  static SpanConfig miniature();
  static SpanConfig preset(const std::string& name);

  /// Spatial extent of the encoder output; zero if the plan collapses.
  std::size_t feature_extent() const;
  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  friend bool operator==(const SpanConfig&, const SpanConfig&) = default;
};

enum class ModelKind { span, span_alpha0, cnnrnn };
ModelKind parse_model_kind(const std::string& name);
std::string to_string(ModelKind kind);

struct Encoded {
  Var features;  // SPAN: [K x h x w]; baseline: [F]
  Var points;    // SPAN: [K x 2]; baseline: invalid
};

struct StepVars {
  Var image;        // i_hat_{t+1} [C x H x W]
  Var joints;       // a_hat_{t+1} [J]
  Var points_enc;   // f_t [K x 2] (invalid for the baseline)
  Var points_dec;   // f_hat_{t+1} [K x 2] (invalid for the baseline)
  Var h;            // LSTM state after the step
  Var c;
};

struct LossTerms {
  Var total;
  Var image;
  Var joints;
  Var points;
};

/// g = g_i + g_a + alpha * g_f. With an invalid f_reference (baseline) the
/// point term is a constant zero.
LossTerms loss_total(const StepVars& step, Var image_next, Var joints_next, Var f_reference,
                     double alpha);

class Policy {
 public:
  virtual ~Policy() = default;

  virtual ModelKind kind() const = 0;
  virtual Encoded encode(Var image) = 0;
  virtual StepVars advance(const Encoded& enc, Var joints, Var h, Var c) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::unique_ptr<Policy> clone() const = 0;

  StepVars step(Var image, Var joints, Var h, Var c) { return advance(encode(image), joints, h, c); }

  const SpanConfig& config() const { return config_; }
  std::size_t hidden_size() const { return config_.lstm_hidden; }
  std::size_t parameter_count();

  /// Skips the image prediction path; closed-loop control only needs joints.
  bool inference_only = false;

 protected:
  explicit Policy(SpanConfig config) : config_(std::move(config)) {}
  SpanConfig config_;
};

class SpanModel final : public Policy {
 public:
  SpanModel(SpanConfig config, std::uint64_t seed, ModelKind kind = ModelKind::span);

  ModelKind kind() const override { return kind_; }
  Encoded encode(Var image) override;
  StepVars advance(const Encoded& enc, Var joints, Var h, Var c) override;
  std::vector<Parameter*> parameters() override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<SpanModel>(*this); }

  /// Image-feature block output.
  Var image_features(Var image);
  /// Feature-area block output before the soft-argmax.
  Var area_maps(Var image);

  struct Recurrent {
    Var joints;
    Var points;
    Var h;
    Var c;
  };
  Recurrent recurrent(Var points, Var joints, Var h, Var c);
  Var decode(Var features, Var points_hat);

  std::vector<nn::Conv2dLayer>& feature_block() { return feature_block_; }
  std::vector<nn::Conv2dLayer>& area_block() { return area_block_; }
  nn::LstmCell& lstm() { return lstm_; }
  nn::LinearLayer& head() { return head_; }

  /// Test hook: replaces the decoder heatmaps with zeros.
  bool zero_heatmaps = false;

 private:
  ModelKind kind_;
  std::vector<nn::Conv2dLayer> feature_block_;
  std::vector<nn::Conv2dLayer> area_block_;
  nn::LstmCell lstm_;
  nn::LinearLayer head_;
  std::vector<nn::Deconv2dLayer> decoder_;
};

class CnnRnnModel final : public Policy {
 public:
  CnnRnnModel(SpanConfig config, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::cnnrnn; }
  Encoded encode(Var image) override;
  StepVars advance(const Encoded& enc, Var joints, Var h, Var c) override;
  std::vector<Parameter*> parameters() override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<CnnRnnModel>(*this); }

 private:
  std::size_t map_extent_ = 0;
  std::vector<nn::Conv2dLayer> encoder_;
  nn::LinearLayer squeeze_;
  nn::LstmCell lstm_;
  nn::LinearLayer joint_head_;
  nn::LinearLayer image_head_;
  std::vector<nn::Deconv2dLayer> decoder_;
};

std::unique_ptr<Policy> make_policy(ModelKind kind, SpanConfig config, std::uint64_t seed);

/// Zero LSTM state as tape constants.
std::pair<Var, Var> zero_state(ag::Tape& tape, std::size_t hidden);

}  // namespace span::model
