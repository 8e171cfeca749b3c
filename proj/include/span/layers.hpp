// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "span/rng.hpp"
#include "span/tensor.hpp"

namespace span::nn {

using ag::Parameter;
using ag::Shape;
using ag::Tensor;
using ag::Var;

/// Output extent of a valid (unpadded) convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride);
/// Output extent of a transposed convolution along one axis.
std::size_t deconv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride);

/// Valid cross-correlation. x: [C_in x H x W], weight: [C_out x C_in x k x k],
/// bias: [C_out]. Output [C_out x H' x W'] with H' = floor((H - k) / s) + 1.
Var conv2d_valid(Var x, Var weight, Var bias, std::size_t stride);

/// Transposed convolution, the adjoint of conv2d_valid with respect to its
/// input. x: [C_in x H x W], weight: [C_in x C_out x k x k], bias: [C_out].
/// Output [C_out x (H-1)s+k x (W-1)s+k].
Var deconv2d(Var x, Var weight, Var bias, std::size_t stride);

/// Crops or zero-pads a [C x H x W] map to [C x out_h x out_w], keeping it
/// centred (odd remainders go to the bottom/right).
Var crop_pad2d(Var x, std::size_t out_h, std::size_t out_w);

struct Conv2dLayer {
  Parameter weight;  // [C_out x C_in x k x k]
  Parameter bias;    // [C_out]
  std::size_t stride = 1;

  Conv2dLayer() = default;
  Conv2dLayer(std::string name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
              std::size_t stride, Xorshift64Star& rng);

  std::size_t in_channels() const { return weight.value.shape[1]; }
  std::size_t out_channels() const { return weight.value.shape[0]; }
  std::size_t kernel() const { return weight.value.shape[2]; }

  Var forward(Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight), out.push_back(&bias); }
};

struct Deconv2dLayer {
  Parameter weight;  // [C_in x C_out x k x k]
  Parameter bias;    // [C_out]
  std::size_t stride = 1;

  Deconv2dLayer() = default;
  Deconv2dLayer(std::string name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
                std::size_t stride, Xorshift64Star& rng);

  std::size_t in_channels() const { return weight.value.shape[0]; }
  std::size_t out_channels() const { return weight.value.shape[1]; }
  std::size_t kernel() const { return weight.value.shape[2]; }

  Var forward(Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight), out.push_back(&bias); }
};

struct LinearLayer {
  Parameter weight;  // [out x in]
  Parameter bias;    // [out]

  LinearLayer() = default;
  LinearLayer(std::string name, std::size_t in, std::size_t out, Xorshift64Star& rng);

  Var forward(Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight), out.push_back(&bias); }
};

/// Gate blocks are stacked in the order input, forget, cell candidate, output.
struct LstmCell {
  Parameter input_weight;   // W [4H x D]
  Parameter hidden_weight;  // U [4H x H]
  Parameter bias;           // b [4H]

  LstmCell() = default;
  LstmCell(std::string name, std::size_t input_size, std::size_t hidden_size, Xorshift64Star& rng);

  std::size_t input_size() const { return input_weight.value.shape[1]; }
  std::size_t hidden_size() const { return hidden_weight.value.shape[1]; }

  struct State {
    Var h;
    Var c;
  };
  State step(Var x, Var h, Var c);
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&input_weight), out.push_back(&hidden_weight), out.push_back(&bias);
  }
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update. Parameters are updated in place; their
/// gradients are left untouched.
void adam_step(AdamState& state, std::span<Parameter* const> params);

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) initialisation.
Tensor uniform_init(Shape shape, std::size_t fan_in, Xorshift64Star& rng);

}  // namespace span::nn
