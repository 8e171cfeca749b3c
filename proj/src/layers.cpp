// SPDX-License-Identifier: Apache-2.0
#include "span/layers.hpp"

#include <cmath>

#include "span/error.hpp"
#include "span/kernels.hpp"

namespace span::nn {

using ag::shape_str;
using ag::Tape;

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (stride == 0 || kernel == 0 || in < kernel) return 0;
  return (in - kernel) / stride + 1;
}

std::size_t deconv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (stride == 0 || kernel == 0 || in == 0) return 0;
  return (in - 1) * stride + kernel;
}

namespace {

struct Geometry {
  std::size_t channels, height, width;  // the large ("image") side
  std::size_t kernel, stride;
  std::size_t out_h, out_w;             // the small ("window grid") side
};

// cols[(c*k + ki)*k + kj][oh*out_w + ow] = img[c][oh*s + ki][ow*s + kj]
void im2col(const Geometry& g, const double* img, double* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const double* src = img + (c * g.height + oh * g.stride + ki) * g.width + kj;
          double* dst = row + oh * g.out_w;
          if (g.stride == 1) {
            for (std::size_t ow = 0; ow < g.out_w; ++ow) dst[ow] = src[ow];
          } else {
            for (std::size_t ow = 0; ow < g.out_w; ++ow) dst[ow] = src[ow * g.stride];
          }
        }
      }
}

// Adjoint of im2col: scatters (accumulates) window columns back to the image.
void col2im(const Geometry& g, const double* cols, double* img) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          double* dst = img + (c * g.height + oh * g.stride + ki) * g.width + kj;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) dst[ow * g.stride] += src[ow];
        }
      }
}

void add_channel_bias(const double* bias, std::size_t channels, std::size_t plane, double* out) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bias[c];
}

void accumulate_bias_grad(const double* g, std::size_t channels, std::size_t plane, double* db) {
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i];
    db[c] += s;
  }
}

void check_bias(const char* op, const Var& bias, std::size_t channels) {
  if (bias.shape() != Shape{channels})
    throw DimensionError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(channels) + " channels");
}

}  // namespace

Var conv2d_valid(Var x, Var weight, Var bias, std::size_t stride) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 3 || sw.size() != 4 || sw[1] != sx[0] || sw[2] != sw[3])
    throw DimensionError("conv2d: input " + shape_str(sx) + " incompatible with weights " +
                         shape_str(sw));
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t k = sw[2];
  if (sx[1] < k || sx[2] < k)
    throw DimensionError("conv2d: input " + shape_str(sx) + " smaller than kernel " +
                         std::to_string(k));
  check_bias("conv2d", bias, sw[0]);
  const Geometry g{sx[0], sx[1], sx[2], k, stride, conv_out_extent(sx[1], k, stride),
                   conv_out_extent(sx[2], k, stride)};
  const std::size_t c_out = sw[0];
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t rows = g.channels * k * k;

  // A pointwise layer reads its input directly as the column matrix.
  const bool pointwise = k == 1 && stride == 1;
  std::vector<double> cols;
  if (!pointwise) {
    cols.resize(rows * plane);
    im2col(g, x.value().data.data(), cols.data());
  }
  Tensor out({c_out, g.out_h, g.out_w});
  add_channel_bias(bias.value().data.data(), c_out, plane, out.data.data());
  kernels::active().gemm_nn(c_out, plane, rows, weight.value().data.data(),
                            pointwise ? x.value().data.data() : cols.data(), out.data.data());

  const std::size_t ix = x.id, iw = weight.id, ib = bias.id;
  Var inputs[] = {x, weight, bias};
  return x.tape->record(
      std::move(out), inputs,
      [g, ix, iw, ib, c_out, plane, rows, pointwise](Tape& tp, std::size_t self) {
        const auto& kt = kernels::active();
        const double* dy = tp.grad(self).data();
        if (tp.requires_grad(ib)) accumulate_bias_grad(dy, c_out, plane, tp.grad(ib).data());
        if (tp.requires_grad(iw)) {
          if (pointwise) {
            kt.gemm_nt(c_out, rows, plane, dy, tp.value(ix).data.data(), tp.grad(iw).data());
          } else {
            std::vector<double> cols(rows * plane);
            im2col(g, tp.value(ix).data.data(), cols.data());
            kt.gemm_nt(c_out, rows, plane, dy, cols.data(), tp.grad(iw).data());
          }
        }
        if (tp.requires_grad(ix)) {
          if (pointwise) {
            kt.gemm_tn(rows, plane, c_out, tp.value(iw).data.data(), dy, tp.grad(ix).data());
          } else {
            std::vector<double> dcols(rows * plane, 0.0);
            kt.gemm_tn(rows, plane, c_out, tp.value(iw).data.data(), dy, dcols.data());
            col2im(g, dcols.data(), tp.grad(ix).data());
          }
        }
      });
}

Var deconv2d(Var x, Var weight, Var bias, std::size_t stride) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 3 || sw.size() != 4 || sw[0] != sx[0] || sw[2] != sw[3])
    throw DimensionError("deconv2d: input " + shape_str(sx) + " incompatible with weights " +
                         shape_str(sw));
  if (stride == 0) throw DimensionError("deconv2d: stride must be positive");
  const std::size_t k = sw[2];
  const std::size_t c_in = sw[0], c_out = sw[1];
  check_bias("deconv2d", bias, c_out);
  // The output is the "image" side of the geometry; the input is the window grid.
  const Geometry g{c_out, deconv_out_extent(sx[1], k, stride), deconv_out_extent(sx[2], k, stride),
                   k, stride, sx[1], sx[2]};
  const std::size_t plane_in = g.out_h * g.out_w;
  const std::size_t plane_out = g.height * g.width;
  const std::size_t rows = c_out * k * k;

  const bool pointwise = k == 1 && stride == 1;
  Tensor out({c_out, g.height, g.width});
  if (pointwise) {
    kernels::active().gemm_tn(rows, plane_in, c_in, weight.value().data.data(),
                              x.value().data.data(), out.data.data());
  } else {
    std::vector<double> cols(rows * plane_in, 0.0);
    kernels::active().gemm_tn(rows, plane_in, c_in, weight.value().data.data(),
                              x.value().data.data(), cols.data());
    col2im(g, cols.data(), out.data.data());
  }
  add_channel_bias(bias.value().data.data(), c_out, plane_out, out.data.data());

  const std::size_t ix = x.id, iw = weight.id, ib = bias.id;
  Var inputs[] = {x, weight, bias};
  return x.tape->record(
      std::move(out), inputs,
      [g, ix, iw, ib, c_in, c_out, plane_in, plane_out, rows, pointwise](Tape& tp,
                                                                         std::size_t self) {
        const auto& kt = kernels::active();
        const double* dy = tp.grad(self).data();
        if (tp.requires_grad(ib)) accumulate_bias_grad(dy, c_out, plane_out, tp.grad(ib).data());
        if (!tp.requires_grad(ix) && !tp.requires_grad(iw)) return;
        std::vector<double> dcols;
        if (!pointwise) {
          dcols.resize(rows * plane_in);
          im2col(g, dy, dcols.data());
        }
        const double* dc = pointwise ? dy : dcols.data();
        if (tp.requires_grad(ix))
          kt.gemm_nn(c_in, plane_in, rows, tp.value(iw).data.data(), dc, tp.grad(ix).data());
        if (tp.requires_grad(iw))
          kt.gemm_nt(c_in, rows, plane_in, tp.value(ix).data.data(), dc, tp.grad(iw).data());
      });
}

Var crop_pad2d(Var x, std::size_t out_h, std::size_t out_w) {
  const Shape& sx = x.shape();
  if (sx.size() != 3 || out_h == 0 || out_w == 0)
    throw DimensionError("crop_pad2d: bad input " + shape_str(sx));
  const std::size_t C = sx[0], H = sx[1], W = sx[2];
  // Signed offset of the source origin inside the destination.
  const long off_r = (static_cast<long>(out_h) - static_cast<long>(H)) / 2;
  const long off_c = (static_cast<long>(out_w) - static_cast<long>(W)) / 2;
  Tensor out({C, out_h, out_w});
  const auto& v = x.value().data;
  auto for_each = [=](auto&& fn) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t r = 0; r < out_h; ++r) {
        const long sr = static_cast<long>(r) - off_r;
        if (sr < 0 || sr >= static_cast<long>(H)) continue;
        for (std::size_t q = 0; q < out_w; ++q) {
          const long sc = static_cast<long>(q) - off_c;
          if (sc < 0 || sc >= static_cast<long>(W)) continue;
          fn((c * out_h + r) * out_w + q, (c * H + static_cast<std::size_t>(sr)) * W +
                                              static_cast<std::size_t>(sc));
        }
      }
  };
  for_each([&](std::size_t dst, std::size_t src) { out.data[dst] = v[src]; });
  const std::size_t ix = x.id;
  Var inputs[] = {x};
  return x.tape->record(std::move(out), inputs, [ix, for_each](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& d = tp.grad(ix);
    for_each([&](std::size_t dst, std::size_t src) { d[src] += g[dst]; });
  });
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Xorshift64Star& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Conv2dLayer::Conv2dLayer(std::string name, std::size_t c_in, std::size_t c_out,
                         std::size_t kernel, std::size_t stride_, Xorshift64Star& rng)
    : weight(name + ".weight", uniform_init({c_out, c_in, kernel, kernel}, c_in * kernel * kernel, rng)),
      bias(name + ".bias", uniform_init({c_out}, c_in * kernel * kernel, rng)),
      stride(stride_) {}

Var Conv2dLayer::forward(Var x) {
  Tape& t = *x.tape;
  return conv2d_valid(x, t.parameter(weight), t.parameter(bias), stride);
}

Deconv2dLayer::Deconv2dLayer(std::string name, std::size_t c_in, std::size_t c_out,
                             std::size_t kernel, std::size_t stride_, Xorshift64Star& rng)
    : weight(name + ".weight", uniform_init({c_in, c_out, kernel, kernel}, c_in * kernel * kernel, rng)),
      bias(name + ".bias", uniform_init({c_out}, c_in * kernel * kernel, rng)),
      stride(stride_) {}

Var Deconv2dLayer::forward(Var x) {
  Tape& t = *x.tape;
  return deconv2d(x, t.parameter(weight), t.parameter(bias), stride);
}

LinearLayer::LinearLayer(std::string name, std::size_t in, std::size_t out, Xorshift64Star& rng)
    : weight(name + ".weight", uniform_init({out, in}, in, rng)),
      bias(name + ".bias", uniform_init({out}, in, rng)) {}

Var LinearLayer::forward(Var x) {
  Tape& t = *x.tape;
  return ag::add(ag::matvec(t.parameter(weight), x), t.parameter(bias));
}

LstmCell::LstmCell(std::string name, std::size_t input_size, std::size_t hidden_size,
                   Xorshift64Star& rng)
    : input_weight(name + ".W", uniform_init({4 * hidden_size, input_size}, input_size, rng)),
      hidden_weight(name + ".U", uniform_init({4 * hidden_size, hidden_size}, hidden_size, rng)),
      bias(name + ".b", uniform_init({4 * hidden_size}, hidden_size, rng)) {
  for (std::size_t i = hidden_size; i < 2 * hidden_size; ++i) bias.value.data[i] = 1.0;
}

LstmCell::State LstmCell::step(Var x, Var h, Var c) {
  const std::size_t H = hidden_size();
  if (x.size() != input_size() || h.size() != H || c.size() != H)
    throw DimensionError("lstm_step: got x " + shape_str(x.shape()) + ", h " +
                         shape_str(h.shape()) + ", c " + shape_str(c.shape()) +
                         " for a cell with D=" + std::to_string(input_size()) +
                         ", H=" + std::to_string(H));
  Tape& t = *x.tape;
  Var gates = ag::add(ag::add(ag::matvec(t.parameter(input_weight), x),
                              ag::matvec(t.parameter(hidden_weight), h)),
                      t.parameter(bias));
  Var i = ag::sigmoid(ag::slice(gates, 0, H));
  Var f = ag::sigmoid(ag::slice(gates, H, H));
  Var g = ag::tanh(ag::slice(gates, 2 * H, H));
  Var o = ag::sigmoid(ag::slice(gates, 3 * H, H));
  Var c_next = ag::add(ag::mul(f, ag::reshape(c, {H})), ag::mul(i, g));
  Var h_next = ag::mul(o, ag::tanh(c_next));
  return {h_next, c_next};
}

void adam_step(AdamState& state, std::span<Parameter* const> params) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.emplace_back(p->value.size(), 0.0);
      state.second_moment.emplace_back(p->value.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw ContractError("adam_step: parameter list changed between steps");
  for (const Parameter* p : params)
    if (p->grad.size() != p->value.size())
      throw ContractError("adam_step: missing gradient for " + p->name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.value.size())
      throw ContractError("adam_step: moment shape differs from " + p.name);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value.data[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace span::nn
