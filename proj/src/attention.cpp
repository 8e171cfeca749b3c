// SPDX-License-Identifier: Apache-2.0
#include "span/attention.hpp"

#include <algorithm>
#include <cmath>

#include "span/error.hpp"

namespace span::attention {

using ag::Shape;
using ag::shape_str;
using ag::Tape;

Point coord_convert(Point p, std::size_t height, std::size_t width, Direction direction) {
  const double sx = static_cast<double>(width - 1) / 2.0;
  const double sy = static_cast<double>(height - 1) / 2.0;
  if (direction == Direction::pixel_to_norm) return {p.x / sx - 1.0, p.y / sy - 1.0};
  return {(p.x + 1.0) * sx, (p.y + 1.0) * sy};
}

Var softargmax2d(Var feature_map, double beta) {
  const Shape& s = feature_map.shape();
  if (s.size() != 3 || s[1] < 2 || s[2] < 2)
    throw DimensionError("softargmax2d: expected [K x H x W] with H, W >= 2, got " + shape_str(s));
  if (!(beta > 0.0)) throw ParameterError("softargmax2d: temperature must be positive");
  const std::size_t K = s[0], H = s[1], W = s[2], plane = H * W;
  const auto& v = feature_map.value().data;
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError("softargmax2d: non-finite feature value");

  std::vector<double> prob(K * plane);
  Tensor out({K, 2});
  for (std::size_t k = 0; k < K; ++k) {
    const double* m = v.data() + k * plane;
    double* p = prob.data() + k * plane;
    const double mx = *std::max_element(m, m + plane);
    double z = 0.0;
    for (std::size_t i = 0; i < plane; ++i) z += (p[i] = std::exp(beta * (m[i] - mx)));
    double ex = 0.0, ey = 0.0;
    for (std::size_t r = 0; r < H; ++r) {
      const double gy = grid_y(r, H);
      for (std::size_t c = 0; c < W; ++c) {
        double& pi = p[r * W + c];
        pi /= z;
        ex += pi * grid_x(c, W);
        ey += pi * gy;
      }
    }
    out.data[2 * k] = ex;
    out.data[2 * k + 1] = ey;
  }
  const std::size_t in = feature_map.id;
  Var inputs[] = {feature_map};
  return feature_map.tape->record(
      std::move(out), inputs,
      [in, K, H, W, beta, prob = std::move(prob)](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        const auto& pt = tp.value(self).data;
        auto& d = tp.grad(in);
        const std::size_t plane = H * W;
        for (std::size_t k = 0; k < K; ++k) {
          const double gx = g[2 * k], gy = g[2 * k + 1];
          const double ex = pt[2 * k], ey = pt[2 * k + 1];
          const double* p = prob.data() + k * plane;
          double* dk = d.data() + k * plane;
          for (std::size_t r = 0; r < H; ++r) {
            const double dy = grid_y(r, H) - ey;
            for (std::size_t c = 0; c < W; ++c) {
              const std::size_t i = r * W + c;
              dk[i] += beta * p[i] * ((grid_x(c, W) - ex) * gx + dy * gy);
            }
          }
        }
      });
}

Var make_heatmap(Var points, std::size_t height, std::size_t width, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("make_heatmap: sigma must be positive");
  if (height < 2 || width < 2) throw DimensionError("make_heatmap: grid must be at least 2x2");
  if (points.size() % 2 != 0 || points.size() == 0)
    throw DimensionError("make_heatmap: points must hold (x, y) pairs, got " +
                         shape_str(points.shape()));
  const std::size_t K = points.size() / 2, H = height, W = width;
  const auto& pt = points.value().data;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Tensor out({K, H, W});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t r = 0; r < H; ++r) {
      const double dy = grid_y(r, H) - pt[2 * k + 1];
      for (std::size_t c = 0; c < W; ++c) {
        const double dx = grid_x(c, W) - pt[2 * k];
        out.data[(k * H + r) * W + c] = std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  const std::size_t ip = points.id;
  const double inv_var = 1.0 / (sigma * sigma);
  Var inputs[] = {points};
  return points.tape->record(std::move(out), inputs,
                             [ip, K, H, W, inv_var](Tape& tp, std::size_t self) {
                               const auto& g = tp.grad(self);
                               const auto& val = tp.value(self).data;
                               const auto& p = tp.value(ip).data;
                               auto& d = tp.grad(ip);
                               for (std::size_t k = 0; k < K; ++k) {
                                 double sx = 0.0, sy = 0.0;
                                 for (std::size_t r = 0; r < H; ++r) {
                                   const double dy = grid_y(r, H) - p[2 * k + 1];
                                   for (std::size_t c = 0; c < W; ++c) {
                                     const std::size_t i = (k * H + r) * W + c;
                                     const double w = g[i] * val[i] * inv_var;
                                     sx += w * (grid_x(c, W) - p[2 * k]);
                                     sy += w * dy;
                                   }
                                 }
                                 d[2 * k] += sx;
                                 d[2 * k + 1] += sy;
                               }
                             });
}

Var apply_attention_weighting(Var features, Var heatmaps) {
  if (features.shape() != heatmaps.shape())
    throw DimensionError("apply_attention_weighting: features " + shape_str(features.shape()) +
                         " vs heatmaps " + shape_str(heatmaps.shape()));
  return ag::mul(features, heatmaps);
}

AttentionPointSet to_point_set(const Tensor& points) {
  if (points.size() % 2 != 0) throw DimensionError("point tensor must hold (x, y) pairs");
  AttentionPointSet out(points.size() / 2);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = {points[2 * k], points[2 * k + 1]};
  return out;
}

Tensor to_tensor(const AttentionPointSet& points) {
  Tensor t({points.size(), 2});
  for (std::size_t k = 0; k < points.size(); ++k) {
    t[2 * k] = points[k].x;
    t[2 * k + 1] = points[k].y;
  }
  return t;
}

}  // namespace span::attention
