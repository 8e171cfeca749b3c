// SPDX-License-Identifier: Apache-2.0
#pragma once

// Spatial attention points: soft-argmax extraction from feature maps and
// Gaussian heatmap rendering back onto a grid.
//
// Coordinates are normalised to [-1, 1] with x to the right and y downward.
// Pixel (row r, col c) of an H x W grid sits at
//   x = 2c / (W - 1) - 1,   y = 2r / (H - 1) - 1.
// On the tape a point set of K points is a [K x 2] tensor of (x, y) rows.

#include <cstddef>
#include <vector>

#include "span/tensor.hpp"

namespace span::attention {

using ag::Tensor;
using ag::Var;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using AttentionPointSet = std::vector<Point>;

enum class Direction { pixel_to_norm, norm_to_pixel };

/// Pixel points carry (x = column, y = row) in continuous pixel units.
Point coord_convert(Point p, std::size_t height, std::size_t width, Direction direction);

inline double grid_x(std::size_t col, std::size_t width) {
  return 2.0 * static_cast<double>(col) / static_cast<double>(width - 1) - 1.0;
}
inline double grid_y(std::size_t row, std::size_t height) {
  return 2.0 * static_cast<double>(row) / static_cast<double>(height - 1) - 1.0;
}

/// Per channel: p = softmax(beta * map), point = sum p * grid coordinate.
/// feature_map [K x H x W] -> [K x 2].
Var softargmax2d(Var feature_map, double beta);

/// G_k(r, c) = exp(-((x(c) - x_k)^2 + (y(r) - y_k)^2) / (2 sigma^2)).
/// points [K x 2] (or flat 2K) -> [K x H x W]. Differentiable in the points.
Var make_heatmap(Var points, std::size_t height, std::size_t width, double sigma);

/// Channel k of the features is gated by heatmap k.
Var apply_attention_weighting(Var features, Var heatmaps);

AttentionPointSet to_point_set(const Tensor& points);
Tensor to_tensor(const AttentionPointSet& points);

}  // namespace span::attention
