// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic 2D picking world: a two-link planar arm with a parallel
// gripper hangs over a table and must grasp and lift a yellow block placed
// at one of five table positions A..E.
//
// World units are frame widths: x in [0, 1] to the right, y in [0, 1]
// upward, origin at the bottom-left corner of the rendered frame. Joint
// vector a = (theta1, theta2, aperture), angles in radians relative to the
// base, aperture in [0, 1] (1 = open).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "span/tensor.hpp"

namespace span::sim {

using ag::Tensor;

enum class Position { A = 0, B, C, D, E };
inline constexpr std::array<Position, 5> kAllPositions{Position::A, Position::B, Position::C,
                                                       Position::D, Position::E};
char to_char(Position p);
Position parse_position(char c);
/// "A,C,E" -> {A, C, E}
std::vector<Position> parse_positions(const std::string& list);
bool is_taught(Position p);

/// i: nominal, ii: darker lighting, iii: background/table colours swapped,
/// iv: one obstacle on the table.
enum class Situation { nominal = 1, lighting, background, obstacle };
std::string to_string(Situation s);
Situation parse_situation(const std::string& s);

enum class ObstacleKind { none, other_colour_block, same_colour_disk };

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct SimConfig {
  std::size_t image_size = 64;
  std::size_t episode_length = 100;
  double link1 = 0.4;
  double link2 = 0.4;
  Vec2 base{0.5, 0.95};
  double table_top = 0.25;
  double block_width = 0.08;
  double block_height = 0.10;
  double position_spacing = 0.15;  // A..E centred on x = 0.5
  double start_x = 0.5;
  double start_y = 0.58;
  double noise_scale = 0.1;        // start-pose jitter, radians (uniform +-)
  double rate_limit = 0.15;        // max joint change per step, radians
  double grasp_radius = 0.03;
  double lift_threshold = 0.05;
  double brightness = 0.6;         // situation ii
  double step_period_ms = 100.0;

  double block_x(Position p) const;
  double block_rest_y() const { return table_top + 0.5 * block_height; }
  /// Throws ConfigError when geometry or timing is inconsistent.
  void validate() const;
};

struct Joints {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double aperture = 1.0;
};

struct SimState {
  Joints joints;
  Joints start;  // pose at reset; the teacher's plan starts here
  Position position = Position::C;
  Vec2 block;
  bool grasped = false;
  Vec2 grasp_offset;
  Situation situation = Situation::nominal;
  ObstacleKind obstacle = ObstacleKind::none;
  Vec2 obstacle_center;
  std::uint64_t seed = 0;
  std::size_t t = 0;
};

Vec2 forward_kinematics(const SimConfig& cfg, double theta1, double theta2);
inline Vec2 end_effector(const SimConfig& cfg, const SimState& s) {
  return forward_kinematics(cfg, s.joints.theta1, s.joints.theta2);
}

/// Closed-form solution on the theta2 >= 0 branch. Target in world units.
/// Throws ReachabilityError outside the annulus |L1-L2| <= r <= L1+L2.
std::pair<double, double> inverse_kinematics(const SimConfig& cfg, Vec2 target);

/// Fresh episode: block at the rest pose of `position`, arm at the nominal
/// start pose jittered by noise_scale from `seed`, obstacle drawn for iv.
SimState reset(const SimConfig& cfg, Position position, std::uint64_t seed,
               Situation situation = Situation::nominal, int obstacle_variant = -1);

/// Rate-limited joint motion, gripper tracking, grasp/release and carry.
/// Throws CommandError on a non-finite command.
SimState step(const SimConfig& cfg, const SimState& state, const Joints& command);

/// [3 x H x W] RGB in [0, 1], values rounded through float.
Tensor render(const SimConfig& cfg, const SimState& state);

/// Scripted demonstrator: above the block, descend, close, lift.
Joints teacher_policy(const SimConfig& cfg, const SimState& state);

bool success_check(const SimConfig& cfg, const SimState& state);

/// Joint observation, values rounded through float.
Tensor joints_tensor(const Joints& j);
Joints joints_from(std::span<const double> values);

/// Block centre in continuous pixel coordinates (x = column, y = row).
Vec2 world_to_pixel(const SimConfig& cfg, Vec2 world);

/// Binary PPM (P6, maxval 255).
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

}  // namespace span::sim
