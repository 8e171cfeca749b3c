// SPDX-License-Identifier: Apache-2.0
#include "span/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "span/binary_io.hpp"
#include "span/error.hpp"
#include "span/rng.hpp"

namespace span::sim {

char to_char(Position p) { return static_cast<char>('A' + static_cast<int>(p)); }

Position parse_position(char c) {
  if (c < 'A' || c > 'E') throw ConfigError(std::string("unknown block position '") + c + "'");
  return static_cast<Position>(c - 'A');
}

std::vector<Position> parse_positions(const std::string& list) {
  std::vector<Position> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.size() != 1) throw ConfigError("bad position '" + item + "' (expected A..E)");
    out.push_back(parse_position(item[0]));
  }
  if (out.empty()) throw ConfigError("empty position list");
  return out;
}

bool is_taught(Position p) { return p == Position::A || p == Position::C || p == Position::E; }

std::string to_string(Situation s) {
  switch (s) {
    case Situation::nominal: return "i";
    case Situation::lighting: return "ii";
    case Situation::background: return "iii";
    case Situation::obstacle: return "iv";
  }
  return "?";
}

Situation parse_situation(const std::string& s) {
  if (s == "i") return Situation::nominal;
  if (s == "ii") return Situation::lighting;
  if (s == "iii") return Situation::background;
  if (s == "iv") return Situation::obstacle;
  throw ConfigError("unknown situation '" + s + "' (i, ii, iii, iv)");
}

double SimConfig::block_x(Position p) const {
  return 0.5 + position_spacing * (static_cast<int>(p) - 2);
}

void SimConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid sim config: " + m); };
  if (image_size < 8) fail("image_size must be >= 8");
  if (episode_length < 2) fail("episode length T must be >= 2");
  if (!(link1 > 0 && link2 > 0)) fail("link lengths must be positive");
  if (!(position_spacing > 0)) fail("position spacing must be positive");
  if (!(rate_limit > 0) || !(grasp_radius > 0) || !(lift_threshold > 0))
    fail("rate limit, grasp radius and lift threshold must be positive");
  if (!(noise_scale >= 0)) fail("noise scale must be >= 0");
  if (!(brightness > 0 && brightness <= 1)) fail("brightness must be in (0, 1]");
  for (Position p : kAllPositions) {
    const double x = block_x(p);
    if (x - 0.5 * block_width < 0 || x + 0.5 * block_width > 1)
      fail(std::string("position ") + to_char(p) + " lies outside the frame");
    // Every teacher waypoint must be reachable.
    for (double dy : {0.0, 0.15, 0.18}) inverse_kinematics(*this, {x, block_rest_y() + dy});
  }
  inverse_kinematics(*this, {start_x, start_y});
}

Vec2 forward_kinematics(const SimConfig& cfg, double theta1, double theta2) {
  return {cfg.base.x + cfg.link1 * std::cos(theta1) + cfg.link2 * std::cos(theta1 + theta2),
          cfg.base.y + cfg.link1 * std::sin(theta1) + cfg.link2 * std::sin(theta1 + theta2)};
}

std::pair<double, double> inverse_kinematics(const SimConfig& cfg, Vec2 target) {
  const double x = target.x - cfg.base.x;
  const double y = target.y - cfg.base.y;
  const double r2 = x * x + y * y;
  const double r = std::sqrt(r2);
  const double l1 = cfg.link1, l2 = cfg.link2;
  const double tol = 1e-12;
  if (!std::isfinite(r) || r > l1 + l2 + tol || r < std::abs(l1 - l2) - tol) {
    std::ostringstream os;
    os << "target (" << target.x << ", " << target.y << ") is outside the arm's reach";
    throw ReachabilityError(os.str());
  }
  const double c2 = std::clamp((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double theta2 = std::acos(c2);
  const double theta1 =
      std::atan2(y, x) - std::atan2(l2 * std::sin(theta2), l1 + l2 * std::cos(theta2));
  return {theta1, theta2};
}

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_limit(double a) { return std::clamp(a, -kPi, kPi); }

}  // namespace

SimState reset(const SimConfig& cfg, Position position, std::uint64_t seed, Situation situation,
               int obstacle_variant) {
  SimState s;
  s.position = position;
  s.seed = seed;
  s.situation = situation;
  s.block = {cfg.block_x(position), cfg.block_rest_y()};
  Xorshift64Star rng(seed);
  auto [t1, t2] = inverse_kinematics(cfg, {cfg.start_x, cfg.start_y});
  s.joints.theta1 = wrap_limit(t1 + cfg.noise_scale * rng.uniform(-1.0, 1.0));
  s.joints.theta2 = wrap_limit(t2 + cfg.noise_scale * rng.uniform(-1.0, 1.0));
  s.joints.aperture = 1.0;
  s.start = s.joints;
  if (situation == Situation::obstacle) {
    const int variant = obstacle_variant >= 0 ? obstacle_variant : static_cast<int>(rng.below(2));
    s.obstacle = variant % 2 == 0 ? ObstacleKind::other_colour_block : ObstacleKind::same_colour_disk;
    // Free table spot at least two position spacings from the block.
    const double lo = 0.5 * cfg.block_width + 0.02, hi = 1.0 - lo;
    double x = s.block.x;
    for (int tries = 0; tries < 64 && std::abs(x - s.block.x) < 2.0 * cfg.position_spacing; ++tries)
      x = rng.uniform(lo, hi);
    if (std::abs(x - s.block.x) < 2.0 * cfg.position_spacing)
      x = s.block.x < 0.5 ? hi : lo;
    s.obstacle_center = {x, cfg.block_rest_y()};
  }
  return s;
}

SimState step(const SimConfig& cfg, const SimState& state, const Joints& command) {
  if (!std::isfinite(command.theta1) || !std::isfinite(command.theta2) ||
      !std::isfinite(command.aperture))
    throw CommandError("non-finite joint command");
  SimState s = state;
  auto move = [&](double cur, double target) {
    return wrap_limit(cur + std::clamp(target - cur, -cfg.rate_limit, cfg.rate_limit));
  };
  s.joints.theta1 = move(s.joints.theta1, command.theta1);
  s.joints.theta2 = move(s.joints.theta2, command.theta2);
  const double aperture = std::clamp(command.aperture, 0.0, 1.0);
  const Vec2 ee = end_effector(cfg, s);
  if (!s.grasped && s.joints.aperture >= 0.5 && aperture < 0.5) {
    if (std::hypot(ee.x - s.block.x, ee.y - s.block.y) <= cfg.grasp_radius) {
      s.grasped = true;
      s.grasp_offset = {s.block.x - ee.x, s.block.y - ee.y};
    }
  } else if (s.grasped && aperture >= 0.5) {
    s.grasped = false;
    s.block.y = cfg.block_rest_y();
  }
  s.joints.aperture = aperture;
  if (s.grasped) s.block = {ee.x + s.grasp_offset.x, ee.y + s.grasp_offset.y};
  ++s.t;
  return s;
}

bool success_check(const SimConfig& cfg, const SimState& state) {
  return state.grasped && state.block.y - cfg.block_rest_y() >= cfg.lift_threshold;
}

// ---------------------------------------------------------------------------
// Teacher

namespace {

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace

Joints teacher_policy(const SimConfig& cfg, const SimState& state) {
  const double bx = cfg.block_x(state.position);
  const double by = cfg.block_rest_y();
  auto pose = [&](double dy) { return inverse_kinematics(cfg, {bx, by + dy}); };
  const auto above = pose(0.18);
  const auto grasp = pose(0.0);
  const auto lift = pose(0.15);
  const std::pair<double, double> start{state.start.theta1, state.start.theta2};

  // Phase boundaries as fractions of the episode.
  const double T = static_cast<double>(cfg.episode_length);
  const double u = static_cast<double>(state.t + 1) / T;
  constexpr double kReach = 0.30, kDescend = 0.48, kHold = 0.60, kLift = 0.85;
  // The gripper closes over several steps while the arm holds the grasp pose.
  constexpr double kCloseStart = 0.49, kCloseEnd = 0.57;
  auto lerp = [](std::pair<double, double> a, std::pair<double, double> b, double w) {
    return std::pair<double, double>{a.first + (b.first - a.first) * w,
                                     a.second + (b.second - a.second) * w};
  };
  std::pair<double, double> q;
  if (u < kReach)
    q = lerp(start, above, smoothstep(u / kReach));
  else if (u < kDescend)
    q = lerp(above, grasp, smoothstep((u - kReach) / (kDescend - kReach)));
  else if (u < kHold)
    q = grasp;
  else
    q = lerp(grasp, lift, smoothstep((u - kHold) / (kLift - kHold)));
  const double close = smoothstep((u - kCloseStart) / (kCloseEnd - kCloseStart));
  return {q.first, q.second, 1.0 - close};
}

Tensor joints_tensor(const Joints& j) {
  // Same float rounding as the rendered frames, so stored episodes are exact.
  // The volatile keeps GCC 11's SLP vectorizer from folding the pair of
  // conversions on theta1/theta2 into a plain copy (seen at -O3).
  auto f = [](double v) {
    volatile float x = static_cast<float>(v);
    return static_cast<double>(x);
  };
  return Tensor({3}, std::vector<double>{f(j.theta1), f(j.theta2), f(j.aperture)});
}

Joints joints_from(std::span<const double> v) {
  if (v.size() != 3) throw CommandError("joint command must have 3 values");
  return {v[0], v[1], v[2]};
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackground{0.20, 0.25, 0.45};
constexpr Rgb kTable{0.40, 0.40, 0.45};
constexpr Rgb kBlock{0.95, 0.85, 0.10};
constexpr Rgb kLink{0.75, 0.75, 0.78};
constexpr Rgb kJaw{0.85, 0.20, 0.20};
constexpr Rgb kOtherBlock{0.10, 0.75, 0.85};

constexpr double kLinkRadius = 0.025;
constexpr double kJawHalfWidth = 0.012;
constexpr double kJawHalfHeight = 0.035;

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

double box_sdf(Vec2 p, Vec2 c, double hw, double hh) {
  const double qx = std::abs(p.x - c.x) - hw;
  const double qy = std::abs(p.y - c.y) - hh;
  const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
  return outside + std::min(std::max(qx, qy), 0.0);
}

class Canvas {
 public:
  Canvas(std::size_t n, Rgb fill) : n_(n), px_(n * n, fill) {}

  // coverage from a signed distance (world units, negative inside)
  template <class Sdf>
  void paint(Rgb colour, Sdf&& sdf) {
    const double pixel = 1.0 / static_cast<double>(n_);
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t c = 0; c < n_; ++c) {
        const Vec2 p{(static_cast<double>(c) + 0.5) * pixel,
                     1.0 - (static_cast<double>(r) + 0.5) * pixel};
        const double cov = std::clamp(0.5 - sdf(p) / pixel, 0.0, 1.0);
        if (cov <= 0.0) continue;
        Rgb& d = px_[r * n_ + c];
        d = {d.r + (colour.r - d.r) * cov, d.g + (colour.g - d.g) * cov,
             d.b + (colour.b - d.b) * cov};
      }
  }

  Tensor to_tensor(double gain) const {
    Tensor t({3, n_, n_});
    const std::size_t plane = n_ * n_;
    auto q = [gain](double v) {
      return static_cast<double>(static_cast<float>(std::clamp(v * gain, 0.0, 1.0)));
    };
    for (std::size_t i = 0; i < plane; ++i) {
      t.data[i] = q(px_[i].r);
      t.data[plane + i] = q(px_[i].g);
      t.data[2 * plane + i] = q(px_[i].b);
    }
    return t;
  }

 private:
  std::size_t n_;
  std::vector<Rgb> px_;
};

}  // namespace

Tensor render(const SimConfig& cfg, const SimState& s) {
  const bool swap = s.situation == Situation::background;
  const Rgb background = swap ? kTable : kBackground;
  const Rgb table = swap ? kBackground : kTable;
  Canvas canvas(cfg.image_size, background);
  canvas.paint(table, [&](Vec2 p) { return p.y - cfg.table_top; });

  const double hw = 0.5 * cfg.block_width, hh = 0.5 * cfg.block_height;
  if (s.obstacle == ObstacleKind::other_colour_block) {
    canvas.paint(kOtherBlock, [&](Vec2 p) { return box_sdf(p, s.obstacle_center, hw, hh); });
  } else if (s.obstacle == ObstacleKind::same_colour_disk) {
    // Flat disk lying on the table, seen edge-on: wide and thin.
    const Vec2 c{s.obstacle_center.x, cfg.table_top + 0.015};
    canvas.paint(kBlock, [&](Vec2 p) { return box_sdf(p, c, 1.5 * hw, 0.015); });
  }
  canvas.paint(kBlock, [&](Vec2 p) { return box_sdf(p, s.block, hw, hh); });

  const Vec2 elbow{cfg.base.x + cfg.link1 * std::cos(s.joints.theta1),
                   cfg.base.y + cfg.link1 * std::sin(s.joints.theta1)};
  const Vec2 ee = end_effector(cfg, s);
  canvas.paint(kLink, [&](Vec2 p) { return segment_distance(p, cfg.base, elbow) - kLinkRadius; });
  canvas.paint(kLink, [&](Vec2 p) { return segment_distance(p, elbow, ee) - kLinkRadius; });
  const double gap = 0.02 + 0.03 * std::clamp(s.joints.aperture, 0.0, 1.0);
  for (double side : {-1.0, 1.0}) {
    const Vec2 jaw{ee.x + side * gap, ee.y};
    canvas.paint(kJaw, [&](Vec2 p) { return box_sdf(p, jaw, kJawHalfWidth, kJawHalfHeight); });
  }
  return canvas.to_tensor(s.situation == Situation::lighting ? cfg.brightness : 1.0);
}

Vec2 world_to_pixel(const SimConfig& cfg, Vec2 w) {
  const double n = static_cast<double>(cfg.image_size);
  return {w.x * n - 0.5, (1.0 - w.y) * n - 0.5};
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.shape[0] != 3)
    throw DimensionError("PPM export needs a [3 x H x W] image, got " + ag::shape_str(image.shape));
  const std::size_t H = image.shape[1], W = image.shape[2], plane = H * W;
  const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      out.push_back(static_cast<std::uint8_t>(
          std::lround(std::clamp(image.data[c * plane + i], 0.0, 1.0) * 255.0)));
  return out;
}

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") throw FormatError("not a binary PPM (P6)");
  std::size_t W = 0, H = 0, maxval = 0;
  try {
    W = std::stoul(token());
    H = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError("malformed PPM header");
  }
  ++pos;  // single whitespace before raster
  if (maxval != 255 || W == 0 || H == 0) throw FormatError("unsupported PPM header");
  if (bytes.size() - pos < 3 * W * H) throw TruncatedFileError("PPM raster truncated");
  Tensor t({3, H, W});
  const std::size_t plane = H * W;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) t.data[c * plane + i] = bytes[pos + 3 * i + c] / 255.0;
  return t;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  io::write_file(path, encode_ppm(image));
}

}  // namespace span::sim
