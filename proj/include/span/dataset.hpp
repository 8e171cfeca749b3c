// SPDX-License-Identifier: Apache-2.0
#pragma once

// Demonstration episodes and the on-disk dataset layout:
//
//   <dir>/manifest.json      episode list, seeds, labels, config echo
//   <dir>/episode_NNN.bin    "SPANDS1\0" | u32 version | u32 T, H, W, C, J
//                            | T*C*H*W f32 image values | T*J f32 joints
//
// Everything little-endian. Images and joints are stored as f32; the
// simulator rounds its output through float so a write/read cycle is exact.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "span/sim.hpp"

namespace span::data {

using ag::Tensor;

inline constexpr std::uint32_t kDatasetVersion = 1;

struct EpisodeMeta {
  std::uint64_t seed = 0;
  sim::Position position = sim::Position::C;
  sim::Situation situation = sim::Situation::nominal;
  std::string source = "teacher";  // teacher | policy
};

struct Episode {
  std::vector<Tensor> images;  // T frames [C x H x W]
  std::vector<Tensor> joints;  // T vectors [J]
  EpisodeMeta meta;

  std::size_t length() const { return images.size(); }
};

/// Renders frame t from the state whose joints are recorded at t, then asks
/// the teacher for the next command. Returns the final state via `last`.
Episode teacher_episode(const sim::SimConfig& cfg, sim::Position position, std::uint64_t seed,
                        sim::Situation situation = sim::Situation::nominal,
                        sim::SimState* last = nullptr);

/// Seed of demonstration `index` under `master_seed`.
std::uint64_t episode_seed(std::uint64_t master_seed, std::size_t index);

/// Taught positions only; ConfigError names any untaught position.
std::vector<Episode> generate_dataset(const sim::SimConfig& cfg,
                                      const std::vector<sim::Position>& positions,
                                      std::size_t demos_per_position, std::uint64_t master_seed);

std::vector<std::uint8_t> encode_episode(const Episode& episode);
Episode decode_episode(std::span<const std::uint8_t> bytes, const std::string& origin);

struct DatasetInfo {
  std::size_t episodes = 0;
  std::size_t frames = 0;
  std::size_t bytes = 0;
};

/// `settings` (optional) is echoed into the manifest next to the simulator config.
DatasetInfo write_dataset(const std::filesystem::path& dir, const std::vector<Episode>& episodes,
                          const sim::SimConfig& cfg, std::uint64_t master_seed,
                          const std::map<std::string, std::string>& settings = {});

/// FormatError (bad magic/version, naming the file), TruncatedFileError,
/// ManifestMismatchError (manifest and episode files disagree).
std::vector<Episode> load_dataset(const std::filesystem::path& dir);

}  // namespace span::data
