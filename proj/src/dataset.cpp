// SPDX-License-Identifier: Apache-2.0
#include "span/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <json.hpp>

#include "span/binary_io.hpp"
#include "span/error.hpp"
#include "span/rng.hpp"

namespace span::data {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'N', 'D', 'S', '1', '\0'};

std::string episode_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%03zu.bin", i);
  return buf;
}

}  // namespace

Episode teacher_episode(const sim::SimConfig& cfg, sim::Position position, std::uint64_t seed,
                        sim::Situation situation, sim::SimState* last) {
  Episode ep;
  ep.meta = {seed, position, situation, "teacher"};
  sim::SimState s = sim::reset(cfg, position, seed, situation);
  for (std::size_t t = 0; t < cfg.episode_length; ++t) {
    ep.images.push_back(sim::render(cfg, s));
    ep.joints.push_back(sim::joints_tensor(s.joints));
    s = sim::step(cfg, s, sim::teacher_policy(cfg, s));
  }
  if (last) *last = s;
  return ep;
}

std::uint64_t episode_seed(std::uint64_t master_seed, std::size_t index) {
  return mix_seed(master_seed, index);
}

std::vector<Episode> generate_dataset(const sim::SimConfig& cfg,
                                      const std::vector<sim::Position>& positions,
                                      std::size_t demos_per_position, std::uint64_t master_seed) {
  cfg.validate();
  for (sim::Position p : positions)
    if (!sim::is_taught(p))
      throw ConfigError(std::string("position ") + sim::to_char(p) +
                        " is untaught and cannot appear in training data");
  std::vector<Episode> out;
  std::size_t index = 0;
  for (sim::Position p : positions)
    for (std::size_t d = 0; d < demos_per_position; ++d)
      out.push_back(teacher_episode(cfg, p, episode_seed(master_seed, index++)));
  return out;
}

std::vector<std::uint8_t> encode_episode(const Episode& ep) {
  if (ep.images.empty() || ep.images.size() != ep.joints.size())
    throw ContractError("episode needs equal, non-zero image and joint counts");
  const auto& s = ep.images.front().shape;
  if (s.size() != 3) throw DimensionError("episode frames must be [C x H x W]");
  const std::uint32_t T = static_cast<std::uint32_t>(ep.images.size());
  const std::uint32_t C = static_cast<std::uint32_t>(s[0]), H = static_cast<std::uint32_t>(s[1]),
                      W = static_cast<std::uint32_t>(s[2]);
  const std::uint32_t J = static_cast<std::uint32_t>(ep.joints.front().size());
  io::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  for (std::uint32_t v : {kDatasetVersion, T, H, W, C, J}) w.put(v);
  for (const auto& img : ep.images) {
    if (img.shape != s) throw DimensionError("episode frames differ in shape");
    for (double v : img.data) w.put(static_cast<float>(v));
  }
  for (const auto& j : ep.joints) {
    if (j.size() != J) throw DimensionError("episode joint vectors differ in length");
    for (double v : j.data) w.put(static_cast<float>(v));
  }
  return std::move(w.buffer());
}

Episode decode_episode(std::span<const std::uint8_t> bytes, const std::string& origin) {
  io::Reader r(bytes, origin);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw FormatError(origin + ": bad magic (not a SPANDS1 episode)");
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion)
    throw FormatError(origin + ": unsupported episode version " + std::to_string(version));
  const std::size_t T = r.get<std::uint32_t>(), H = r.get<std::uint32_t>(),
                    W = r.get<std::uint32_t>(), C = r.get<std::uint32_t>(),
                    J = r.get<std::uint32_t>();
  if (T == 0 || H == 0 || W == 0 || C == 0 || J == 0)
    throw FormatError(origin + ": zero extent in episode header");
  Episode ep;
  ep.images.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor img({C, H, W});
    for (double& v : img.data) v = r.get<float>();
    ep.images.push_back(std::move(img));
  }
  for (std::size_t t = 0; t < T; ++t) {
    Tensor j({J});
    for (double& v : j.data) v = r.get<float>();
    ep.joints.push_back(std::move(j));
  }
  if (!r.at_end()) throw FormatError(origin + ": trailing bytes after episode payload");
  return ep;
}

namespace {

json config_echo(const sim::SimConfig& c) {
  return {{"image_size", c.image_size},
          {"episode_length", c.episode_length},
          {"link1", c.link1},
          {"link2", c.link2},
          {"table_top", c.table_top},
          {"position_spacing", c.position_spacing},
          {"noise_scale", c.noise_scale},
          {"rate_limit", c.rate_limit},
          {"grasp_radius", c.grasp_radius},
          {"lift_threshold", c.lift_threshold},
          {"brightness", c.brightness}};
}

}  // namespace

DatasetInfo write_dataset(const std::filesystem::path& dir, const std::vector<Episode>& episodes,
                          const sim::SimConfig& cfg, std::uint64_t master_seed,
                          const std::map<std::string, std::string>& settings) {
  std::filesystem::create_directories(dir);
  // Stale episode files would break the manifest/file count contract.
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("episode_") && name.ends_with(".bin")) std::filesystem::remove(entry);
  }
  DatasetInfo info;
  json list = json::array();
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    const auto bytes = encode_episode(ep);
    io::write_file(dir / episode_file(i), bytes);
    info.bytes += bytes.size();
    info.frames += ep.length();
    list.push_back({{"file", episode_file(i)},
                    {"seed", ep.meta.seed},
                    {"label", std::string(1, sim::to_char(ep.meta.position))},
                    {"situation", sim::to_string(ep.meta.situation)},
                    {"source", ep.meta.source},
                    {"frames", ep.length()}});
  }
  info.episodes = episodes.size();
  json manifest = {{"format", "SPANDS1"},
                   {"version", kDatasetVersion},
                   {"master_seed", master_seed},
                   {"config", config_echo(cfg)},
                   {"episodes", list}};
  if (!settings.empty()) manifest["settings"] = settings;
  const std::string text = manifest.dump(2) + "\n";
  io::write_text(dir / "manifest.json", text);
  info.bytes += text.size();
  return info;
}

std::vector<Episode> load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("episodes") || !manifest["episodes"].is_array())
    throw FormatError(manifest_path.string() + ": missing episode list");
  const auto& list = manifest["episodes"];

  std::size_t on_disk = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("episode_") && name.ends_with(".bin")) ++on_disk;
  }
  if (on_disk != list.size())
    throw ManifestMismatchError(dir.string() + ": manifest lists " + std::to_string(list.size()) +
                                " episodes but " + std::to_string(on_disk) + " files exist");

  std::vector<Episode> out;
  for (const auto& item : list) {
    try {
      const auto path = dir / item.at("file").get<std::string>();
      if (!std::filesystem::exists(path))
        throw ManifestMismatchError(path.string() + ": listed in manifest but missing");
      Episode ep = decode_episode(io::read_file(path), path.string());
      const auto label = item.at("label").get<std::string>();
      if (label.size() != 1) throw FormatError(path.string() + ": bad block label");
      ep.meta.seed = item.at("seed").get<std::uint64_t>();
      ep.meta.position = sim::parse_position(label[0]);
      ep.meta.situation = sim::parse_situation(item.value("situation", std::string("i")));
      ep.meta.source = item.value("source", std::string("teacher"));
      out.push_back(std::move(ep));
    } catch (const json::exception& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace span::data
