// SPDX-License-Identifier: Apache-2.0
#include "span/checkpoint.hpp"

#include <cstring>
#include <map>

#include "span/binary_io.hpp"
#include "span/error.hpp"

namespace span {

namespace {
constexpr char kMagic[8] = {'S', 'P', 'A', 'N', 'C', 'K', 'P', 'T'};
}

std::vector<std::uint8_t> encode_checkpoint(std::span<ag::Parameter* const> params) {
  io::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  for (const ag::Parameter* p : params) {
    if (p->name.size() > 0xFFFF) throw ContractError("parameter name too long: " + p->name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p->value.rank()));
    for (auto e : p->value.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (double v : p->value.data) w.put<double>(v);
  }
  return std::move(w.buffer());
}

std::vector<ag::Parameter> decode_checkpoint(std::span<const std::uint8_t> bytes,
                                             const std::string& origin) {
  io::Reader r(bytes, origin);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError(origin + ": not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  std::vector<ag::Parameter> out;
  while (!r.at_end()) {
    const auto len = r.get<std::uint16_t>();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    const auto rank = r.get<std::uint8_t>();
    ag::Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint32_t>();
    const std::size_t n = ag::numel(shape);
    if (rank == 0 || n == 0 || n * sizeof(double) > r.remaining())
      throw TruncatedFileError(origin + ": record '" + name + "' is truncated or malformed");
    std::vector<double> values(n);
    r.bytes(values.data(), n * sizeof(double));
    out.emplace_back(std::move(name), ag::Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<ag::Parameter* const> params) {
  io::write_file(path, encode_checkpoint(params));
}

void load_checkpoint(const std::filesystem::path& path, std::span<ag::Parameter* const> params) {
  const auto bytes = io::read_file(path);
  auto loaded = decode_checkpoint(bytes, path.string());
  std::map<std::string, ag::Parameter*> by_name;
  for (ag::Parameter* p : params) by_name[p->name] = p;
  if (loaded.size() != params.size())
    throw ConfigError(path.string() + ": checkpoint holds " + std::to_string(loaded.size()) +
                      " parameters, model expects " + std::to_string(params.size()));
  for (auto& rec : loaded) {
    auto it = by_name.find(rec.name);
    if (it == by_name.end())
      throw ConfigError(path.string() + ": unexpected parameter '" + rec.name + "'");
    if (it->second->value.shape != rec.value.shape)
      throw ConfigError(path.string() + ": parameter '" + rec.name + "' has shape " +
                        ag::shape_str(rec.value.shape) + ", model expects " +
                        ag::shape_str(it->second->value.shape));
    it->second->value = std::move(rec.value);
  }
}

}  // namespace span
