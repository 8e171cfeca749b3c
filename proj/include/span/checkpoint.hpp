// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parameter checkpoint file:
//   "SPANCKPT" | u32 version | records until end of file
//   record: u16 name length | UTF-8 name | u8 rank | u32 extent * rank | f64 values
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "span/tensor.hpp"

namespace span {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(std::span<ag::Parameter* const> params);
std::vector<ag::Parameter> decode_checkpoint(std::span<const std::uint8_t> bytes,
                                             const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, std::span<ag::Parameter* const> params);

/// Loads values into existing parameters, matching by name and shape.
/// Throws ConfigError when the file does not describe exactly these parameters.
void load_checkpoint(const std::filesystem::path& path, std::span<ag::Parameter* const> params);

}  // namespace span
