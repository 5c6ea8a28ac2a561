#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ride/tensor.hpp"

namespace ride {

/// Ordered list of named tensors; the unit stored in a container file.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Container layout, all integers little-endian:
///   magic "RIDETNSR" (8 bytes), u32 version, u32 count, then per tensor
///   u32 name length, name bytes, u32 rank, rank x u32 dims, f32 values.
inline constexpr std::string_view kContainerMagic = "RIDETNSR";
inline constexpr std::uint32_t kContainerVersion = 1;

void write_tensors(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

/// Throws IoError when `name` is absent.
const Tensor& find_tensor(const NamedTensors& tensors, std::string_view name);
bool has_tensor(const NamedTensors& tensors, std::string_view name);

}  // namespace ride
