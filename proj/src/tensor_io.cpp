#include "ride/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace ride {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("tensor container truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensors(std::ostream& out, const NamedTensors& tensors) {
  out.write(kContainerMagic.data(), static_cast<std::streamsize>(kContainerMagic.size()));
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const Tensor f = t.dtype() == DType::f32 ? t : t.to(DType::f32);
    for (float v : f.data<float>()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw IoError("failed writing tensor container");
}

NamedTensors read_tensors(std::istream& in) {
  std::string magic(kContainerMagic.size(), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kContainerMagic)
    throw IoError("not a tensor container (bad magic)");
  const auto version = get_u32(in);
  if (version != kContainerVersion)
    throw IoError("unsupported tensor container version " + std::to_string(version));
  const auto count = get_u32(in);
  NamedTensors result;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get_u32(in);
    if (len > (1u << 16)) throw IoError("tensor name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("tensor container truncated");
    const auto rank = get_u32(in);
    if (rank > 16) throw IoError("tensor rank too large");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get_u32(in));
    std::vector<float> values(static_cast<std::size_t>(numel(shape)));
    for (auto& v : values) v = std::bit_cast<float>(get_u32(in));
    result.emplace_back(std::move(name), Tensor::from_data(shape, std::move(values)));
  }
  return result;
}

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensors(in);
}

const Tensor& find_tensor(const NamedTensors& tensors, std::string_view name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("tensor '" + std::string(name) + "' not found in container");
}

bool has_tensor(const NamedTensors& tensors, std::string_view name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

}  // namespace ride
