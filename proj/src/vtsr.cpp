#include "vesselcouple/vtsr.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace vesselcouple::vtsr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "VTSR codec assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'T', 'S', 'R'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw TensorError("VTSR: truncated stream");
  }
  return value;
}

}  // namespace

void write(std::ostream& out, const Tensor& t, DType dtype) {
  out.write(kMagic, 4);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  if (t.rank() > 255) throw TensorError("VTSR: rank exceeds 255");
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
  for (double v : t.data()) {
    if (dtype == DType::kF32) {
      put<float>(out, static_cast<float>(v));
    } else {
      put<double>(out, v);
    }
  }
  if (!out) throw TensorError("VTSR: write failed");
}

Tensor read(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw TensorError("VTSR: bad magic");
  }
  const auto dtype = get<std::uint8_t>(in);
  if (dtype != 1 && dtype != 2) {
    throw TensorError("VTSR: unknown dtype code " + std::to_string(dtype));
  }
  const auto rank = get<std::uint8_t>(in);
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) {
    v = dtype == 1 ? static_cast<double>(get<float>(in)) : get<double>(in);
  }
  return Tensor::from_data(std::move(shape), std::move(values));
}

void save(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TensorError("VTSR: cannot open " + path.string());
  write(out, t, dtype);
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("VTSR: cannot open " + path.string());
  return read(in);
}

}  // namespace vesselcouple::vtsr
