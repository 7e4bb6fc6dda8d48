#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "vesselcouple/tensor.hpp"

// Raw tensor file: "VTSR", u8 dtype (1 = f32, 2 = f64), u8 rank,
// little-endian u64 extents, then the row-major little-endian payload.
namespace vesselcouple::vtsr {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

void write(std::ostream& out, const Tensor& t, DType dtype = DType::kF64);
Tensor read(std::istream& in);

void save(const std::filesystem::path& path, const Tensor& t,
          DType dtype = DType::kF64);
Tensor load(const std::filesystem::path& path);

}  // namespace vesselcouple::vtsr
