#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bdg/tensor.hpp"

namespace bdg {

// Tensor record: "BDGT", u8 dtype (0 = f32, 1 = f64), four little-endian u32
// shape fields (n, c, h, w), then the raw little-endian values.

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

/// Reads one record; values stored in the other precision are converted.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

// Little-endian scalar helpers shared with the checkpoint container.
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
void read_exact(std::istream& is, char* dst, std::size_t n, const char* what);

}  // namespace bdg
