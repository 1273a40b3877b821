#pragma once

#include <cstdint>
#include <string>

namespace bdg {

/// Dense 4-D extent in (batch, channel, row, col) order.
struct Shape {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  constexpr std::int64_t numel() const { return n * c * h * w; }
  constexpr std::int64_t plane() const { return h * w; }
  constexpr bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }

  /// Shape of a rows x cols matrix stored as a single image plane.
  static constexpr Shape matrix(std::int64_t rows, std::int64_t cols) { return {1, 1, rows, cols}; }
  /// Shape of a per-channel vector that broadcasts over (n, h, w).
  static constexpr Shape channels(std::int64_t c) { return {1, c, 1, 1}; }
};

}  // namespace bdg
