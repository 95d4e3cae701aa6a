// Dense row-major 2D grids and the eight wind directions.
//
// Raster convention used throughout the project: column index grows toward
// the east (+x), row index grows toward the south (+y). Row 0 is the
// northern edge of the scene. Canonical inflow enters at column 0.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace urbanwind {

template <class T>
class Grid2D {
 public:
  using value_type = T;

  Grid2D() = default;
  Grid2D(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[index(r, c)]; }
  const T& operator()(int r, int c) const { return data_[index(r, c)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool same_shape(const Grid2D& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  static std::size_t checked_size(int rows, int cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("negative grid extent");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(c);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

// std::vector<bool> is avoided on purpose so masks expose a contiguous span.
using BoolGrid = Grid2D<std::uint8_t>;

/// Raster equivalent of rotating the scene by `quarter_turns` * 90 degrees
/// about its center (positive = clockwise on screen, i.e. counterclockwise
/// in the x-east / y-south frame). Only square grids are supported.
template <class T>
Grid2D<T> rotate_quarter_turns(const Grid2D<T>& g, int quarter_turns) {
  if (g.rows() != g.cols()) throw std::invalid_argument("rotate_quarter_turns: grid must be square");
  const int n = g.rows();
  const int k = ((quarter_turns % 4) + 4) % 4;
  Grid2D<T> out(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      switch (k) {
        case 0: out(r, c) = g(r, c); break;
        case 1: out(r, c) = g(n - 1 - c, r); break;
        case 2: out(r, c) = g(n - 1 - r, n - 1 - c); break;
        default: out(r, c) = g(c, n - 1 - r); break;
      }
    }
  }
  return out;
}

/// Direction the wind blows FROM.
enum class Direction : std::uint8_t { N, NE, E, SE, S, SW, W, NW };

inline constexpr std::array<Direction, 8> kAllDirections = {
    Direction::N, Direction::NE, Direction::E, Direction::SE,
    Direction::S, Direction::SW, Direction::W, Direction::NW};

inline std::string_view to_string(Direction d) {
  static constexpr std::array<std::string_view, 8> names = {"N", "NE", "E", "SE", "S", "SW", "W", "NW"};
  return names[static_cast<std::size_t>(d)];
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  for (Direction d : kAllDirections) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

}  // namespace urbanwind
