#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace breps {

// Row-major W x H raster.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width),
        height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int col, int row) { return data_[index(col, row)]; }
  const T& at(int col, int row) const { return data_[index(col, row)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

// 0 = background, 1 = foreground.
using BinaryMask = Raster<std::uint8_t>;

// Per-pixel values in [0, 1].
using SoftMask = Raster<double>;

inline std::size_t count_foreground(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.values()) n += v != 0;
  return n;
}

}  // namespace breps
