#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace nidslam {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Dense row-major image plane.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, const T& fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int row, int col) { return data_[index(row, col)]; }
  const T& operator()(int row, int col) const { return data_[index(row, col)]; }

  bool contains(int row, int col) const {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }
  bool same_shape(int width, int height) const {
    return width_ == width && height_ == height;
  }
  template <typename U>
  bool same_shape(const Image<U>& other) const {
    return same_shape(other.width(), other.height());
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using DepthImage = Image<double>;
using RgbImage = Image<Vec3>;
using MaskImage = Image<std::uint8_t>;

inline std::size_t count_set(const MaskImage& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v != 0;
  return n;
}

/// One RGB-D observation. Depth is z-depth in meters; 0 marks invalid.
struct Frame {
  double timestamp = 0.0;
  RgbImage rgb;
  DepthImage depth;
  std::optional<MaskImage> mask;
  std::optional<MaskImage> inpaint_valid;

  int width() const { return depth.width(); }
  int height() const { return depth.height(); }

  bool masked(int row, int col) const {
    return mask && (*mask)(row, col) != 0;
  }
};

}  // namespace nidslam
