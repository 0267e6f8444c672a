#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace discl {

/// Grayscale raster, row-major. Pixels are nominally in [0, 1] but
/// intermediate diffusion states are unbounded.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
  }
  Image(int h, int w, std::vector<float> data) : height(h), width(w), pixels(std::move(data)) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
    if (pixels.size() != size()) throw std::invalid_argument("pixel count does not match dimensions");
  }

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const Image& o) const noexcept { return height == o.height && width == o.width; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Image-guidance level in [0, 1]. 1 reproduces the source image.
class GuidanceLevel {
 public:
  GuidanceLevel() = default;
  explicit GuidanceLevel(double value) : value_(value) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw std::invalid_argument("guidance level must lie in [0, 1], got " + std::to_string(value));
    }
  }
  double value() const noexcept { return value_; }
  friend auto operator<=>(const GuidanceLevel&, const GuidanceLevel&) = default;

 private:
  double value_ = 0.0;
};

/// The generation prompt analog: a class index, or the unconditional token.
class Condition {
 public:
  static Condition unconditional() noexcept { return Condition(); }
  static Condition of_class(int class_index) {
    if (class_index < 0) throw std::invalid_argument("class index must be non-negative");
    return Condition(class_index);
  }

  bool is_unconditional() const noexcept { return class_index_ < 0; }
  int class_index() const {
    if (is_unconditional()) throw std::logic_error("unconditional condition has no class");
    return class_index_;
  }
  friend bool operator==(const Condition&, const Condition&) = default;

 private:
  Condition() = default;
  explicit Condition(int c) : class_index_(c) {}
  int class_index_ = -1;
};

}  // namespace discl
