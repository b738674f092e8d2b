#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace udscreen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit interleaved RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0);

  bool empty() const { return width <= 0 || height <= 0; }
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(x)) * 3;
  }
  std::uint8_t* pixel(int x, int y) { return data.data() + index(x, y); }
  const std::uint8_t* pixel(int x, int y) const { return data.data() + index(x, y); }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// ITU-R BT.601 luma.
inline double luma(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

// Half-open pixel box: [x_min, x_max) x [y_min, y_max).
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  std::int64_t area() const {
    return static_cast<std::int64_t>(width()) * static_cast<std::int64_t>(height());
  }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  bool within(int image_width, int image_height) const {
    return valid() && x_min >= 0 && y_min >= 0 && x_max <= image_width &&
           y_max <= image_height;
  }
  BoundingBox translated(int dx, int dy) const {
    return {x_min + dx, y_min + dy, x_max + dx, y_max + dy};
  }
  BoundingBox clipped(int image_width, int image_height) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
  friend auto operator<=>(const BoundingBox&, const BoundingBox&) = default;
};

std::int64_t intersection_area(const BoundingBox& a, const BoundingBox& b);
double iou(const BoundingBox& a, const BoundingBox& b);

enum class LesionKind { nevus, freckle, planted_outlier };

std::string to_string(LesionKind kind);
LesionKind lesion_kind_from_string(const std::string& s);

// Generator-side attributes of a synthetic lesion, kept for verification.
struct LesionAttributes {
  double diameter = 0.0;      // equivalent-circle diameter, px
  double irregularity = 0.0;  // border perturbation amplitude (relative radius)
  double hue = 0.0;           // base color hue, degrees
  double red = 0.0, green = 0.0, blue = 0.0;  // base color, 0..255
};

struct GroundTruthLesion {
  BoundingBox box;
  LesionKind kind = LesionKind::nevus;
  bool in_shadow = false;
  std::optional<LesionAttributes> attributes;
};

struct WideFieldImage {
  std::string patient_id;
  RgbImage image;
  std::optional<std::vector<GroundTruthLesion>> ground_truth;

  int width() const { return image.width; }
  int height() const { return image.height; }
  void validate() const;
};

struct LesionBox {
  std::string lesion_id;
  BoundingBox box;
  double confidence = 0.0;
  int source_tile = 0;
  bool illumination_flag = false;
  double frame_mean_intensity = 0.0;
};

std::string make_lesion_id(const std::string& patient_id, std::size_t index);
// Inverse of make_lesion_id's prefix; returns everything before the last ':'.
std::string patient_of_lesion(const std::string& lesion_id);

}  // namespace udscreen
