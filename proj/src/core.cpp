#include "udscreen/core.hpp"

#include <algorithm>

namespace udscreen {

RgbImage::RgbImage(int w, int h, std::uint8_t fill)
    : width(w), height(h),
      data(static_cast<std::size_t>(std::max(w, 0)) * static_cast<std::size_t>(std::max(h, 0)) * 3,
           fill) {}

BoundingBox BoundingBox::clipped(int image_width, int image_height) const {
  return {std::clamp(x_min, 0, image_width), std::clamp(y_min, 0, image_height),
          std::clamp(x_max, 0, image_width), std::clamp(y_max, 0, image_height)};
}

std::int64_t intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const std::int64_t w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const std::int64_t h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0 && h > 0) ? w * h : 0;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const std::int64_t inter = intersection_area(a, b);
  if (inter == 0) return 0.0;
  const std::int64_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string to_string(LesionKind kind) {
  switch (kind) {
    case LesionKind::nevus: return "nevus";
    case LesionKind::freckle: return "freckle";
    case LesionKind::planted_outlier: return "planted_outlier";
  }
  return "nevus";
}

LesionKind lesion_kind_from_string(const std::string& s) {
  if (s == "nevus") return LesionKind::nevus;
  if (s == "freckle") return LesionKind::freckle;
  if (s == "planted_outlier") return LesionKind::planted_outlier;
  throw Error("unknown lesion kind: " + s);
}

void WideFieldImage::validate() const {
  if (image.width < 1 || image.height < 1) {
    throw Error("image " + patient_id + " has empty dimensions");
  }
  const auto expected = static_cast<std::size_t>(image.width) *
                        static_cast<std::size_t>(image.height) * 3;
  if (image.data.size() != expected) {
    throw Error("image " + patient_id + " pixel buffer has wrong length");
  }
}

std::string make_lesion_id(const std::string& patient_id, std::size_t index) {
  return patient_id + ":" + std::to_string(index);
}

std::string patient_of_lesion(const std::string& lesion_id) {
  const auto pos = lesion_id.rfind(':');
  return pos == std::string::npos ? std::string{} : lesion_id.substr(0, pos);
}

}  // namespace udscreen
