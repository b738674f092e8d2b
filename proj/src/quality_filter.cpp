#include "udscreen/quality_filter.hpp"

#include <algorithm>
#include <cmath>

namespace udscreen::quality {
namespace {

template <typename Fn>
void for_each_ring_pixel(const BoundingBox& box, int ring, Fn&& fn) {
  for (int y = box.y_min; y < box.y_max; ++y) {
    const bool edge_row = y < box.y_min + ring || y >= box.y_max - ring;
    if (edge_row) {
      for (int x = box.x_min; x < box.x_max; ++x) fn(x, y);
    } else {
      for (int x = box.x_min; x < box.x_min + ring; ++x) fn(x, y);
      for (int x = box.x_max - ring; x < box.x_max; ++x) fn(x, y);
    }
  }
}

void check_ring(const RgbImage& image, const BoundingBox& box, int ring_width) {
  if (!box.within(image.width, image.height)) throw Error("frame box lies outside the image");
  if (ring_width < 1) throw Error("ring width must be at least 1");
  if (2 * ring_width >= std::min(box.width(), box.height())) {
    throw Error("ring width " + std::to_string(ring_width) + " is not less than half of the " +
                std::to_string(box.width()) + "x" + std::to_string(box.height()) + " box");
  }
}

}  // namespace

void IlluminationFilterConfig::validate() const {
  if (ring_width < 1) throw Error("ring_width must be >= 1");
  if (!(sigma_multiplier > 0.0)) throw Error("sigma_multiplier must be > 0");
}

double frame_mean(const RgbImage& image, const BoundingBox& box, int ring_width) {
  check_ring(image, box, ring_width);
  double sum = 0.0;
  std::size_t n = 0;
  for_each_ring_pixel(box, ring_width, [&](int x, int y) {
    const auto* p = image.pixel(x, y);
    sum += luma(p[0], p[1], p[2]);
    ++n;
  });
  return sum / static_cast<double>(n);
}

std::array<double, 3> frame_mean_rgb(const RgbImage& image, const BoundingBox& box, int ring_width) {
  check_ring(image, box, ring_width);
  std::array<double, 3> sum{0, 0, 0};
  std::size_t n = 0;
  for_each_ring_pixel(box, ring_width, [&](int x, int y) {
    const auto* p = image.pixel(x, y);
    for (int c = 0; c < 3; ++c) sum[static_cast<std::size_t>(c)] += p[c];
    ++n;
  });
  for (auto& s : sum) s /= static_cast<double>(n);
  return sum;
}

int usable_ring_width(const BoundingBox& box, int ring_width) {
  const int limit = (std::min(box.width(), box.height()) - 1) / 2;
  return std::clamp(ring_width, 0, limit);
}

void populate_frame_means(const WideFieldImage& image, std::vector<LesionBox>& lesions,
                          int ring_width) {
  for (auto& l : lesions) {
    const int ring = usable_ring_width(l.box, ring_width);
    if (ring >= 1) {
      l.frame_mean_intensity = frame_mean(image.image, l.box, ring);
      continue;
    }
    // Boxes thinner than 3 px have no interior; average every pixel.
    if (!l.box.within(image.width(), image.height())) {
      throw Error("box of lesion " + l.lesion_id + " lies outside the image");
    }
    double sum = 0.0;
    for (int y = l.box.y_min; y < l.box.y_max; ++y) {
      for (int x = l.box.x_min; x < l.box.x_max; ++x) {
        const auto* p = image.image.pixel(x, y);
        sum += luma(p[0], p[1], p[2]);
      }
    }
    l.frame_mean_intensity = sum / static_cast<double>(l.box.area());
  }
}

FlagResult flag_poorly_illuminated(std::vector<LesionBox> lesions,
                                   const IlluminationFilterConfig& config) {
  config.validate();
  FlagResult r;
  for (auto& l : lesions) l.illumination_flag = false;
  r.lesions = std::move(lesions);
  const std::size_t n = r.lesions.size();
  if (n < config.min_lesions || n < 2) {
    r.warning = "illumination filter skipped: " + std::to_string(n) + " lesions (< " +
                std::to_string(config.min_lesions) + ")";
    return r;
  }
  double sum = 0.0;
  for (const auto& l : r.lesions) sum += l.frame_mean_intensity;
  r.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& l : r.lesions) ss += (l.frame_mean_intensity - r.mean) * (l.frame_mean_intensity - r.mean);
  r.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  r.threshold = r.mean - config.sigma_multiplier * r.stddev;
  if (r.stddev == 0.0) {
    r.warning = "illumination filter: zero spread, nothing flagged";
    return r;
  }
  for (auto& l : r.lesions) {
    l.illumination_flag = l.frame_mean_intensity < r.threshold;
    r.flagged += l.illumination_flag ? 1 : 0;
  }
  return r;
}

}  // namespace udscreen::quality
