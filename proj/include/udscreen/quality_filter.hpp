#pragma once

#include <array>
#include <string>
#include <vector>

#include "udscreen/core.hpp"

namespace udscreen::quality {

enum class Estimator { sample_mean_std };

struct IlluminationFilterConfig {
  int ring_width = 3;
  double sigma_multiplier = 2.0;
  Estimator estimator = Estimator::sample_mean_std;
  // Below this many lesions the statistics are meaningless and nothing is flagged.
  std::size_t min_lesions = 10;

  void validate() const;
};

// Mean BT.601 luma over the outermost `ring_width` pixels inside `box`.
// Throws if the ring would reach the box centre (2 * ring_width >= min side).
double frame_mean(const RgbImage& image, const BoundingBox& box, int ring_width);

// Per-channel mean over the same ring, 0..255.
std::array<double, 3> frame_mean_rgb(const RgbImage& image, const BoundingBox& box, int ring_width);

// Ring width actually usable for a box: the configured width, shrunk for
// boxes too small to hold it.
int usable_ring_width(const BoundingBox& box, int ring_width);

// Fills frame_mean_intensity for every lesion.
void populate_frame_means(const WideFieldImage& image, std::vector<LesionBox>& lesions,
                          int ring_width);

struct FlagResult {
  std::vector<LesionBox> lesions;
  double mean = 0.0;
  double stddev = 0.0;
  double threshold = 0.0;
  std::size_t flagged = 0;
  std::string warning;  // non-empty when the filter was a no-op
};

// Left-tail two-sigma rule: flags frame means below mean - k * sd.
FlagResult flag_poorly_illuminated(std::vector<LesionBox> lesions,
                                   const IlluminationFilterConfig& config = {});

}  // namespace udscreen::quality
