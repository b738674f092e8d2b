#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "udscreen/core.hpp"
#include "udscreen/json_io.hpp"

namespace udscreen::synth {

struct ShadowRegion {
  BoundingBox box;
  double attenuation = 0.5;  // pixel multiplier, in (0,1)
};

struct SynthConfig {
  std::string patient_id = "synth";
  std::uint64_t seed = 0;
  int width = 4096;
  int height = 6144;
  int n_lesions = 300;
  // Log-normal lesion area (px^2) of the nevus population.
  double mu_area = 5.7;  // ln(~300)
  double sigma_area = 0.6;
  int n_outliers = 0;
  std::vector<ShadowRegion> shadow_regions;
  double hair_density = 0.0;  // 0..1
  double freckle_fraction = 0.2;
  // Planted outliers are placed away from shadow regions so that the
  // illumination filter never hides them.
  bool outliers_outside_shadow = true;

  void validate() const;
};

void to_json(Json& j, const SynthConfig& c);
void from_json(const Json& j, SynthConfig& c);

// Samples a per-patient config with right-tailed lesion counts.
SynthConfig sample_patient_config(std::uint64_t seed, int width = 4096, int height = 6144);

// Population moments of the nevus equivalent diameter implied by the
// log-normal area distribution.
struct DiameterMoments {
  double mean;
  double stddev;
};
DiameterMoments nevus_diameter_moments(const SynthConfig& c);

// Nevus border irregularity population parameters.
inline constexpr double kNevusIrregularityMean = 0.04;
inline constexpr double kNevusIrregularitySd = 0.015;
inline constexpr double kNevusHueSd = 2.5;

WideFieldImage generate_dossier(const SynthConfig& config);

// Writes <dir>/<patient_id>.png and <dir>/<patient_id>.json (ground truth + config echo).
void write_dossier(const std::filesystem::path& dir, const WideFieldImage& image,
                   const SynthConfig& config);
WideFieldImage read_dossier(const std::filesystem::path& png_path);

}  // namespace udscreen::synth
