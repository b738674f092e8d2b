#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "udscreen/core.hpp"
#include "udscreen/json_io.hpp"

namespace udscreen {

inline constexpr int kCropSize = 224;
inline constexpr int kLocalViewSize = 96;
inline constexpr int kEmbeddingDim = 128;

// Interleaved RGB in [0,1].
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(x)) * 3;
  }
  float* pixel(int x, int y) { return data.data() + index(x, y); }
  const float* pixel(int x, int y) const { return data.data() + index(x, y); }

  friend bool operator==(const FloatImage&, const FloatImage&) = default;
};

struct PreprocessedCrop {
  std::string lesion_id;
  FloatImage pixels;  // kCropSize x kCropSize
  // Native crop size before squaring, and the padding color in [0,1].
  int source_width = 0;
  int source_height = 0;
  std::array<double, 3> frame_mean_rgb{0, 0, 0};
};

// Squares the crop by padding its shorter side with the frame color, then
// upscales to 224. Squares larger than 224 are center-cropped, never shrunk.
PreprocessedCrop preprocess(const std::string& lesion_id, const RgbImage& crop,
                            const std::array<double, 3>& frame_mean_rgb);

enum class ViewKind { global, local };

struct AugmentationConfig {
  double brightness_jitter = 0.4;
  double color_jitter_base = 0.04;
  double color_jitter_multiplier = 10.0;
  std::array<double, 2> global_crop_scale{0.5, 1.0};
  std::array<double, 2> local_crop_scale{0.2, 0.5};
  int n_global = 2;
  int n_local = 4;
  std::uint64_t rng_seed = 0;

  double color_jitter() const { return color_jitter_base * color_jitter_multiplier; }
  void validate() const;
};

// The random draws behind one augmented view.
struct AugmentTrace {
  BoundingBox crop;
  double brightness = 1.0;
  std::array<double, 3> channel{1.0, 1.0, 1.0};
};

// Square random crop covering a uniform area fraction of the view's scale
// range, resized to 224 (global) or 96 (local), then brightness and
// per-channel multiplicative jitter, clamped to [0,1].
FloatImage augment(const FloatImage& image, const AugmentationConfig& config, ViewKind kind,
                   std::mt19937_64& rng, AugmentTrace* trace = nullptr);
// Seeds a fresh generator from config.rng_seed.
FloatImage augment(const FloatImage& image, const AugmentationConfig& config, ViewKind kind,
                   AugmentTrace* trace = nullptr);

enum class EmbedderTag { handcrafted, selfdistill };
std::string to_string(EmbedderTag tag);
EmbedderTag embedder_tag_from_string(const std::string& s);

struct LesionEmbedding {
  std::string lesion_id;
  std::vector<double> vector;
  EmbedderTag tag = EmbedderTag::handcrafted;
};

void to_json(Json& j, const LesionEmbedding& e);
void from_json(const Json& j, LesionEmbedding& e);
void write_embeddings(const std::filesystem::path& path, const std::vector<LesionEmbedding>& e);
std::vector<LesionEmbedding> read_embeddings(const std::filesystem::path& path);

inline constexpr int kHandcraftedFeatures = 19;

// Raw 19-dim feature vector, before padding and normalization.
std::array<double, kHandcraftedFeatures> handcrafted_features(const PreprocessedCrop& crop);
LesionEmbedding embed_handcrafted(const PreprocessedCrop& crop, int dim = kEmbeddingDim);

void l2_normalize(std::vector<double>& v);

}  // namespace udscreen
