#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "udscreen/core.hpp"
#include "udscreen/json_io.hpp"

namespace udscreen::detection {

struct Tile {
  int index = 0;
  BoundingBox region;  // in image coordinates; x_min/y_min is the tile offset
};

struct TileGrid {
  int tile_size = 1280;
  int overlap = 320;
  int image_width = 0;
  int image_height = 0;
  std::vector<Tile> tiles;  // row-major
};

inline constexpr int kDefaultTileSize = 1280;
inline constexpr int kDefaultOverlap = 320;
inline constexpr double kDefaultNmsIou = 0.10;
inline constexpr double kDefaultConfidenceThreshold = 0.20;

// Offsets advance by tile_size - overlap; the last tile on each axis is
// shifted back so it ends on the image edge.
TileGrid make_tiles(int width, int height, int tile_size = kDefaultTileSize,
                    int overlap = kDefaultOverlap);
TileGrid make_tiles(const WideFieldImage& image, int tile_size = kDefaultTileSize,
                    int overlap = kDefaultOverlap);

RgbImage copy_region(const RgbImage& image, const BoundingBox& region);

struct Detection {
  BoundingBox box;  // tile-local
  double confidence = 0.0;
};

// A per-tile detector. Implementations that are not reentrant must return
// false from thread_safe(); detect_all then runs them serially.
class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual std::string name() const = 0;
  virtual bool thread_safe() const { return true; }
  virtual std::vector<Detection> detect(const RgbImage& tile, int tile_index) const = 0;
};

struct BlobBackendConfig {
  int octaves = 4;
  double base_sigma = 1.6;
  // Minimum scale-normalized DoG response, in luma units.
  double response_threshold = 2.5;
  double min_contrast = 4.0;  // luma units between background and blob core
  int min_region_pixels = 6;
  int max_window = 240;
  // Logistic mapping of the relative frame/lesion contrast to a confidence.
  double contrast_center = 0.08;
  double contrast_scale = 0.025;
};

// Multi-scale difference-of-Gaussian dark-blob detector. Each scale-space
// extremum is refined by a half-contrast region grow; the box is the region
// extent plus a skin margin, and the confidence is a logistic of the
// frame-vs-lesion luma contrast.
class BlobBackend final : public DetectorBackend {
 public:
  explicit BlobBackend(BlobBackendConfig config = {}) : config_(config) {}
  std::string name() const override { return "blob"; }
  std::vector<Detection> detect(const RgbImage& tile, int tile_index) const override;

 private:
  BlobBackendConfig config_;
};

// Replays per-tile outputs of an external detector from a JSON Lines file
// with records {"tile": i, "box": [..tile-local..], "confidence": c}.
class ImportedBackend final : public DetectorBackend {
 public:
  explicit ImportedBackend(const std::filesystem::path& path);
  explicit ImportedBackend(std::vector<std::vector<Detection>> per_tile, std::string name = "imported");
  std::string name() const override { return name_; }
  std::vector<Detection> detect(const RgbImage& tile, int tile_index) const override;

 private:
  std::vector<std::vector<Detection>> per_tile_;
  std::string name_;
};

std::unique_ptr<DetectorBackend> make_backend(const std::string& name,
                                              const std::filesystem::path& import_file = {});

int default_box_margin(int width, int height);

struct DetectOptions {
  // Drop boxes that touch a tile edge lying inside the image; such lesions
  // are seen whole by the neighbouring tile.
  bool drop_truncated = true;
  unsigned workers = 0;  // 0 = hardware concurrency
};

// Pre-merge detections in image coordinates (no NMS).
std::vector<LesionBox> detect_all(const WideFieldImage& image, const DetectorBackend& backend,
                                  const TileGrid& grid, const DetectOptions& options = {});

// Greedy NMS; confidence ties are broken by ascending box coordinates.
// Output lesion ids are "<patient_id>:<index>" in output order.
std::vector<LesionBox> merge_nms(std::vector<LesionBox> boxes, double iou_threshold = kDefaultNmsIou,
                                 const std::string& patient_id = {});

std::vector<LesionBox> filter_confidence(std::vector<LesionBox> boxes, double min_confidence);

struct DetectionMetrics {
  double recall = 0.0;
  double precision = 0.0;
  double ap50 = 0.0, ar50 = 0.0;
  double ap75 = 0.0, ar75 = 0.0;
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  // Set when truth is empty: recall is reported as 1.0.
  bool recall_undefined = false;
  // Set when no prediction passes the threshold: precision is reported as 0.0.
  bool precision_undefined = false;
};

// Greedy confidence-ordered matching. Returns, for each prediction in
// descending-confidence order, whether it matched a truth box.
struct MatchResult {
  std::vector<std::size_t> order;  // indices into predictions
  std::vector<bool> matched;       // parallel to order
};
MatchResult greedy_match(const std::vector<LesionBox>& predictions,
                         const std::vector<BoundingBox>& truth, double iou_threshold);

// 101-point interpolated AP over the full ranked list.
double average_precision_101(const std::vector<bool>& ranked_matches, std::size_t n_truth);

DetectionMetrics evaluate_detection(const std::vector<LesionBox>& predictions,
                                    const std::vector<GroundTruthLesion>& truth,
                                    double confidence_threshold = kDefaultConfidenceThreshold);

struct LesionCrop {
  std::string lesion_id;
  RgbImage pixels;
};

std::vector<LesionCrop> extract_crops(const WideFieldImage& image,
                                      const std::vector<LesionBox>& boxes);

struct DetectionsHeader {
  std::string image_id;
  int width = 0;
  int height = 0;
  int tile_size = kDefaultTileSize;
  int overlap = kDefaultOverlap;
  double nms_iou = kDefaultNmsIou;
  double min_confidence = kDefaultConfidenceThreshold;
  std::string backend = "blob";
};

void write_detections(const std::filesystem::path& path, const DetectionsHeader& header,
                      const std::vector<LesionBox>& lesions);
struct DetectionsFile {
  DetectionsHeader header;
  std::vector<LesionBox> lesions;
};
DetectionsFile read_detections(const std::filesystem::path& path);

}  // namespace udscreen::detection
