#pragma once

#include <string>
#include <vector>

#include "udscreen/detection.hpp"
#include "udscreen/quality_filter.hpp"
#include "udscreen/selfdistill.hpp"
#include "udscreen/ud_scorer.hpp"

namespace udscreen {

struct PipelineConfig {
  int tile_size = detection::kDefaultTileSize;
  int overlap = detection::kDefaultOverlap;
  double nms_iou = detection::kDefaultNmsIou;
  double min_confidence = detection::kDefaultConfidenceThreshold;
  std::string backend = "blob";
  quality::IlluminationFilterConfig illumination;
  EmbedderTag embedder = EmbedderTag::handcrafted;
  TrainerConfig trainer;  // selfdistill only
  int top_k = kDefaultTopK;
};

void to_json(Json& j, const AugmentationConfig& c);
void from_json(const Json& j, AugmentationConfig& c);
void to_json(Json& j, const TrainerConfig& c);
void from_json(const Json& j, TrainerConfig& c);
void to_json(Json& j, const PipelineConfig& c);
void from_json(const Json& j, PipelineConfig& c);

// A failure inside one named pipeline stage: detect, filter, embed or score.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Tiled detection, confidence threshold, NMS. Ids are contiguous.
std::vector<LesionBox> detect_lesions(const WideFieldImage& image, const PipelineConfig& config,
                                      const detection::DetectorBackend& backend);

// A pixel crop padded with the mean color of its outer ring and brought to 224.
PreprocessedCrop prepare_crop(const std::string& lesion_id, const RgbImage& pixels, int ring_width = 3);
std::vector<PreprocessedCrop> prepare_crops(const WideFieldImage& image, const std::vector<LesionBox>& lesions,
                                            int ring_width = 3);

struct PipelineResult {
  detection::DetectionsHeader header;
  std::vector<LesionBox> lesions;
  std::vector<LesionEmbedding> embeddings;
  std::vector<UDScore> scores;
  int epochs_run = 0;
  std::vector<std::string> warnings;
};

// Stages run in order; the callback (if any) sees each finished stage name
// and the partial result, so callers can persist artifacts as they appear.
PipelineResult run_pipeline(const WideFieldImage& image, const PipelineConfig& config,
                            const detection::DetectorBackend* backend = nullptr,
                            const std::function<void(const std::string&, const PipelineResult&)>& on_stage = {});

}  // namespace udscreen
