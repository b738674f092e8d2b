#include "udscreen/pipeline.hpp"

#include <set>

namespace udscreen {

void to_json(Json& j, const AugmentationConfig& c) {
  j = Json{{"brightness_jitter", c.brightness_jitter},
           {"color_jitter_base", c.color_jitter_base},
           {"color_jitter_multiplier", c.color_jitter_multiplier},
           {"global_crop_scale", c.global_crop_scale},
           {"local_crop_scale", c.local_crop_scale},
           {"n_global", c.n_global},
           {"n_local", c.n_local},
           {"rng_seed", c.rng_seed}};
}

void from_json(const Json& j, AugmentationConfig& c) {
  c.brightness_jitter = j.value("brightness_jitter", c.brightness_jitter);
  c.color_jitter_base = j.value("color_jitter_base", c.color_jitter_base);
  c.color_jitter_multiplier = j.value("color_jitter_multiplier", c.color_jitter_multiplier);
  c.global_crop_scale = j.value("global_crop_scale", c.global_crop_scale);
  c.local_crop_scale = j.value("local_crop_scale", c.local_crop_scale);
  c.n_global = j.value("n_global", c.n_global);
  c.n_local = j.value("n_local", c.n_local);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
}

void to_json(Json& j, const TrainerConfig& c) {
  j = Json{{"network", {{"stem_pool", c.shape.stem_pool},
                        {"channels", c.shape.channels},
                        {"hidden", c.shape.hidden},
                        {"out_dim", c.shape.out_dim}}},
           {"augmentation", c.augmentation},
           {"teacher_temperature", c.temperatures.teacher},
           {"student_temperature", c.temperatures.student},
           {"ema_momentum", c.ema_momentum},
           {"center_momentum", c.center_momentum},
           {"learning_rate", c.learning_rate},
           {"sgd_momentum", c.sgd_momentum},
           {"grad_clip", c.grad_clip},
           {"batch_size", c.batch_size},
           {"min_epochs", c.min_epochs},
           {"max_epochs", c.max_epochs},
           {"stability_window", c.stability_window},
           {"top_k", c.top_k},
           {"seed", c.seed}};
}

void from_json(const Json& j, TrainerConfig& c) {
  if (auto it = j.find("network"); it != j.end()) {
    c.shape.stem_pool = it->value("stem_pool", c.shape.stem_pool);
    c.shape.channels = it->value("channels", c.shape.channels);
    c.shape.hidden = it->value("hidden", c.shape.hidden);
    c.shape.out_dim = it->value("out_dim", c.shape.out_dim);
  }
  if (auto it = j.find("augmentation"); it != j.end()) it->get_to(c.augmentation);
  c.temperatures.teacher = j.value("teacher_temperature", c.temperatures.teacher);
  c.temperatures.student = j.value("student_temperature", c.temperatures.student);
  c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
  c.center_momentum = j.value("center_momentum", c.center_momentum);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.sgd_momentum = j.value("sgd_momentum", c.sgd_momentum);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.min_epochs = j.value("min_epochs", c.min_epochs);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.stability_window = j.value("stability_window", c.stability_window);
  c.top_k = j.value("top_k", c.top_k);
  c.seed = j.value("seed", c.seed);
}

void to_json(Json& j, const PipelineConfig& c) {
  j = Json{{"tile_size", c.tile_size},
           {"overlap", c.overlap},
           {"nms_iou", c.nms_iou},
           {"min_confidence", c.min_confidence},
           {"backend", c.backend},
           {"illumination", {{"ring_width", c.illumination.ring_width},
                             {"sigma_multiplier", c.illumination.sigma_multiplier},
                             {"estimator", "sample_mean_std"},
                             {"min_lesions", c.illumination.min_lesions}}},
           {"embedder", to_string(c.embedder)},
           {"top_k", c.top_k}};
  // Trainer settings only matter, and only enter the cache key, for selfdistill.
  if (c.embedder == EmbedderTag::selfdistill) j["trainer"] = c.trainer;
}

void from_json(const Json& j, PipelineConfig& c) {
  c.tile_size = j.value("tile_size", c.tile_size);
  c.overlap = j.value("overlap", c.overlap);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  c.min_confidence = j.value("min_confidence", c.min_confidence);
  c.backend = j.value("backend", c.backend);
  if (auto it = j.find("illumination"); it != j.end()) {
    c.illumination.ring_width = it->value("ring_width", c.illumination.ring_width);
    c.illumination.sigma_multiplier = it->value("sigma_multiplier", c.illumination.sigma_multiplier);
    c.illumination.min_lesions = it->value("min_lesions", c.illumination.min_lesions);
    if (it->value("estimator", std::string("sample_mean_std")) != "sample_mean_std") {
      throw Error("unsupported illumination estimator");
    }
  }
  if (auto it = j.find("embedder"); it != j.end()) c.embedder = embedder_tag_from_string(it->get<std::string>());
  if (auto it = j.find("trainer"); it != j.end()) it->get_to(c.trainer);
  c.top_k = j.value("top_k", c.top_k);
}

std::vector<LesionBox> detect_lesions(const WideFieldImage& image, const PipelineConfig& config,
                                      const detection::DetectorBackend& backend) {
  const auto grid = detection::make_tiles(image, config.tile_size, config.overlap);
  auto boxes = detection::detect_all(image, backend, grid);
  // Boxes below the threshold can only suppress even weaker boxes, so
  // thresholding before NMS keeps the same set and yields contiguous ids.
  boxes = detection::filter_confidence(std::move(boxes), config.min_confidence);
  return detection::merge_nms(std::move(boxes), config.nms_iou, image.patient_id);
}

PreprocessedCrop prepare_crop(const std::string& lesion_id, const RgbImage& pixels, int ring_width) {
  const BoundingBox full{0, 0, pixels.width, pixels.height};
  const int ring = quality::usable_ring_width(full, ring_width);
  std::array<double, 3> frame{0, 0, 0};
  if (ring >= 1) {
    frame = quality::frame_mean_rgb(pixels, full, ring);
  } else if (!pixels.empty()) {
    for (std::size_t i = 0; i < pixels.data.size(); ++i) frame[i % 3] += pixels.data[i];
    for (auto& f : frame) f /= static_cast<double>(full.area());
  }
  for (auto& f : frame) f /= 255.0;
  return preprocess(lesion_id, pixels, frame);
}

std::vector<PreprocessedCrop> prepare_crops(const WideFieldImage& image, const std::vector<LesionBox>& lesions,
                                            int ring_width) {
  std::vector<PreprocessedCrop> out;
  out.reserve(lesions.size());
  for (const auto& crop : detection::extract_crops(image, lesions)) {
    out.push_back(prepare_crop(crop.lesion_id, crop.pixels, ring_width));
  }
  return out;
}

PipelineResult run_pipeline(const WideFieldImage& image, const PipelineConfig& config,
                            const detection::DetectorBackend* backend,
                            const std::function<void(const std::string&, const PipelineResult&)>& on_stage) {
  PipelineResult r;
  const auto stage = [&](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError(name, e.what());
    }
    if (on_stage) on_stage(name, r);
  };

  stage("detect", [&] {
    image.validate();
    std::unique_ptr<detection::DetectorBackend> owned;
    if (!backend) {
      owned = detection::make_backend(config.backend);
      backend = owned.get();
    }
    r.lesions = detect_lesions(image, config, *backend);
    r.header = {image.patient_id, image.width(), image.height(), config.tile_size,
                config.overlap,   config.nms_iou, config.min_confidence, backend->name()};
  });

  stage("filter", [&] {
    quality::populate_frame_means(image, r.lesions, config.illumination.ring_width);
    auto flagged = quality::flag_poorly_illuminated(std::move(r.lesions), config.illumination);
    r.lesions = std::move(flagged.lesions);
    if (!flagged.warning.empty()) r.warnings.push_back(flagged.warning);
  });

  std::set<std::string> excluded;
  for (const auto& l : r.lesions) {
    if (l.illumination_flag) excluded.insert(l.lesion_id);
  }

  stage("embed", [&] {
    if (r.lesions.empty()) throw Error("no lesions detected");
    const auto crops = prepare_crops(image, r.lesions, config.illumination.ring_width);
    TrainResult t;
    if (config.embedder == EmbedderTag::handcrafted) {
      t = HandcraftedEmbedder{}.embed(crops, excluded);
    } else {
      t = train_patient(crops, config.trainer, excluded);
    }
    r.embeddings = std::move(t.embeddings);
    r.epochs_run = t.epochs_run;
    if (!t.warning.empty()) r.warnings.push_back(t.warning);
  });

  stage("score", [&] {
    auto s = score_lesions(r.embeddings, config.top_k, excluded);
    r.scores = std::move(s.scores);
    if (!s.warning.empty()) r.warnings.push_back(s.warning);
  });
  return r;
}

}  // namespace udscreen
