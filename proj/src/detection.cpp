#include "udscreen/detection.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <optional>
#include <thread>

#include <opencv2/imgproc.hpp>

namespace udscreen::detection {
namespace {

std::vector<int> axis_offsets(int size, int tile, int stride) {
  if (size <= tile) return {0};
  std::vector<int> out;
  for (int off = 0;; off += stride) {
    if (off + tile >= size) {
      out.push_back(size - tile);
      break;
    }
    out.push_back(off);
  }
  return out;
}

cv::Mat luma_plane(const RgbImage& img) {
  cv::Mat out(img.height, img.width, CV_32F);
  for (int y = 0; y < img.height; ++y) {
    auto* row = out.ptr<float>(y);
    const std::uint8_t* p = img.pixel(0, y);
    for (int x = 0; x < img.width; ++x, p += 3) {
      row[x] = static_cast<float>(luma(p[0], p[1], p[2]));
    }
  }
  return out;
}

struct Candidate {
  float x, y;
  float sigma;
  float response;
};

bool is_spatial_max(const cv::Mat& layer, int x, int y) {
  const float v = layer.at<float>(y, x);
  for (int dy = -1; dy <= 1; ++dy) {
    const float* row = layer.ptr<float>(y + dy);
    for (int dx = -1; dx <= 1; ++dx) {
      if ((dx != 0 || dy != 0) && row[x + dx] > v) return false;
    }
  }
  return true;
}

std::vector<Candidate> dog_extrema(const cv::Mat& gray, const BlobBackendConfig& cfg) {
  constexpr int kLevels = 5;  // Gaussian levels per octave; 4 DoG layers
  const double k = std::sqrt(2.0);
  std::vector<Candidate> out;
  cv::Mat base;
  {
    const double pre = std::sqrt(std::max(cfg.base_sigma * cfg.base_sigma - 0.25, 0.01));
    cv::GaussianBlur(gray, base, cv::Size(), pre, pre, cv::BORDER_REFLECT);
  }
  for (int o = 0; o < cfg.octaves; ++o) {
    if (base.cols < 8 || base.rows < 8) break;
    std::vector<cv::Mat> gauss(kLevels);
    gauss[0] = base;
    double sigma = cfg.base_sigma;
    for (int j = 1; j < kLevels; ++j) {
      const double next = sigma * k;
      const double inc = std::sqrt(next * next - sigma * sigma);
      cv::GaussianBlur(gauss[j - 1], gauss[j], cv::Size(), inc, inc, cv::BORDER_REFLECT);
      sigma = next;
    }
    std::vector<cv::Mat> dog(kLevels - 1);
    for (int j = 0; j + 1 < kLevels; ++j) dog[j] = gauss[j + 1] - gauss[j];  // dark blobs > 0
    const double scale = std::ldexp(1.0, o);
    // Every layer is searched for spatial maxima: adjacent octaves sample the
    // shared scale at different resolutions, so a strict scale-space extremum
    // test drops blobs whose peak falls between octaves.
    for (int j = 0; j + 1 < kLevels; ++j) {
      const double level_sigma = cfg.base_sigma * std::pow(k, j + 0.5) * scale;
      const cv::Mat& mid = dog[j];
      for (int y = 1; y < mid.rows - 1; ++y) {
        const float* row = mid.ptr<float>(y);
        for (int x = 1; x < mid.cols - 1; ++x) {
          if (row[x] < cfg.response_threshold) continue;
          if (!is_spatial_max(mid, x, y)) continue;
          out.push_back({static_cast<float>((x + 0.5) * scale - 0.5),
                         static_cast<float>((y + 0.5) * scale - 0.5),
                         static_cast<float>(level_sigma), row[x]});
        }
      }
    }
    cv::resize(gauss[2], base, cv::Size(gauss[2].cols / 2, gauss[2].rows / 2), 0, 0,
               cv::INTER_NEAREST);
  }
  return out;
}

double median_of(std::vector<float>& v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

struct Region {
  BoundingBox extent;  // tile coordinates
  int pixels = 0;
  bool touches_window = false;
  std::vector<int> members;  // linear indices into the tile
};

// Grows the connected set of pixels darker than `threshold` from the seed,
// restricted to `window`.
Region grow_region(const cv::Mat& smooth, const BoundingBox& window, int seed_x, int seed_y,
                   float threshold, std::vector<std::uint8_t>& visited) {
  Region r;
  r.extent = {seed_x, seed_y, seed_x + 1, seed_y + 1};
  const int w = smooth.cols;
  std::vector<int> stack{seed_y * w + seed_x};
  visited[static_cast<std::size_t>(stack.back())] = 1;
  while (!stack.empty()) {
    const int idx = stack.back();
    stack.pop_back();
    r.members.push_back(idx);
    const int x = idx % w, y = idx / w;
    ++r.pixels;
    r.extent.x_min = std::min(r.extent.x_min, x);
    r.extent.y_min = std::min(r.extent.y_min, y);
    r.extent.x_max = std::max(r.extent.x_max, x + 1);
    r.extent.y_max = std::max(r.extent.y_max, y + 1);
    if (x == window.x_min || y == window.y_min || x == window.x_max - 1 || y == window.y_max - 1) {
      r.touches_window = true;
    }
    constexpr int dx[4] = {1, -1, 0, 0};
    constexpr int dy[4] = {0, 0, 1, -1};
    for (int n = 0; n < 4; ++n) {
      const int nx = x + dx[n], ny = y + dy[n];
      if (nx < window.x_min || ny < window.y_min || nx >= window.x_max || ny >= window.y_max) continue;
      const int nidx = ny * w + nx;
      if (visited[static_cast<std::size_t>(nidx)]) continue;
      if (smooth.at<float>(ny, nx) >= threshold) continue;
      visited[static_cast<std::size_t>(nidx)] = 1;
      stack.push_back(nidx);
    }
  }
  for (int idx : r.members) visited[static_cast<std::size_t>(idx)] = 0;
  return r;
}

double ring_mean(const cv::Mat& gray, const BoundingBox& box, int ring) {
  double sum = 0.0;
  int n = 0;
  for (int y = box.y_min; y < box.y_max; ++y) {
    const float* row = gray.ptr<float>(y);
    for (int x = box.x_min; x < box.x_max; ++x) {
      const bool inner = x >= box.x_min + ring && x < box.x_max - ring && y >= box.y_min + ring &&
                         y < box.y_max - ring;
      if (inner) continue;
      sum += row[x];
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

}  // namespace

TileGrid make_tiles(int width, int height, int tile_size, int overlap) {
  if (width < 1 || height < 1) throw Error("cannot tile an empty image");
  if (tile_size < 1) throw Error("tile size must be positive");
  if (overlap < 0 || overlap >= tile_size) {
    throw Error("tile overlap must satisfy 0 <= overlap < tile_size");
  }
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.overlap = overlap;
  grid.image_width = width;
  grid.image_height = height;
  const int stride = tile_size - overlap;
  const auto xs = axis_offsets(width, tile_size, stride);
  const auto ys = axis_offsets(height, tile_size, stride);
  int index = 0;
  for (int y : ys) {
    for (int x : xs) {
      grid.tiles.push_back(
          {index++, {x, y, x + std::min(tile_size, width), y + std::min(tile_size, height)}});
    }
  }
  return grid;
}

TileGrid make_tiles(const WideFieldImage& image, int tile_size, int overlap) {
  return make_tiles(image.width(), image.height(), tile_size, overlap);
}

RgbImage copy_region(const RgbImage& image, const BoundingBox& region) {
  if (!region.within(image.width, image.height)) throw Error("region outside image");
  RgbImage out(region.width(), region.height());
  const auto row_bytes = static_cast<std::size_t>(region.width()) * 3;
  for (int y = 0; y < region.height(); ++y) {
    std::copy_n(image.pixel(region.x_min, region.y_min + y), row_bytes, out.pixel(0, y));
  }
  return out;
}

int default_box_margin(int width, int height) {
  return 4 + static_cast<int>(std::lround(0.1 * std::max(width, height)));
}

std::vector<Detection> BlobBackend::detect(const RgbImage& tile, int) const {
  if (tile.empty()) return {};
  const cv::Mat gray = luma_plane(tile);
  cv::Mat smooth;
  cv::GaussianBlur(gray, smooth, cv::Size(), 1.0, 1.0, cv::BORDER_REFLECT);

  auto candidates = dog_extrema(gray, config_);
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.response != b.response) return a.response > b.response;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  const int w = tile.width, h = tile.height;
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  std::vector<std::uint8_t> claimed(visited.size(), 0);
  std::vector<Detection> out;

  for (const auto& c : candidates) {
    const int cx = std::clamp(static_cast<int>(std::lround(c.x)), 0, w - 1);
    const int cy = std::clamp(static_cast<int>(std::lround(c.y)), 0, h - 1);
    if (claimed[static_cast<std::size_t>(cy * w + cx)]) continue;
    const double radius = std::sqrt(2.0) * c.sigma;

    // Seed at the darkest smoothed pixel near the extremum.
    const int sr = std::max(1, static_cast<int>(radius / 2));
    int sx = cx, sy = cy;
    float darkest = smooth.at<float>(cy, cx);
    for (int y = std::max(0, cy - sr); y <= std::min(h - 1, cy + sr); ++y) {
      for (int x = std::max(0, cx - sr); x <= std::min(w - 1, cx + sr); ++x) {
        if (smooth.at<float>(y, x) < darkest) {
          darkest = smooth.at<float>(y, x);
          sx = x;
          sy = y;
        }
      }
    }
    if (claimed[static_cast<std::size_t>(sy * w + sx)]) continue;

    int half = static_cast<int>(std::ceil(2.5 * radius)) + 6;
    std::optional<Region> accepted;
    while (half <= config_.max_window) {
      const BoundingBox window =
          BoundingBox{sx - half, sy - half, sx + half + 1, sy + half + 1}.clipped(w, h);
      std::vector<float> border;
      for (int x = window.x_min; x < window.x_max; ++x) {
        border.push_back(smooth.at<float>(window.y_min, x));
        border.push_back(smooth.at<float>(window.y_max - 1, x));
      }
      for (int y = window.y_min; y < window.y_max; ++y) {
        border.push_back(smooth.at<float>(y, window.x_min));
        border.push_back(smooth.at<float>(y, window.x_max - 1));
      }
      const double background = median_of(border);
      const double contrast = background - darkest;
      if (contrast < config_.min_contrast) break;
      const auto threshold = static_cast<float>(background - 0.5 * contrast);
      Region region = grow_region(smooth, window, sx, sy, threshold, visited);
      // Touching the window is only a problem where the window is not the tile edge.
      const bool open_edge =
          (region.extent.x_min == window.x_min && window.x_min > 0) ||
          (region.extent.y_min == window.y_min && window.y_min > 0) ||
          (region.extent.x_max == window.x_max && window.x_max < w) ||
          (region.extent.y_max == window.y_max && window.y_max < h);
      if (!open_edge) {
        accepted = std::move(region);
        break;
      }
      half *= 2;
    }
    if (!accepted || accepted->pixels < config_.min_region_pixels) continue;

    const BoundingBox& e = accepted->extent;
    const int m = default_box_margin(e.width(), e.height());
    const BoundingBox box =
        BoundingBox{e.x_min - m, e.y_min - m, e.x_max + m, e.y_max + m}.clipped(w, h);
    if (!box.valid()) continue;

    double inside = 0.0;
    for (int idx : accepted->members) inside += gray.at<float>(idx / w, idx % w);
    inside /= accepted->pixels;
    const double frame = ring_mean(gray, box, std::min(3, std::max(1, std::min(box.width(), box.height()) / 2 - 1)));
    const double rel = frame > 1e-6 ? (frame - inside) / frame : 0.0;
    const double confidence =
        1.0 / (1.0 + std::exp(-(rel - config_.contrast_center) / config_.contrast_scale));

    for (int idx : accepted->members) claimed[static_cast<std::size_t>(idx)] = 1;
    out.push_back({box, std::clamp(confidence, 0.0, 1.0)});
  }
  return out;
}

ImportedBackend::ImportedBackend(const std::filesystem::path& path) : name_("imported") {
  for (const auto& rec : read_jsonl(path)) {
    const int tile = rec.at("tile").get<int>();
    if (tile < 0) throw Error("negative tile index in " + path.string());
    if (static_cast<std::size_t>(tile) >= per_tile_.size()) {
      per_tile_.resize(static_cast<std::size_t>(tile) + 1);
    }
    per_tile_[static_cast<std::size_t>(tile)].push_back(
        {rec.at("box").get<BoundingBox>(), rec.at("confidence").get<double>()});
  }
}

ImportedBackend::ImportedBackend(std::vector<std::vector<Detection>> per_tile, std::string name)
    : per_tile_(std::move(per_tile)), name_(std::move(name)) {}

std::vector<Detection> ImportedBackend::detect(const RgbImage& tile, int tile_index) const {
  if (tile_index < 0 || static_cast<std::size_t>(tile_index) >= per_tile_.size()) return {};
  auto dets = per_tile_[static_cast<std::size_t>(tile_index)];
  for (const auto& d : dets) {
    if (!d.box.within(tile.width, tile.height)) {
      throw Error("imported box lies outside tile " + std::to_string(tile_index));
    }
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
      throw Error("imported confidence outside [0,1] on tile " + std::to_string(tile_index));
    }
  }
  return dets;
}

std::unique_ptr<DetectorBackend> make_backend(const std::string& name,
                                              const std::filesystem::path& import_file) {
  if (name == "blob") return std::make_unique<BlobBackend>();
  if (name == "imported") {
    if (import_file.empty()) throw Error("imported backend needs a detections file");
    return std::make_unique<ImportedBackend>(import_file);
  }
  throw Error("unknown detector backend: " + name);
}

std::vector<LesionBox> detect_all(const WideFieldImage& image, const DetectorBackend& backend,
                                  const TileGrid& grid, const DetectOptions& options) {
  image.validate();
  if (grid.image_width != image.width() || grid.image_height != image.height()) {
    throw Error("tile grid was built for a different image size");
  }
  const auto run_tile = [&](const Tile& tile) {
    try {
      const RgbImage pixels = copy_region(image.image, tile.region);
      auto dets = backend.detect(pixels, tile.index);
      for (const auto& d : dets) {
        if (!d.box.within(pixels.width, pixels.height) || !(d.confidence >= 0.0 && d.confidence <= 1.0)) {
          throw Error("returned an invalid detection");
        }
      }
      return dets;
    } catch (const std::exception& e) {
      throw Error("backend '" + backend.name() + "' failed on tile " + std::to_string(tile.index) +
                  " at (" + std::to_string(tile.region.x_min) + "," +
                  std::to_string(tile.region.y_min) + "): " + e.what());
    }
  };

  std::vector<std::vector<Detection>> per_tile(grid.tiles.size());
  unsigned workers = options.workers ? options.workers : std::max(1U, std::thread::hardware_concurrency());
  if (!backend.thread_safe()) workers = 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < grid.tiles.size(); ++i) per_tile[i] = run_tile(grid.tiles[i]);
  } else {
    std::vector<std::future<std::vector<Detection>>> pending;
    std::size_t next = 0;
    while (next < grid.tiles.size()) {
      pending.clear();
      const std::size_t first = next;
      for (unsigned w = 0; w < workers && next < grid.tiles.size(); ++w, ++next) {
        pending.push_back(std::async(std::launch::async, run_tile, std::cref(grid.tiles[next])));
      }
      for (std::size_t i = 0; i < pending.size(); ++i) per_tile[first + i] = pending[i].get();
    }
  }

  std::vector<LesionBox> out;
  for (std::size_t t = 0; t < grid.tiles.size(); ++t) {
    const Tile& tile = grid.tiles[t];
    const int tw = tile.region.width(), th = tile.region.height();
    for (const auto& d : per_tile[t]) {
      if (options.drop_truncated) {
        const bool truncated = (d.box.x_min == 0 && tile.region.x_min > 0) ||
                               (d.box.y_min == 0 && tile.region.y_min > 0) ||
                               (d.box.x_max == tw && tile.region.x_max < grid.image_width) ||
                               (d.box.y_max == th && tile.region.y_max < grid.image_height);
        if (truncated) continue;
      }
      LesionBox lb;
      lb.lesion_id = make_lesion_id(image.patient_id, out.size());
      lb.box = d.box.translated(tile.region.x_min, tile.region.y_min);
      lb.confidence = d.confidence;
      lb.source_tile = tile.index;
      out.push_back(std::move(lb));
    }
  }
  return out;
}

std::vector<LesionBox> merge_nms(std::vector<LesionBox> boxes, double iou_threshold,
                                 const std::string& patient_id) {
  const std::string pid =
      !patient_id.empty() || boxes.empty() ? patient_id : patient_of_lesion(boxes.front().lesion_id);
  std::stable_sort(boxes.begin(), boxes.end(), [](const LesionBox& a, const LesionBox& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.box < b.box;
  });
  std::vector<LesionBox> kept;
  for (auto& candidate : boxes) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const LesionBox& k) {
      return iou(k.box, candidate.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(candidate));
  }
  for (std::size_t i = 0; i < kept.size(); ++i) kept[i].lesion_id = make_lesion_id(pid, i);
  return kept;
}

std::vector<LesionBox> filter_confidence(std::vector<LesionBox> boxes, double min_confidence) {
  std::erase_if(boxes, [&](const LesionBox& b) { return b.confidence < min_confidence; });
  return boxes;
}

MatchResult greedy_match(const std::vector<LesionBox>& predictions,
                         const std::vector<BoundingBox>& truth, double iou_threshold) {
  MatchResult r;
  r.order.resize(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) r.order[i] = i;
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    if (predictions[a].confidence != predictions[b].confidence) {
      return predictions[a].confidence > predictions[b].confidence;
    }
    return predictions[a].box < predictions[b].box;
  });
  std::vector<bool> taken(truth.size(), false);
  r.matched.assign(predictions.size(), false);
  for (std::size_t k = 0; k < r.order.size(); ++k) {
    const auto& p = predictions[r.order[k]];
    double best = iou_threshold;
    std::ptrdiff_t best_j = -1;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (taken[j]) continue;
      const double v = iou(p.box, truth[j]);
      if (v >= best && (best_j < 0 || v > best)) {
        best = v;
        best_j = static_cast<std::ptrdiff_t>(j);
      }
    }
    if (best_j >= 0) {
      taken[static_cast<std::size_t>(best_j)] = true;
      r.matched[k] = true;
    }
  }
  return r;
}

double average_precision_101(const std::vector<bool>& ranked_matches, std::size_t n_truth) {
  if (n_truth == 0) return ranked_matches.empty() ? 1.0 : 0.0;
  const std::size_t n = ranked_matches.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_matches[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_truth);
  }
  // Precision envelope, non-increasing in rank.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level - 1e-12);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

DetectionMetrics evaluate_detection(const std::vector<LesionBox>& predictions,
                                    const std::vector<GroundTruthLesion>& truth,
                                    double confidence_threshold) {
  std::vector<BoundingBox> truth_boxes;
  truth_boxes.reserve(truth.size());
  for (const auto& t : truth) truth_boxes.push_back(t.box);

  DetectionMetrics m;
  const auto recall_at = [&](const MatchResult& match, double threshold) {
    std::size_t tp = 0;
    for (std::size_t k = 0; k < match.order.size(); ++k) {
      if (predictions[match.order[k]].confidence < threshold) break;
      if (match.matched[k]) ++tp;
    }
    return tp;
  };

  const MatchResult m50 = greedy_match(predictions, truth_boxes, 0.50);
  const MatchResult m75 = greedy_match(predictions, truth_boxes, 0.75);

  std::size_t kept = 0;
  for (const auto& p : predictions) kept += p.confidence >= confidence_threshold ? 1 : 0;
  const std::size_t tp = recall_at(m50, confidence_threshold);
  m.true_positives = static_cast<int>(tp);
  m.false_positives = static_cast<int>(kept - tp);
  m.false_negatives = static_cast<int>(truth.size() - tp);
  if (truth.empty()) {
    m.recall = 1.0;
    m.recall_undefined = true;
  } else {
    m.recall = static_cast<double>(tp) / static_cast<double>(truth.size());
  }
  if (kept == 0) {
    m.precision = 0.0;
    m.precision_undefined = true;
  } else {
    m.precision = static_cast<double>(tp) / static_cast<double>(kept);
  }

  const auto mean_recall = [&](const MatchResult& match) {
    if (truth.empty()) return 1.0;
    double sum = 0.0;
    for (int c = 0; c <= 100; ++c) {
      sum += static_cast<double>(recall_at(match, c / 100.0)) / static_cast<double>(truth.size());
    }
    return sum / 101.0;
  };
  m.ap50 = average_precision_101(m50.matched, truth.size());
  m.ap75 = average_precision_101(m75.matched, truth.size());
  m.ar50 = mean_recall(m50);
  m.ar75 = mean_recall(m75);
  return m;
}

std::vector<LesionCrop> extract_crops(const WideFieldImage& image,
                                      const std::vector<LesionBox>& boxes) {
  std::vector<LesionCrop> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    if (!b.box.within(image.width(), image.height())) {
      throw Error("box of lesion " + b.lesion_id + " lies outside the image");
    }
    out.push_back({b.lesion_id, copy_region(image.image, b.box)});
  }
  return out;
}

void write_detections(const std::filesystem::path& path, const DetectionsHeader& header,
                      const std::vector<LesionBox>& lesions) {
  std::vector<Json> records;
  records.reserve(lesions.size() + 1);
  records.push_back({{"type", "header"},
                     {"image_id", header.image_id},
                     {"width", header.width},
                     {"height", header.height},
                     {"tile_size", header.tile_size},
                     {"overlap", header.overlap},
                     {"nms_iou", header.nms_iou},
                     {"min_confidence", header.min_confidence},
                     {"backend", header.backend}});
  for (const auto& l : lesions) {
    Json j = l;
    j["type"] = "lesion";
    records.push_back(std::move(j));
  }
  write_jsonl(path, records);
}

DetectionsFile read_detections(const std::filesystem::path& path) {
  DetectionsFile f;
  bool have_header = false;
  for (const auto& rec : read_jsonl(path)) {
    const std::string type = rec.value("type", "lesion");
    if (type == "header") {
      have_header = true;
      f.header.image_id = rec.value("image_id", "");
      f.header.width = rec.value("width", 0);
      f.header.height = rec.value("height", 0);
      f.header.tile_size = rec.value("tile_size", kDefaultTileSize);
      f.header.overlap = rec.value("overlap", kDefaultOverlap);
      f.header.nms_iou = rec.value("nms_iou", kDefaultNmsIou);
      f.header.min_confidence = rec.value("min_confidence", kDefaultConfidenceThreshold);
      f.header.backend = rec.value("backend", "blob");
    } else {
      f.lesions.push_back(rec.get<LesionBox>());
    }
  }
  if (!have_header) throw Error(path.string() + ": missing detections header record");
  return f;
}

}  // namespace udscreen::detection
