#include "udscreen/embedder.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

namespace udscreen {
namespace {

cv::Mat as_mat(FloatImage& img) { return cv::Mat(img.height, img.width, CV_32FC3, img.data.data()); }
cv::Mat as_mat(const FloatImage& img) {
  return cv::Mat(img.height, img.width, CV_32FC3, const_cast<float*>(img.data.data()));
}

FloatImage resized(const FloatImage& src, const BoundingBox& region, int size) {
  FloatImage out(size, size);
  const cv::Mat roi = as_mat(src)(cv::Rect(region.x_min, region.y_min, region.width(), region.height()));
  cv::Mat dst = as_mat(out);
  if (region.width() == size && region.height() == size) {
    roi.copyTo(dst);
  } else {
    cv::resize(roi, dst, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  }
  return out;
}

double hue_degrees(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  if (d <= 0.0) return 0.0;
  double h;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
  return h < 0.0 ? h + 360.0 : h;
}

}  // namespace

PreprocessedCrop preprocess(const std::string& lesion_id, const RgbImage& crop,
                            const std::array<double, 3>& frame_mean_rgb) {
  if (crop.empty()) throw Error("cannot preprocess zero-area crop of lesion " + lesion_id);
  const int side = std::max(crop.width, crop.height);
  FloatImage square(side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      float* p = square.pixel(x, y);
      for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(frame_mean_rgb[static_cast<std::size_t>(c)]);
    }
  }
  const int ox = (side - crop.width) / 2;
  const int oy = (side - crop.height) / 2;
  for (int y = 0; y < crop.height; ++y) {
    for (int x = 0; x < crop.width; ++x) {
      const std::uint8_t* s = crop.pixel(x, y);
      float* d = square.pixel(x + ox, y + oy);
      for (int c = 0; c < 3; ++c) d[c] = static_cast<float>(s[c]) / 255.0f;
    }
  }

  PreprocessedCrop out;
  out.lesion_id = lesion_id;
  out.source_width = crop.width;
  out.source_height = crop.height;
  out.frame_mean_rgb = frame_mean_rgb;
  if (side <= kCropSize) {
    out.pixels = resized(square, {0, 0, side, side}, kCropSize);
  } else {
    const int off = (side - kCropSize) / 2;
    out.pixels = resized(square, {off, off, off + kCropSize, off + kCropSize}, kCropSize);
  }
  return out;
}

void AugmentationConfig::validate() const {
  for (const auto* r : {&global_crop_scale, &local_crop_scale}) {
    if (!((*r)[0] > 0.0 && (*r)[0] <= (*r)[1] && (*r)[1] <= 1.0)) {
      throw Error("crop scale range must satisfy 0 < lo <= hi <= 1");
    }
  }
  if (brightness_jitter < 0.0 || brightness_jitter >= 1.0) throw Error("brightness_jitter must be in [0,1)");
  if (color_jitter() < 0.0 || color_jitter() >= 1.0) throw Error("color jitter amplitude must be in [0,1)");
  if (n_global != 2) throw Error("n_global must be 2");
  if (n_local < 0) throw Error("n_local must be >= 0");
}

FloatImage augment(const FloatImage& image, const AugmentationConfig& config, ViewKind kind,
                   std::mt19937_64& rng, AugmentTrace* trace) {
  const auto& range = kind == ViewKind::global ? config.global_crop_scale : config.local_crop_scale;
  const int size = kind == ViewKind::global ? kCropSize : kLocalViewSize;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double scale = range[0] + (range[1] - range[0]) * unit(rng);
  const int min_side = std::min(image.width, image.height);
  const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(scale) * min_side)), 1, min_side);
  const int x0 = static_cast<int>(unit(rng) * (image.width - side + 1));
  const int y0 = static_cast<int>(unit(rng) * (image.height - side + 1));
  AugmentTrace t;
  t.crop = {x0, y0, x0 + side, y0 + side};
  const double b = config.brightness_jitter;
  t.brightness = 1.0 - b + 2.0 * b * unit(rng);
  const double cj = config.color_jitter();
  for (auto& f : t.channel) f = 1.0 - cj + 2.0 * cj * unit(rng);

  FloatImage out = resized(image, t.crop, size);
  std::array<float, 3> gain{};
  for (int c = 0; c < 3; ++c) gain[static_cast<std::size_t>(c)] = static_cast<float>(t.brightness * t.channel[static_cast<std::size_t>(c)]);
  for (std::size_t i = 0; i < out.data.size(); i += 3) {
    for (std::size_t c = 0; c < 3; ++c) out.data[i + c] = std::clamp(out.data[i + c] * gain[c], 0.0f, 1.0f);
  }
  if (trace) *trace = t;
  return out;
}

FloatImage augment(const FloatImage& image, const AugmentationConfig& config, ViewKind kind,
                   AugmentTrace* trace) {
  std::mt19937_64 rng(config.rng_seed);
  return augment(image, config, kind, rng, trace);
}

std::string to_string(EmbedderTag tag) {
  return tag == EmbedderTag::handcrafted ? "handcrafted" : "selfdistill";
}

EmbedderTag embedder_tag_from_string(const std::string& s) {
  if (s == "handcrafted") return EmbedderTag::handcrafted;
  if (s == "selfdistill") return EmbedderTag::selfdistill;
  throw Error("unknown embedder tag '" + s + "'");
}

void to_json(Json& j, const LesionEmbedding& e) {
  j = Json{{"lesion_id", e.lesion_id}, {"embedder_tag", to_string(e.tag)}, {"vector", e.vector}};
}

void from_json(const Json& j, LesionEmbedding& e) {
  e.lesion_id = j.at("lesion_id").get<std::string>();
  e.tag = embedder_tag_from_string(j.at("embedder_tag").get<std::string>());
  e.vector = j.at("vector").get<std::vector<double>>();
}

void write_embeddings(const std::filesystem::path& path, const std::vector<LesionEmbedding>& e) {
  std::vector<Json> records;
  records.reserve(e.size());
  for (const auto& x : e) records.emplace_back(x);
  write_jsonl(path, records);
}

std::vector<LesionEmbedding> read_embeddings(const std::filesystem::path& path) {
  std::vector<LesionEmbedding> out;
  for (const auto& rec : read_jsonl(path)) out.push_back(rec.get<LesionEmbedding>());
  if (!out.empty()) {
    const auto d = out.front().vector.size();
    for (const auto& x : out) {
      if (x.vector.size() != d) throw Error("embedding dimensions differ in " + path.string());
    }
  }
  return out;
}

void l2_normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error("cannot normalize a zero or non-finite vector");
  for (double& x : v) x /= n;
}

std::array<double, kHandcraftedFeatures> handcrafted_features(const PreprocessedCrop& crop) {
  const FloatImage& im = crop.pixels;
  const int w = im.width, h = im.height;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (n == 0) throw Error("empty preprocessed crop");

  std::vector<double> gray(n);
  for (std::size_t i = 0; i < n; ++i) {
    gray[i] = luma(im.data[3 * i], im.data[3 * i + 1], im.data[3 * i + 2]);
  }
  const auto& fm = crop.frame_mean_rgb;
  const double frame = luma(fm[0], fm[1], fm[2]);
  std::vector<double> sorted = gray;
  const auto k = static_cast<std::ptrdiff_t>(0.02 * static_cast<double>(n - 1));
  std::nth_element(sorted.begin(), sorted.begin() + k, sorted.end());
  const double dark = sorted[static_cast<std::size_t>(k)];

  // Lesion pixels: darker than halfway between the skin and the darkest 2%.
  const bool low_contrast = frame - dark < 0.02;
  const double cut = 0.5 * (frame + dark);
  std::vector<char> mask(n);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = low_contrast || gray[i] < cut;
    count += mask[i] ? 1 : 0;
  }

  std::array<double, kHandcraftedFeatures> f{};
  std::array<double, 4> sum{}, sq{};
  std::array<double, 8> hist{};
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double v[4] = {im.data[3 * i], im.data[3 * i + 1], im.data[3 * i + 2], gray[i]};
    for (std::size_t c = 0; c < 4; ++c) {
      sum[c] += v[c];
      sq[c] += v[c] * v[c];
    }
    const double hue = hue_degrees(v[0], v[1], v[2]);
    hist[std::min<std::size_t>(7, static_cast<std::size_t>(hue / 45.0))] += 1.0;
  }
  const double cnt = static_cast<double>(count);
  for (std::size_t c = 0; c < 4; ++c) {
    const double mean = sum[c] / cnt;
    const double var = std::max(0.0, sq[c] / cnt - mean * mean);
    f[2 * c] = mean;
    f[2 * c + 1] = std::sqrt(var);
  }

  // Area in native pixels; the crop was upscaled by kCropSize / side when small.
  const int side = std::max(crop.source_width, crop.source_height);
  const double scale = side > 0 && side < w ? static_cast<double>(w) / side : 1.0;
  const double native_area = cnt / (scale * scale);
  f[8] = std::log1p(native_area) / std::log1p(static_cast<double>(kCropSize) * kCropSize);

  // Eccentricity of darkness-weighted second moments.
  double m0 = 0, mx = 0, my = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double wt = std::max(0.0, frame - gray[static_cast<std::size_t>(y * w + x)]);
      m0 += wt;
      mx += wt * x;
      my += wt * y;
    }
  }
  if (m0 > 0.0) {
    mx /= m0;
    my /= m0;
    double cxx = 0, cyy = 0, cxy = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double wt = std::max(0.0, frame - gray[static_cast<std::size_t>(y * w + x)]);
        cxx += wt * (x - mx) * (x - mx);
        cyy += wt * (y - my) * (y - my);
        cxy += wt * (x - mx) * (y - my);
      }
    }
    const double tr = 0.5 * (cxx + cyy);
    const double det = std::sqrt(std::max(0.0, 0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy));
    const double l1 = tr + det, l2 = tr - det;
    f[9] = l1 > 0.0 ? std::sqrt(std::max(0.0, 1.0 - l2 / l1)) : 0.0;
  }

  f[10] = frame > 0.0 ? (frame - f[6]) / frame : 0.0;
  for (std::size_t b = 0; b < 8; ++b) f[11 + b] = hist[b] / cnt;
  return f;
}

LesionEmbedding embed_handcrafted(const PreprocessedCrop& crop, int dim) {
  if (dim < kHandcraftedFeatures) throw Error("embedding dimension below the handcrafted feature count");
  const auto f = handcrafted_features(crop);
  LesionEmbedding e;
  e.lesion_id = crop.lesion_id;
  e.tag = EmbedderTag::handcrafted;
  e.vector.assign(static_cast<std::size_t>(dim), 0.0);
  std::copy(f.begin(), f.end(), e.vector.begin());
  l2_normalize(e.vector);
  return e;
}

}  // namespace udscreen
