#include "udscreen/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "udscreen/image_io.hpp"

namespace udscreen::synth {
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(Rng& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Approximately N(0,1)-shaped per-pixel noise in [-2,2], hash based so the
// background does not consume the main generator stream.
double pixel_noise(std::uint64_t seed, int x, int y, int c) {
  const std::uint64_t h = splitmix(seed ^ (static_cast<std::uint64_t>(y) << 32) ^
                                   (static_cast<std::uint64_t>(x) << 2) ^
                                   static_cast<std::uint64_t>(c));
  const double u1 = static_cast<double>(h & 0xffffffffULL) / 4294967296.0;
  const double u2 = static_cast<double>(h >> 32) / 4294967296.0;
  return (u1 + u2 - 1.0) * 2.0;
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h_deg, double s, double v) {
  h_deg = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double hp = h_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0};
}

// Periodic 1D gradient noise over the angle, roughly in [-1,1].
class BorderNoise {
 public:
  BorderNoise(Rng& rng, int cells) : grads_(static_cast<std::size_t>(cells)) {
    for (auto& g : grads_) g = uniform(rng, -1.0, 1.0);
  }
  double operator()(double theta) const {
    const double n = static_cast<double>(grads_.size());
    double t = theta / (2.0 * std::numbers::pi) * n;
    t = std::fmod(std::fmod(t, n) + n, n);
    const auto i = static_cast<std::size_t>(t) % grads_.size();
    const auto j = (i + 1) % grads_.size();
    const double f = t - std::floor(t);
    const double fade = f * f * f * (f * (f * 6 - 15) + 10);
    const double a = grads_[i] * f;
    const double b = grads_[j] * (f - 1.0);
    return 2.0 * (a + (b - a) * fade);
  }

 private:
  std::vector<double> grads_;
};

struct LesionSpec {
  LesionKind kind;
  double diameter;
  double axis_ratio;
  double rotation;
  double irregularity;
  double hue, saturation, value;
  double cx = 0, cy = 0;
};

double bounding_radius(const LesionSpec& s) {
  return 0.5 * s.diameter * std::sqrt(s.axis_ratio) * (1.0 + 1.6 * s.irregularity) + 1.0;
}

int box_margin(int w, int h) { return 4 + static_cast<int>(std::lround(0.1 * std::max(w, h))); }

struct PlacedLesion {
  LesionSpec spec;
  BoundingBox keepout;
};

void paint_background(RgbImage& img, Rng& rng, std::uint64_t seed) {
  const double base_r = uniform(rng, 205.0, 235.0);
  const Rgb base{base_r, base_r * uniform(rng, 0.74, 0.82), base_r * uniform(rng, 0.62, 0.70)};
  constexpr int kSpacing = 512;
  const int gw = img.width / kSpacing + 2;
  const int gh = img.height / kSpacing + 2;
  std::vector<double> field(static_cast<std::size_t>(gw * gh));
  for (auto& f : field) f = normal(rng, 1.0, 0.025);
  for (int y = 0; y < img.height; ++y) {
    const double fy = static_cast<double>(y) / kSpacing;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int x = 0; x < img.width; ++x) {
      const double fx = static_cast<double>(x) / kSpacing;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      const auto at = [&](int gx, int gy) { return field[static_cast<std::size_t>(gy * gw + gx)]; };
      const double shade = (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x0 + 1, y0)) +
                           ty * ((1 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
      auto* p = img.pixel(x, y);
      const double vals[3] = {base.r, base.g, base.b};
      for (int c = 0; c < 3; ++c) {
        const double v = vals[c] * shade + 2.0 * pixel_noise(seed, x, y, c);
        p[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
}

// Renders one lesion and returns its coverage bounding box (coverage >= 0.5).
BoundingBox paint_lesion(RgbImage& img, const LesionSpec& s, Rng& rng, std::uint64_t seed) {
  BorderNoise noise(rng, 6);
  const Rgb color = hsv_to_rgb(s.hue, s.saturation, s.value);
  const double r0 = 0.5 * s.diameter;
  const double a = r0 * std::sqrt(s.axis_ratio);
  const double b = r0 / std::sqrt(s.axis_ratio);
  const double cos_r = std::cos(s.rotation), sin_r = std::sin(s.rotation);
  const double reach = bounding_radius(s) + 1.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - reach)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(s.cx + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - reach)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(s.cy + reach)));
  const std::uint64_t tex_seed = splitmix(seed ^ static_cast<std::uint64_t>(s.cx * 7919 + s.cy));
  BoundingBox cover{img.width, img.height, 0, 0};
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - s.cx;
      const double dy = y + 0.5 - s.cy;
      const double u = dx * cos_r + dy * sin_r;
      const double v = -dx * sin_r + dy * cos_r;
      const double rho = std::hypot(u / a, v / b);
      const double theta = std::atan2(v / b, u / a);
      const double edge = 1.0 + s.irregularity * noise(theta);
      const double coverage = std::clamp(0.5 + (edge - rho) * std::min(a, b), 0.0, 1.0);
      if (coverage <= 0.0) continue;
      if (coverage >= 0.5) {
        cover.x_min = std::min(cover.x_min, x);
        cover.y_min = std::min(cover.y_min, y);
        cover.x_max = std::max(cover.x_max, x + 1);
        cover.y_max = std::max(cover.y_max, y + 1);
      }
      const double rel = std::min(rho / edge, 1.0);
      const double shade = 0.92 + 0.16 * rel * rel;
      auto* p = img.pixel(x, y);
      const double vals[3] = {color.r, color.g, color.b};
      for (int c = 0; c < 3; ++c) {
        const double lesion = vals[c] * shade * (1.0 + 0.03 * pixel_noise(tex_seed, x, y, c));
        const double v = (1.0 - coverage) * p[c] + coverage * lesion;
        p[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  if (!cover.valid()) {
    // Sub-pixel lesion; fall back to the center pixel.
    const int cx = std::clamp(static_cast<int>(s.cx), 0, img.width - 1);
    const int cy = std::clamp(static_cast<int>(s.cy), 0, img.height - 1);
    cover = {cx, cy, cx + 1, cy + 1};
  }
  return cover;
}

void paint_hair(RgbImage& img, Rng& rng, double density) {
  const auto strokes = static_cast<int>(
      std::lround(density * static_cast<double>(img.width) * img.height / 40000.0));
  for (int s = 0; s < strokes; ++s) {
    const double len = uniform(rng, 80.0, 250.0);
    const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double px = uniform(rng, 0.0, img.width), py = uniform(rng, 0.0, img.height);
    const double qx = px + len * std::cos(ang), qy = py + len * std::sin(ang);
    const double c1x = px + (qx - px) / 3 + normal(rng, 0, len / 6);
    const double c1y = py + (qy - py) / 3 + normal(rng, 0, len / 6);
    const double c2x = px + 2 * (qx - px) / 3 + normal(rng, 0, len / 6);
    const double c2y = py + 2 * (qy - py) / 3 + normal(rng, 0, len / 6);
    const double width = uniform(rng, 0.8, 1.4);
    const int samples = static_cast<int>(len * 2);
    for (int i = 0; i <= samples; ++i) {
      const double t = static_cast<double>(i) / samples, mt = 1 - t;
      const double x = mt * mt * mt * px + 3 * mt * mt * t * c1x + 3 * mt * t * t * c2x + t * t * t * qx;
      const double y = mt * mt * mt * py + 3 * mt * mt * t * c1y + 3 * mt * t * t * c2y + t * t * t * qy;
      for (int yy = static_cast<int>(y - 2); yy <= static_cast<int>(y + 2); ++yy) {
        for (int xx = static_cast<int>(x - 2); xx <= static_cast<int>(x + 2); ++xx) {
          if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) continue;
          const double d = std::hypot(xx + 0.5 - x, yy + 0.5 - y);
          const double alpha = 0.85 * std::clamp(width - d + 0.5, 0.0, 1.0);
          if (alpha <= 0) continue;
          auto* p = img.pixel(xx, yy);
          const double hair[3] = {60, 45, 35};
          for (int c = 0; c < 3; ++c) {
            const double v = (1 - alpha) * p[c] + alpha * hair[c];
            p[c] = static_cast<std::uint8_t>(std::min(static_cast<double>(p[c]), std::round(v)));
          }
        }
      }
    }
  }
}

bool center_in(const BoundingBox& box, const BoundingBox& region) {
  const double cx = 0.5 * (box.x_min + box.x_max);
  const double cy = 0.5 * (box.y_min + box.y_max);
  return cx >= region.x_min && cx < region.x_max && cy >= region.y_min && cy < region.y_max;
}

}  // namespace

void SynthConfig::validate() const {
  if (width < 64 || height < 64) throw Error("synth image must be at least 64x64");
  if (n_lesions < 0 || n_outliers < 0) throw Error("lesion counts must be non-negative");
  if (n_outliers > n_lesions) throw Error("n_outliers exceeds n_lesions");
  if (sigma_area < 0.0) throw Error("sigma_area must be non-negative");
  if (hair_density < 0.0 || hair_density > 1.0) throw Error("hair_density must be in [0,1]");
  if (freckle_fraction < 0.0 || freckle_fraction > 1.0) throw Error("freckle_fraction must be in [0,1]");
  for (const auto& s : shadow_regions) {
    if (!(s.attenuation > 0.0 && s.attenuation < 1.0)) {
      throw Error("shadow attenuation must be in (0,1)");
    }
    if (!s.box.valid()) throw Error("shadow region box is invalid");
  }
}

void to_json(Json& j, const SynthConfig& c) {
  Json shadows = Json::array();
  for (const auto& s : c.shadow_regions) {
    shadows.push_back({{"box", s.box}, {"attenuation", s.attenuation}});
  }
  j = Json{{"patient_id", c.patient_id},
           {"seed", c.seed},
           {"image_size", Json::array({c.width, c.height})},
           {"n_lesions", c.n_lesions},
           {"lesion_area_distribution", {{"mu_area", c.mu_area}, {"sigma_area", c.sigma_area}}},
           {"n_outliers", c.n_outliers},
           {"shadow_regions", shadows},
           {"hair_density", c.hair_density},
           {"freckle_fraction", c.freckle_fraction},
           {"outliers_outside_shadow", c.outliers_outside_shadow}};
}

void from_json(const Json& j, SynthConfig& c) {
  c = SynthConfig{};
  c.patient_id = j.value("patient_id", c.patient_id);
  c.seed = j.value("seed", c.seed);
  if (j.contains("image_size")) {
    c.width = j.at("image_size").at(0).get<int>();
    c.height = j.at("image_size").at(1).get<int>();
  }
  c.n_lesions = j.value("n_lesions", c.n_lesions);
  if (j.contains("lesion_area_distribution")) {
    const auto& d = j.at("lesion_area_distribution");
    c.mu_area = d.value("mu_area", c.mu_area);
    c.sigma_area = d.value("sigma_area", c.sigma_area);
  }
  c.n_outliers = j.value("n_outliers", c.n_outliers);
  c.shadow_regions.clear();
  for (const auto& s : j.value("shadow_regions", Json::array())) {
    c.shadow_regions.push_back({s.at("box").get<BoundingBox>(), s.at("attenuation").get<double>()});
  }
  c.hair_density = j.value("hair_density", c.hair_density);
  c.freckle_fraction = j.value("freckle_fraction", c.freckle_fraction);
  c.outliers_outside_shadow = j.value("outliers_outside_shadow", c.outliers_outside_shadow);
}

SynthConfig sample_patient_config(std::uint64_t seed, int width, int height) {
  Rng rng(splitmix(seed ^ 0x5eedULL));
  SynthConfig c;
  c.seed = seed;
  c.patient_id = "P" + std::to_string(seed);
  c.width = width;
  c.height = height;
  const double count = std::exp(normal(rng, std::log(220.0), 0.55));
  c.n_lesions = static_cast<int>(std::clamp(std::lround(count), 20L, 900L));
  c.mu_area = std::log(uniform(rng, 220.0, 380.0));
  c.sigma_area = uniform(rng, 0.5, 0.7);
  return c;
}

DiameterMoments nevus_diameter_moments(const SynthConfig& c) {
  // d = 2 sqrt(A / pi), sqrt(A) ~ LogNormal(mu/2, sigma/2).
  const double k = 2.0 / std::sqrt(std::numbers::pi);
  const double m = c.mu_area / 2.0, s = c.sigma_area / 2.0;
  const double mean = k * std::exp(m + s * s / 2.0);
  const double sd = mean * std::sqrt(std::exp(s * s) - 1.0);
  return {mean, sd};
}

WideFieldImage generate_dossier(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  WideFieldImage out;
  out.patient_id = config.patient_id;
  out.image = RgbImage(config.width, config.height);
  const std::uint64_t noise_seed = splitmix(config.seed);
  paint_background(out.image, rng, noise_seed);

  // Patient-specific nevus pigment.
  const double patient_hue = uniform(rng, 18.0, 28.0);
  const double patient_sat = uniform(rng, 0.45, 0.55);
  const double patient_val = uniform(rng, 0.40, 0.50);
  const auto dmom = nevus_diameter_moments(config);

  const int n_regular = config.n_lesions - config.n_outliers;
  const int n_freckles = static_cast<int>(std::lround(config.freckle_fraction * n_regular));
  std::vector<LesionSpec> specs;
  specs.reserve(static_cast<std::size_t>(config.n_lesions));
  for (int i = 0; i < config.n_outliers; ++i) {
    LesionSpec s{};
    s.kind = LesionKind::planted_outlier;
    s.diameter = dmom.mean + uniform(rng, 5.0, 7.0) * dmom.stddev;
    s.axis_ratio = uniform(rng, 1.0, 1.3);
    s.rotation = uniform(rng, 0.0, std::numbers::pi);
    s.irregularity = kNevusIrregularityMean + uniform(rng, 5.0, 7.0) * kNevusIrregularitySd;
    if (rng() & 1U) {
      s.hue = uniform(rng, 215.0, 240.0);  // blue-black
      s.saturation = uniform(rng, 0.25, 0.35);
      s.value = uniform(rng, 0.22, 0.30);
    } else {
      s.hue = uniform(rng, 330.0, 345.0);  // violaceous
      s.saturation = uniform(rng, 0.40, 0.50);
      s.value = uniform(rng, 0.32, 0.38);
    }
    specs.push_back(s);
  }
  for (int i = 0; i < n_regular; ++i) {
    LesionSpec s{};
    const bool freckle = i < n_freckles;
    s.kind = freckle ? LesionKind::freckle : LesionKind::nevus;
    const double area = freckle ? std::exp(normal(rng, std::log(110.0), 0.35))
                                : std::exp(normal(rng, config.mu_area, config.sigma_area));
    s.diameter = std::max(4.0, 2.0 * std::sqrt(area / std::numbers::pi));
    s.axis_ratio = uniform(rng, 1.0, 1.3);
    s.rotation = uniform(rng, 0.0, std::numbers::pi);
    s.irregularity = std::max(0.0, normal(rng, kNevusIrregularityMean, kNevusIrregularitySd));
    s.hue = patient_hue + normal(rng, 0.0, kNevusHueSd);
    if (freckle) {
      s.saturation = std::clamp(normal(rng, patient_sat - 0.1, 0.04), 0.1, 1.0);
      s.value = std::clamp(normal(rng, patient_val + 0.24, 0.04), 0.1, 0.95);
    } else {
      s.saturation = std::clamp(normal(rng, patient_sat, 0.04), 0.1, 1.0);
      s.value = std::clamp(normal(rng, patient_val, 0.04), 0.1, 0.95);
    }
    specs.push_back(s);
  }

  constexpr int kGap = 8;
  constexpr int kMaxAttempts = 1000;
  std::vector<PlacedLesion> placed;
  placed.reserve(specs.size());
  for (auto& s : specs) {
    const double reach = bounding_radius(s);
    const int pad = static_cast<int>(std::ceil(reach)) + box_margin(static_cast<int>(2 * reach),
                                                                    static_cast<int>(2 * reach)) + 2;
    if (2 * pad >= config.width || 2 * pad >= config.height) {
      throw Error("lesion too large for the configured image size");
    }
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      s.cx = uniform(rng, pad, config.width - pad);
      s.cy = uniform(rng, pad, config.height - pad);
      const BoundingBox keepout{static_cast<int>(s.cx) - pad - kGap, static_cast<int>(s.cy) - pad - kGap,
                                static_cast<int>(s.cx) + pad + kGap, static_cast<int>(s.cy) + pad + kGap};
      ok = std::none_of(placed.begin(), placed.end(), [&](const PlacedLesion& p) {
        return intersection_area(p.keepout, keepout) > 0;
      });
      if (ok && s.kind == LesionKind::planted_outlier && config.outliers_outside_shadow) {
        ok = std::none_of(config.shadow_regions.begin(), config.shadow_regions.end(),
                          [&](const ShadowRegion& r) { return intersection_area(r.box, keepout) > 0; });
      }
      if (ok) placed.push_back({s, keepout});
    }
    if (!ok) {
      throw Error("could not place lesion " + std::to_string(placed.size()) + " after " +
                  std::to_string(kMaxAttempts) + " attempts; reduce n_lesions or lesion size");
    }
  }

  std::vector<GroundTruthLesion> truth;
  truth.reserve(placed.size());
  for (const auto& p : placed) {
    const BoundingBox cover = paint_lesion(out.image, p.spec, rng, noise_seed);
    const int m = box_margin(cover.width(), cover.height());
    GroundTruthLesion g;
    g.box = BoundingBox{cover.x_min - m, cover.y_min - m, cover.x_max + m, cover.y_max + m}.clipped(
        config.width, config.height);
    g.kind = p.spec.kind;
    const Rgb rgb = hsv_to_rgb(p.spec.hue, p.spec.saturation, p.spec.value);
    g.attributes = LesionAttributes{p.spec.diameter, p.spec.irregularity,
                                    std::fmod(p.spec.hue + 360.0, 360.0), rgb.r, rgb.g, rgb.b};
    truth.push_back(g);
  }

  if (config.hair_density > 0.0) paint_hair(out.image, rng, config.hair_density);

  for (const auto& region : config.shadow_regions) {
    const BoundingBox r = region.box.clipped(config.width, config.height);
    for (int y = r.y_min; y < r.y_max; ++y) {
      for (int x = r.x_min; x < r.x_max; ++x) {
        auto* p = out.image.pixel(x, y);
        for (int c = 0; c < 3; ++c) {
          p[c] = static_cast<std::uint8_t>(std::lround(p[c] * region.attenuation));
        }
      }
    }
  }
  for (auto& g : truth) {
    g.in_shadow = std::any_of(config.shadow_regions.begin(), config.shadow_regions.end(),
                              [&](const ShadowRegion& r) { return center_in(g.box, r.box); });
  }
  out.ground_truth = std::move(truth);
  return out;
}

void write_dossier(const std::filesystem::path& dir, const WideFieldImage& image,
                   const SynthConfig& config) {
  std::filesystem::create_directories(dir);
  write_png(dir / (image.patient_id + ".png"), image.image);
  Json sidecar{{"patient_id", image.patient_id},
               {"width", image.width()},
               {"height", image.height()},
               {"config", config},
               {"ground_truth", image.ground_truth.value_or(std::vector<GroundTruthLesion>{})}};
  write_json_file(dir / (image.patient_id + ".json"), sidecar);
}

WideFieldImage read_dossier(const std::filesystem::path& png_path) {
  WideFieldImage out;
  out.image = read_png(png_path);
  out.patient_id = png_path.stem().string();
  auto sidecar = png_path;
  sidecar.replace_extension(".json");
  if (std::filesystem::exists(sidecar)) {
    const Json j = read_json_file(sidecar);
    out.patient_id = j.value("patient_id", out.patient_id);
    out.ground_truth = j.at("ground_truth").get<std::vector<GroundTruthLesion>>();
  }
  return out;
}

}  // namespace udscreen::synth
