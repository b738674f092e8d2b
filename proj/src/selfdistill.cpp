#include "udscreen/selfdistill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <mutex>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace udscreen {
namespace {

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

int conv_out(int s) { return (s - 1) / 2 + 1; }

// Rows are (image, y, x) positions, columns are channels.
template <typename S>
MatT<S> pool_stem(const std::vector<const FloatImage*>& images, int pool, int& side) {
  const int s_in = images.front()->width;
  for (const auto* im : images) {
    if (im->width != s_in || im->height != s_in) throw Error("views in one batch must share a square size");
  }
  if (s_in % pool != 0) throw Error("view size " + std::to_string(s_in) + " is not divisible by the stem pool");
  side = s_in / pool;
  const Eigen::Index per = static_cast<Eigen::Index>(side) * side;
  MatT<S> x(per * static_cast<Eigen::Index>(images.size()), 3);
  const float inv = 1.0f / static_cast<float>(pool * pool);
  std::vector<float> acc(static_cast<std::size_t>(side) * 3);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const FloatImage& im = *images[n];
    for (int y = 0; y < side; ++y) {
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (int dy = 0; dy < pool; ++dy) {
        const float* p = im.pixel(0, y * pool + dy);
        for (int xx = 0; xx < side; ++xx) {
          float* a = acc.data() + 3 * xx;
          for (int dx = 0; dx < pool; ++dx, p += 3) {
            a[0] += p[0];
            a[1] += p[1];
            a[2] += p[2];
          }
        }
      }
      const Eigen::Index row = static_cast<Eigen::Index>(n) * per + static_cast<Eigen::Index>(y) * side;
      for (int c = 0; c < 3; ++c) {
        S* dst = x.col(c).data() + row;
        for (int xx = 0; xx < side; ++xx) dst[xx] = static_cast<S>(acc[static_cast<std::size_t>(3 * xx + c)] * inv);
      }
    }
  }
  return x;
}

// Output columns ox whose tap kx lands inside a row of width s:
// 0 <= 2*ox - 1 + kx < s.
struct TapRange {
  int lo, hi;  // half-open
};
TapRange tap_range(int k, int s, int so) {
  return {k == 0 ? 1 : 0, s - k < 0 ? 0 : std::min(so, (s - k) / 2 + 1)};
}

// 3x3, stride 2, zero padding 1. Column c*9 + ky*3 + kx holds the input
// channel c sampled at tap (ky, kx) for every output position.
template <typename S>
MatT<S> im2col(const MatT<S>& x, int batch, int s) {
  const int so = conv_out(s);
  const Eigen::Index in_per = static_cast<Eigen::Index>(s) * s;
  const Eigen::Index out_per = static_cast<Eigen::Index>(so) * so;
  MatT<S> cols(out_per * batch, x.cols() * 9);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const S* src = x.col(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      const TapRange ry = tap_range(ky, s, so);
      for (int kx = 0; kx < 3; ++kx) {
        const TapRange rx = tap_range(kx, s, so);
        S* dst = cols.col(c * 9 + ky * 3 + kx).data();
        for (int n = 0; n < batch; ++n) {
          const S* img = src + n * in_per;
          S* out = dst + n * out_per;
          for (int oy = 0; oy < so; ++oy) {
            S* row = out + oy * so;
            if (oy < ry.lo || oy >= ry.hi) {
              std::fill(row, row + so, S(0));
              continue;
            }
            const S* in = img + (2 * oy - 1 + ky) * s + kx - 1;
            for (int ox = 0; ox < rx.lo; ++ox) row[ox] = S(0);
            for (int ox = rx.lo; ox < rx.hi; ++ox) row[ox] = in[2 * ox];
            for (int ox = rx.hi; ox < so; ++ox) row[ox] = S(0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename S>
MatT<S> col2im(const MatT<S>& dcols, int batch, int s, Eigen::Index channels) {
  const int so = conv_out(s);
  const Eigen::Index in_per = static_cast<Eigen::Index>(s) * s;
  const Eigen::Index out_per = static_cast<Eigen::Index>(so) * so;
  MatT<S> dx = MatT<S>::Zero(in_per * batch, channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    S* dst = dx.col(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      const TapRange ry = tap_range(ky, s, so);
      for (int kx = 0; kx < 3; ++kx) {
        const TapRange rx = tap_range(kx, s, so);
        const S* src = dcols.col(c * 9 + ky * 3 + kx).data();
        for (int n = 0; n < batch; ++n) {
          S* img = dst + n * in_per;
          const S* g = src + n * out_per;
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const S* row = g + oy * so;
            S* in = img + (2 * oy - 1 + ky) * s + kx - 1;
            for (int ox = rx.lo; ox < rx.hi; ++ox) in[2 * ox] += row[ox];
          }
        }
      }
    }
  }
  return dx;
}

template <typename S>
void softmax_columns(MatT<S>& z) {
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    auto col = z.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

template <typename S>
void log_softmax_columns(MatT<S>& z) {
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    auto col = z.col(j);
    const S m = col.maxCoeff();
    const S lse = m + std::log((col.array() - m).exp().sum());
    col.array() -= lse;
  }
}

}  // namespace

template <typename Scalar>
BasicConvNet<Scalar>::BasicConvNet(NetworkShape shape) : shape_(std::move(shape)) {
  if (shape_.channels.empty()) throw Error("network needs at least one conv block");
  if (shape_.stem_pool < 1 || shape_.hidden < 1 || shape_.out_dim < 1) throw Error("invalid network shape");
  Eigen::Index off = 0;
  int in = 3;
  for (int out : shape_.channels) {
    if (out < 1) throw Error("invalid channel count");
    Block b;
    b.in = in;
    b.out = out;
    b.weight = off;
    off += static_cast<Eigen::Index>(in) * 9 * out;
    b.bias = off;
    off += out;
    blocks_.push_back(b);
    in = out;
  }
  const int d = shape_.embedding_dim();
  w1_ = off;
  off += static_cast<Eigen::Index>(shape_.hidden) * d;
  b1_ = off;
  off += shape_.hidden;
  w2_ = off;
  off += static_cast<Eigen::Index>(shape_.out_dim) * shape_.hidden;
  b2_ = off;
  off += shape_.out_dim;
  total_ = off;
}

template <typename Scalar>
auto BasicConvNet<Scalar>::init_parameters(std::mt19937_64& rng) const -> Vec {
  Vec p = Vec::Zero(total_);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto fill = [&](Eigen::Index off, Eigen::Index n, double sd) {
    for (Eigen::Index i = 0; i < n; ++i) p[off + i] = static_cast<Scalar>(sd * normal(rng));
  };
  for (const auto& b : blocks_) fill(b.weight, static_cast<Eigen::Index>(b.in) * 9 * b.out, std::sqrt(2.0 / (b.in * 9)));
  fill(w1_, static_cast<Eigen::Index>(shape_.hidden) * shape_.embedding_dim(), std::sqrt(2.0 / shape_.embedding_dim()));
  fill(w2_, static_cast<Eigen::Index>(shape_.out_dim) * shape_.hidden, std::sqrt(1.0 / shape_.hidden));
  return p;
}

template <typename Scalar>
auto BasicConvNet<Scalar>::backbone(const Vec& params, const std::vector<const FloatImage*>& images,
                                    Cache* cache) const -> Mat {
  using ConstMatMap = Eigen::Map<const Mat>;
  using ConstVecMap = Eigen::Map<const Vec>;
  if (images.empty()) throw Error("empty view batch");
  if (params.size() != total_) throw Error("parameter vector has the wrong size");
  const int batch = static_cast<int>(images.size());
  int s = 0;
  Mat x = pool_stem<Scalar>(images, shape_.stem_pool, s);
  if (cache) {
    cache->batch = batch;
    cache->sizes.clear();
    cache->columns.clear();
    cache->outputs.clear();
  }
  for (const auto& b : blocks_) {
    Mat cols = im2col<Scalar>(x, batch, s);
    const ConstMatMap w(params.data() + b.weight, static_cast<Eigen::Index>(b.in) * 9, b.out);
    const ConstVecMap bias(params.data() + b.bias, b.out);
    Mat z = cols * w;
    z.rowwise() += bias.transpose();
    x = z.cwiseMax(Scalar(0));
    if (cache) {
      cache->sizes.push_back(s);
      cache->columns.push_back(std::move(cols));
      cache->outputs.push_back(x);
    }
    s = conv_out(s);
  }
  const Eigen::Index per = static_cast<Eigen::Index>(s) * s;
  Mat emb(x.cols(), batch);
  for (int n = 0; n < batch; ++n) {
    emb.col(n) = x.middleRows(n * per, per).colwise().mean().transpose();
  }
  if (cache) cache->embedding = emb;
  return emb;
}

template <typename Scalar>
auto BasicConvNet<Scalar>::head(const Vec& params, const Mat& embedding, Cache* cache) const -> Mat {
  using ConstMatMap = Eigen::Map<const Mat>;
  using ConstVecMap = Eigen::Map<const Vec>;
  const int d = shape_.embedding_dim();
  if (embedding.rows() != d) throw Error("embedding has the wrong dimension");
  const ConstMatMap w1(params.data() + w1_, shape_.hidden, d);
  const ConstVecMap b1(params.data() + b1_, shape_.hidden);
  const ConstMatMap w2(params.data() + w2_, shape_.out_dim, shape_.hidden);
  const ConstVecMap b2(params.data() + b2_, shape_.out_dim);
  Mat h = w1 * embedding;
  h.colwise() += b1;
  h = h.cwiseMax(Scalar(0));
  Mat logits = w2 * h;
  logits.colwise() += b2;
  if (cache) cache->hidden = h;
  return logits;
}

template <typename Scalar>
void BasicConvNet<Scalar>::backward(const Vec& params, const Cache& cache, const Mat& dlogits, Vec& grad) const {
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  if (grad.size() != total_) grad = Vec::Zero(total_);
  const int d = shape_.embedding_dim();
  const ConstMatMap w1(params.data() + w1_, shape_.hidden, d);
  const ConstMatMap w2(params.data() + w2_, shape_.out_dim, shape_.hidden);
  MatMap(grad.data() + w2_, shape_.out_dim, shape_.hidden) += dlogits * cache.hidden.transpose();
  grad.segment(b2_, shape_.out_dim) += dlogits.rowwise().sum();
  Mat dh = (w2.transpose() * dlogits).cwiseProduct((cache.hidden.array() > Scalar(0)).template cast<Scalar>().matrix());
  MatMap(grad.data() + w1_, shape_.hidden, d) += dh * cache.embedding.transpose();
  grad.segment(b1_, shape_.hidden) += dh.rowwise().sum();
  const Mat demb = w1.transpose() * dh;

  const int batch = cache.batch;
  const int s_last = conv_out(cache.sizes.back());
  const Eigen::Index per = static_cast<Eigen::Index>(s_last) * s_last;
  Mat da(per * batch, d);
  for (int n = 0; n < batch; ++n) {
    da.middleRows(n * per, per).rowwise() = demb.col(n).transpose() / static_cast<Scalar>(per);
  }
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    const Block& b = blocks_[i];
    const Mat dz = da.cwiseProduct((cache.outputs[i].array() > Scalar(0)).template cast<Scalar>().matrix());
    MatMap(grad.data() + b.weight, static_cast<Eigen::Index>(b.in) * 9, b.out) +=
        cache.columns[i].transpose() * dz;
    grad.segment(b.bias, b.out) += dz.colwise().sum().transpose();
    if (i == 0) break;
    const ConstMatMap w(params.data() + b.weight, static_cast<Eigen::Index>(b.in) * 9, b.out);
    da = col2im<Scalar>(dz * w.transpose(), batch, cache.sizes[i], b.in);
  }
}

template class BasicConvNet<float>;
template class BasicConvNet<double>;

template <typename Scalar>
double distill_loss(const BasicConvNet<Scalar>& net, const typename BasicConvNet<Scalar>::Vec& student,
                    const typename BasicConvNet<Scalar>::Vec& teacher,
                    const typename BasicConvNet<Scalar>::Vec& center, const std::vector<CropViews>& batch,
                    const DistillTemperatures& temps, typename BasicConvNet<Scalar>::Vec* grad,
                    typename BasicConvNet<Scalar>::Mat* teacher_logits_out) {
  using Net = BasicConvNet<Scalar>;
  using Mat = typename Net::Mat;
  using Vec = typename Net::Vec;
  if (batch.empty()) throw Error("empty training batch");
  const std::size_t ng = batch.front().global.size();
  const std::size_t nl = batch.front().local.size();
  if (ng < 1) throw Error("each crop needs at least one global view");
  std::vector<const FloatImage*> globals, locals;
  for (const auto& v : batch) {
    if (v.global.size() != ng || v.local.size() != nl) throw Error("crops in a batch need the same view counts");
    for (const auto& g : v.global) globals.push_back(&g);
    for (const auto& l : v.local) locals.push_back(&l);
  }
  const std::size_t pairs_per_crop = ng * (ng + nl) - ng;
  if (pairs_per_crop == 0) throw Error("no teacher/student view pairs");
  const double norm = 1.0 / static_cast<double>(pairs_per_crop * batch.size());

  const Mat zt = net.head(teacher, net.backbone(teacher, globals));
  if (teacher_logits_out) *teacher_logits_out = zt;
  Mat pt = (zt.colwise() - center) / static_cast<Scalar>(temps.teacher);
  softmax_columns<Scalar>(pt);

  typename Net::Cache cg, cl;
  Mat zg = net.head(student, net.backbone(student, globals, grad ? &cg : nullptr), grad ? &cg : nullptr);
  Mat zl;
  if (nl > 0) zl = net.head(student, net.backbone(student, locals, grad ? &cl : nullptr), grad ? &cl : nullptr);

  Mat lg = zg / static_cast<Scalar>(temps.student);
  log_softmax_columns<Scalar>(lg);
  Mat ll;
  if (nl > 0) {
    ll = zl / static_cast<Scalar>(temps.student);
    log_softmax_columns<Scalar>(ll);
  }

  double loss = 0.0;
  Mat dg = Mat::Zero(zg.rows(), zg.cols());
  Mat dl = nl > 0 ? Mat(Mat::Zero(zl.rows(), zl.cols())) : Mat();
  const auto gscale = static_cast<Scalar>(norm / temps.student);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t t = 0; t < ng; ++t) {
      const auto p = pt.col(static_cast<Eigen::Index>(b * ng + t));
      for (std::size_t s = 0; s < ng; ++s) {
        if (s == t) continue;
        const auto col = static_cast<Eigen::Index>(b * ng + s);
        loss -= static_cast<double>(p.dot(lg.col(col)));
        if (grad) dg.col(col) += gscale * (lg.col(col).array().exp().matrix() - p);
      }
      for (std::size_t s = 0; s < nl; ++s) {
        const auto col = static_cast<Eigen::Index>(b * nl + s);
        loss -= static_cast<double>(p.dot(ll.col(col)));
        if (grad) dl.col(col) += gscale * (ll.col(col).array().exp().matrix() - p);
      }
    }
  }
  loss *= norm;

  if (grad) {
    *grad = Vec::Zero(net.parameter_count());
    net.backward(student, cg, dg, *grad);
    if (nl > 0) net.backward(student, cl, dl, *grad);
  }
  return loss;
}

template double distill_loss<float>(const ConvNet&, const ConvNet::Vec&, const ConvNet::Vec&, const ConvNet::Vec&,
                                    const std::vector<CropViews>&, const DistillTemperatures&, ConvNet::Vec*,
                                    ConvNet::Mat*);
template double distill_loss<double>(const BasicConvNet<double>&, const BasicConvNet<double>::Vec&,
                                     const BasicConvNet<double>::Vec&, const BasicConvNet<double>::Vec&,
                                     const std::vector<CropViews>&, const DistillTemperatures&,
                                     BasicConvNet<double>::Vec*, BasicConvNet<double>::Mat*);

void TrainerConfig::validate() const {
  augmentation.validate();
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw Error("ema_momentum must be in [0,1]");
  if (!(center_momentum >= 0.0 && center_momentum <= 1.0)) throw Error("center_momentum must be in [0,1]");
  if (!(temperatures.teacher > 0.0 && temperatures.student > 0.0)) throw Error("temperatures must be > 0");
  if (!(learning_rate >= 0.0)) throw Error("learning_rate must be >= 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw Error("sgd_momentum must be in [0,1)");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (min_epochs < 1 || max_epochs < min_epochs) throw Error("need 1 <= min_epochs <= max_epochs");
  if (stability_window < 1) throw Error("stability_window must be >= 1");
  if (top_k < 1) throw Error("top_k must be >= 1");
  if (kCropSize % shape.stem_pool || kLocalViewSize % shape.stem_pool) {
    throw Error("stem pool must divide both view sizes");
  }
}

SelfDistillTrainer::SelfDistillTrainer(TrainerConfig config)
    : config_(std::move(config)), net_(config_.shape), rng_(config_.seed) {
#ifdef __GLIBC__
  // Every step allocates and frees multi-megabyte activation buffers; with
  // the default mmap threshold each one costs fresh page faults.
  static std::once_flag malloc_tuned;
  std::call_once(malloc_tuned, [] {
    mallopt(M_MMAP_THRESHOLD, 512 << 20);
    mallopt(M_TRIM_THRESHOLD, 1024 << 20);
  });
#endif
  config_.validate();
  student_ = net_.init_parameters(rng_);
  teacher_ = student_;
  velocity_ = ConvNet::Vec::Zero(student_.size());
  center_ = ConvNet::Vec::Zero(config_.shape.out_dim);
}

double SelfDistillTrainer::train_step(const std::vector<const PreprocessedCrop*>& batch) {
  if (batch.empty()) throw Error("empty training batch");
  std::vector<CropViews> views(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (int g = 0; g < config_.augmentation.n_global; ++g) {
      views[i].global.push_back(augment(batch[i]->pixels, config_.augmentation, ViewKind::global, rng_));
    }
    for (int l = 0; l < config_.augmentation.n_local; ++l) {
      views[i].local.push_back(augment(batch[i]->pixels, config_.augmentation, ViewKind::local, rng_));
    }
  }
  return train_step_views(views);
}

double SelfDistillTrainer::train_step_views(const std::vector<CropViews>& views) {
  ConvNet::Vec grad;
  ConvNet::Mat zt;
  const double loss = distill_loss<float>(net_, student_, teacher_, center_, views, config_.temperatures, &grad, &zt);
  if (!std::isfinite(loss)) {
    throw Error("non-finite distillation loss (center norm " + std::to_string(center_.norm()) +
                ", student norm " + std::to_string(student_.norm()) + ")");
  }
  if (config_.grad_clip > 0.0) {
    const double n = grad.norm();
    if (n > config_.grad_clip) grad *= static_cast<float>(config_.grad_clip / n);
  }
  velocity_ = static_cast<float>(config_.sgd_momentum) * velocity_ + grad;
  student_ -= static_cast<float>(config_.learning_rate) * velocity_;
  if (!student_.allFinite()) throw Error("non-finite student parameters after update");
  const auto lambda = static_cast<float>(config_.ema_momentum);
  teacher_ = lambda * teacher_ + (1.0f - lambda) * student_;
  const auto m = static_cast<float>(config_.center_momentum);
  center_ = m * center_ + (1.0f - m) * zt.rowwise().mean();
  return loss;
}

ConvNet::Mat SelfDistillTrainer::teacher_logits(const std::vector<PreprocessedCrop>& crops) const {
  ConvNet::Mat out(config_.shape.out_dim, static_cast<Eigen::Index>(crops.size()));
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < crops.size(); start += kChunk) {
    const std::size_t end = std::min(crops.size(), start + kChunk);
    std::vector<const FloatImage*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&crops[i].pixels);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        net_.head(teacher_, net_.backbone(teacher_, images));
  }
  return out;
}

std::vector<LesionEmbedding> SelfDistillTrainer::embed(const std::vector<PreprocessedCrop>& crops) const {
  std::vector<LesionEmbedding> out;
  out.reserve(crops.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < crops.size(); start += kChunk) {
    const std::size_t end = std::min(crops.size(), start + kChunk);
    std::vector<const FloatImage*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&crops[i].pixels);
    const ConvNet::Mat emb = net_.backbone(teacher_, images);
    for (std::size_t i = start; i < end; ++i) {
      LesionEmbedding e;
      e.lesion_id = crops[i].lesion_id;
      e.tag = EmbedderTag::selfdistill;
      const auto col = emb.col(static_cast<Eigen::Index>(i - start));
      e.vector.assign(col.data(), col.data() + col.size());  // widened to double
      try {
        l2_normalize(e.vector);
      } catch (const Error&) {
        throw Error("teacher embedding of lesion " + e.lesion_id + " is zero or non-finite");
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

double mean_softmax_entropy(const ConvNet::Mat& logits, const ConvNet::Vec& center, double temperature) {
  MatT<double> p = (logits.cast<double>().colwise() - center.cast<double>()) / temperature;
  softmax_columns<double>(p);
  const Eigen::VectorXd mean = p.rowwise().mean();
  double h = 0.0;
  for (Eigen::Index k = 0; k < mean.size(); ++k) {
    if (mean[k] > 0.0) h -= mean[k] * std::log(mean[k]);
  }
  return h;
}

TrainResult HandcraftedEmbedder::embed(const std::vector<PreprocessedCrop>& crops,
                                       const std::set<std::string>&) const {
  TrainResult r;
  for (const auto& c : crops) r.embeddings.push_back(embed_handcrafted(c));
  return r;
}

TrainResult train_patient(const std::vector<PreprocessedCrop>& crops, const TrainerConfig& config,
                          const std::set<std::string>& flagged, const TrainHooks& hooks) {
  TrainResult result;
  if (crops.size() < kMinCropsForTraining) {
    result = HandcraftedEmbedder{}.embed(crops, flagged);
    result.fallback = true;
    result.warning = "only " + std::to_string(crops.size()) + " crops (< " +
                     std::to_string(kMinCropsForTraining) +
                     "); self-distillation skipped, handcrafted embeddings used";
    return result;
  }
  SelfDistillTrainer trainer(config);
  std::vector<std::size_t> order(crops.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  std::vector<std::string> previous;
  int stable = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), trainer.rng());
    double sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const PreprocessedCrop*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(&crops[order[i]]);
      sum += trainer.train_step(batch);
      ++steps;
    }
    result.epoch_loss.push_back(sum / steps);
    result.epochs_run = epoch;
    if (hooks.on_epoch) hooks.on_epoch(epoch, sum / steps);
    if (epoch < config.min_epochs) continue;

    // Stop once the ordered top-k list has not changed for a full window.
    auto ids = top_k_ids(score_lesions(trainer.embed(crops), config.top_k, flagged).scores, config.top_k);
    stable = !previous.empty() && ids == previous ? stable + 1 : 0;
    previous = std::move(ids);
    if (stable >= config.stability_window) break;
  }
  result.embeddings = trainer.embed(crops);
  result.teacher_entropy =
      mean_softmax_entropy(trainer.teacher_logits(crops), trainer.center(), config.temperatures.teacher);
  if (hooks.on_done) hooks.on_done(trainer);
  return result;
}

}  // namespace udscreen
