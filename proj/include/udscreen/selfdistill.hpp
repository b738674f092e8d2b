#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "udscreen/embedder.hpp"
#include "udscreen/ud_scorer.hpp"

namespace udscreen {

struct NetworkShape {
  int stem_pool = 4;  // fixed average pooling ahead of the first conv
  std::vector<int> channels{16, 32, 64, 128};
  int hidden = 256;
  int out_dim = 256;  // K

  int embedding_dim() const { return channels.back(); }
};

// Backbone: average-pool stem, then 3x3 stride-2 conv + bias + ReLU blocks,
// global average pool. Head: linear, ReLU, linear. Parameters live in one
// flat vector so EMA and SGD are plain vector arithmetic. Training runs in
// float; the double instantiation exists for gradient checks.
template <typename Scalar>
class BasicConvNet {
 public:
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  explicit BasicConvNet(NetworkShape shape);

  const NetworkShape& shape() const { return shape_; }
  Eigen::Index parameter_count() const { return total_; }
  Vec init_parameters(std::mt19937_64& rng) const;

  // Activations of one forward pass, kept for backprop.
  struct Cache {
    int batch = 0;
    std::vector<int> sizes;     // spatial side entering each conv
    std::vector<Mat> columns;   // im2col per conv
    std::vector<Mat> outputs;   // post-ReLU per conv
    Mat embedding;              // D x N
    Mat hidden;                 // post-ReLU head hidden, H x N
  };

  // images: N square views of equal size. Returns D x N.
  Mat backbone(const Vec& params, const std::vector<const FloatImage*>& images, Cache* cache = nullptr) const;
  // embedding: D x N. Returns K x N.
  Mat head(const Vec& params, const Mat& embedding, Cache* cache = nullptr) const;
  // Accumulates into grad the gradient for d(loss)/d(logits).
  void backward(const Vec& params, const Cache& cache, const Mat& dlogits, Vec& grad) const;

 private:
  struct Block {
    Eigen::Index weight = 0;  // offset of (Cin*9) x Cout column-major matrix
    Eigen::Index bias = 0;
    int in = 0, out = 0;
  };
  NetworkShape shape_;
  std::vector<Block> blocks_;
  Eigen::Index w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, total_ = 0;
};

extern template class BasicConvNet<float>;
extern template class BasicConvNet<double>;
using ConvNet = BasicConvNet<float>;

struct DistillTemperatures {
  double teacher = 0.04;
  double student = 0.1;
};

// Views of one crop. Teacher sees globals only; each (teacher global t,
// student view s) pair with s != t contributes one cross-entropy term.
struct CropViews {
  std::vector<FloatImage> global;
  std::vector<FloatImage> local;
};

// Mean cross-entropy over all crops and view pairs; the teacher side is
// constant. If grad is given, it receives d(loss)/d(student params).
// teacher_logits_out, when given, receives the K x (2B) teacher logits.
template <typename Scalar>
double distill_loss(const BasicConvNet<Scalar>& net, const typename BasicConvNet<Scalar>::Vec& student,
                    const typename BasicConvNet<Scalar>::Vec& teacher,
                    const typename BasicConvNet<Scalar>::Vec& center, const std::vector<CropViews>& batch,
                    const DistillTemperatures& temps, typename BasicConvNet<Scalar>::Vec* grad = nullptr,
                    typename BasicConvNet<Scalar>::Mat* teacher_logits_out = nullptr);

struct TrainerConfig {
  NetworkShape shape;
  AugmentationConfig augmentation;
  DistillTemperatures temperatures;
  double ema_momentum = 0.996;
  double center_momentum = 0.9;
  double learning_rate = 0.01;
  double sgd_momentum = 0.9;
  double grad_clip = 3.0;  // global L2 norm; <= 0 disables
  int batch_size = 16;
  int min_epochs = 200;
  int max_epochs = 300;
  int stability_window = 5;
  int top_k = kDefaultTopK;
  std::uint64_t seed = 0;

  void validate() const;
};

class SelfDistillTrainer {
 public:
  explicit SelfDistillTrainer(TrainerConfig config);

  const TrainerConfig& config() const { return config_; }
  const ConvNet& network() const { return net_; }
  const ConvNet::Vec& student() const { return student_; }
  const ConvNet::Vec& teacher() const { return teacher_; }
  const ConvNet::Vec& center() const { return center_; }
  std::mt19937_64& rng() { return rng_; }

  // One optimization step on a batch of crops; returns the loss.
  double train_step(const std::vector<const PreprocessedCrop*>& batch);
  // Same, on views prepared by the caller.
  double train_step_views(const std::vector<CropViews>& views);

  // L2-normalized teacher-backbone embeddings of the un-augmented crops.
  std::vector<LesionEmbedding> embed(const std::vector<PreprocessedCrop>& crops) const;
  // Teacher logits (K x N) of the un-augmented crops.
  ConvNet::Mat teacher_logits(const std::vector<PreprocessedCrop>& crops) const;

 private:
  TrainerConfig config_;
  ConvNet net_;
  ConvNet::Vec student_, teacher_, velocity_;
  ConvNet::Vec center_;
  std::mt19937_64 rng_;
};

// Entropy of the mean of softmax((logits - center) / temperature) over columns.
double mean_softmax_entropy(const ConvNet::Mat& logits, const ConvNet::Vec& center, double temperature);

struct TrainResult {
  std::vector<LesionEmbedding> embeddings;
  int epochs_run = 0;
  bool fallback = false;  // handcrafted embedder used instead
  std::string warning;
  std::vector<double> epoch_loss;
  // Entropy of the mean teacher softmax (with the trained center) at the end.
  double teacher_entropy = 0.0;
};

struct TrainHooks {
  // Called after every epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
  // Called once with the finished trainer, before it is destroyed.
  std::function<void(const SelfDistillTrainer&)> on_done;
};

inline constexpr std::size_t kMinCropsForTraining = 11;

// Per-patient training with the top-k stability stopping rule. Flagged
// lesions are trained on but excluded from the ranking.
TrainResult train_patient(const std::vector<PreprocessedCrop>& crops, const TrainerConfig& config,
                          const std::set<std::string>& flagged = {}, const TrainHooks& hooks = {});

// Pluggable embedding strategy, so alternative trainers can be compared.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbedderTag tag() const = 0;
  virtual TrainResult embed(const std::vector<PreprocessedCrop>& crops,
                            const std::set<std::string>& flagged) const = 0;
};

class HandcraftedEmbedder final : public Embedder {
 public:
  EmbedderTag tag() const override { return EmbedderTag::handcrafted; }
  TrainResult embed(const std::vector<PreprocessedCrop>& crops, const std::set<std::string>& flagged) const override;
};

class SelfDistillEmbedder final : public Embedder {
 public:
  explicit SelfDistillEmbedder(TrainerConfig config) : config_(std::move(config)) {}
  EmbedderTag tag() const override { return EmbedderTag::selfdistill; }
  TrainResult embed(const std::vector<PreprocessedCrop>& crops, const std::set<std::string>& flagged) const override {
    return train_patient(crops, config_, flagged);
  }

 private:
  TrainerConfig config_;
};

}  // namespace udscreen
