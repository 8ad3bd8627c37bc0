#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpguard/image.hpp"
#include "dpguard/metrics.hpp"
#include "dpguard/rng.hpp"

namespace dpguard::classifier {

inline constexpr int kGridSide = 32;
inline constexpr int kHistogramBins = 16;
inline constexpr std::size_t kGrayLength = kGridSide * kGridSide;
inline constexpr std::size_t kFeatureLength = kGrayLength + 3 * kHistogramBins;  // 1072

// 32x32 area-averaged grayscale in [0, 1] followed by three 16-bin RGB
// histograms, each normalized to unit mass.
struct FeatureVector {
  std::vector<double> values;
};

FeatureVector featurize(const Image& image);

// Stage-1 screening contract: probability that an image holds >= 1 deceptive pattern.
class BinaryScorer {
 public:
  virtual ~BinaryScorer() = default;
  virtual double score(const Image& image) const = 0;
  virtual std::string descriptor() const = 0;
};

enum class Verdict { kNonDp, kDp };

const char* to_string(Verdict v);

// DP iff score >= threshold (ties go to DP).
Verdict predict(double score, double threshold = 0.5);
Verdict predict(const BinaryScorer& scorer, const Image& image, double threshold = 0.5);

struct LogisticModel {
  std::vector<double> weights = std::vector<double>(kFeatureLength, 0.0);
  double bias = 0.0;

  double logit(const FeatureVector& x) const;
  double probability(const FeatureVector& x) const;
};

class LogisticScorer final : public BinaryScorer {
 public:
  explicit LogisticScorer(LogisticModel model) : model_(std::move(model)) {}

  double score(const Image& image) const override { return model_.probability(featurize(image)); }
  double score(const FeatureVector& features) const { return model_.probability(features); }
  std::string descriptor() const override { return "logistic-baseline"; }
  const LogisticModel& model() const { return model_; }

  std::string to_json() const;
  static LogisticScorer from_json(std::string_view text);
  void save(const std::string& path) const;
  static LogisticScorer load(const std::string& path);

 private:
  LogisticModel model_;
};

// Offline stand-in: fixed score per raster digest, with a default.
class ScriptedScorer final : public BinaryScorer {
 public:
  explicit ScriptedScorer(double default_score = 0.0) : default_(default_score) {}
  void set(const Image& image, double score);
  void set_digest(std::string raster_digest, double score) { scores_[std::move(raster_digest)] = score; }
  double score(const Image& image) const override;
  std::string descriptor() const override { return "scripted-scorer"; }

 private:
  double default_;
  std::unordered_map<std::string, double> scores_;
};

// SHA-256 of width, height, and RGB raster.
std::string raster_digest(const Image& image);

struct LabeledFeatures {
  FeatureVector x;
  int label = 0;  // 1 = DP
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad_weights;
  double grad_bias = 0.0;
};

// Mean binary cross-entropy and its analytic gradient.
LossGradient loss_and_gradient(const LogisticModel& model, std::span<const LabeledFeatures> data);

struct TrainOptions {
  int epochs = 10;
  double learning_rate = 0.05;
  std::uint32_t seed = 42;
  // Plain gradient descent on the full set instead of shuffled SGD.
  bool full_batch = false;
};

struct TrainReport {
  std::vector<double> epoch_loss;     // full training loss after each epoch
  std::vector<double> selection_f1;   // validation F1 (training F1 if no validation set)
  int best_epoch = 0;                 // 1-based
};

// Throws Error(kValidation) unless both classes are present in `train`.
LogisticScorer train_baseline(std::span<const LabeledFeatures> train,
                              std::span<const LabeledFeatures> validation,
                              const TrainOptions& options, TrainReport* report = nullptr);

struct BinaryMetrics {
  metrics::PRF dp;
  metrics::PRF non_dp;
};

BinaryMetrics evaluate_binary(std::span<const double> scores, std::span<const int> labels,
                              double threshold = 0.5);

struct LabeledImage {
  const Image* image;
  int label;
};

BinaryMetrics evaluate_binary(const BinaryScorer& scorer, std::span<const LabeledImage> test,
                              double threshold = 0.5);

}  // namespace dpguard::classifier
