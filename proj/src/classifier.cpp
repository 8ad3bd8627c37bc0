#include <cmath>
#include <cstring>
#include <numeric>

#include "dpguard/classifier.hpp"
#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "dpguard/simd/kernels.hpp"
#include "json.hpp"

namespace dpguard::classifier {
namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double f1_at(const LogisticModel& model, std::span<const LabeledFeatures> data) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : data) {
    scores.push_back(model.probability(s.x));
    labels.push_back(s.label);
  }
  return evaluate_binary(scores, labels).dp.f1;
}

}  // namespace

const char* to_string(Verdict v) { return v == Verdict::kDp ? "DP" : "non-DP"; }

Verdict predict(double score, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorKind::kValidation, "threshold must lie in (0, 1)");
  }
  return score >= threshold ? Verdict::kDp : Verdict::kNonDp;
}

Verdict predict(const BinaryScorer& scorer, const Image& image, double threshold) {
  return predict(scorer.score(image), threshold);
}

double LogisticModel::logit(const FeatureVector& x) const {
  if (x.values.size() != weights.size()) {
    throw Error(ErrorKind::kShape, "feature length " + std::to_string(x.values.size()) +
                                       " does not match model length " + std::to_string(weights.size()));
  }
  return simd::dot(weights, x.values) + bias;
}

double LogisticModel::probability(const FeatureVector& x) const { return sigmoid(logit(x)); }

std::string LogisticScorer::to_json() const {
  nlohmann::ordered_json doc;
  doc["kind"] = "dpguard-logistic";
  doc["feature_length"] = model_.weights.size();
  doc["bias"] = model_.bias;
  doc["weights"] = model_.weights;
  return doc.dump();
}

LogisticScorer LogisticScorer::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, std::string("baseline weights: ") + e.what());
  }
  if (doc.value("kind", std::string{}) != "dpguard-logistic") {
    throw Error(ErrorKind::kValidation, "baseline weights: unexpected kind");
  }
  LogisticModel m;
  m.bias = doc.at("bias").get<double>();
  m.weights = doc.at("weights").get<std::vector<double>>();
  if (m.weights.size() != doc.at("feature_length").get<std::size_t>()) {
    throw Error(ErrorKind::kShape, "baseline weights: feature_length mismatch");
  }
  return LogisticScorer(std::move(m));
}

void LogisticScorer::save(const std::string& path) const { write_file_atomic(path, to_json()); }

LogisticScorer LogisticScorer::load(const std::string& path) { return from_json(read_text_file(path)); }

std::string raster_digest(const Image& image) {
  std::vector<std::uint8_t> buf(8 + image.rgb.size());
  const std::uint32_t w = static_cast<std::uint32_t>(image.width);
  const std::uint32_t h = static_cast<std::uint32_t>(image.height);
  std::memcpy(buf.data(), &w, 4);
  std::memcpy(buf.data() + 4, &h, 4);
  std::memcpy(buf.data() + 8, image.rgb.data(), image.rgb.size());
  return sha256_hex(buf);
}

void ScriptedScorer::set(const Image& image, double score) { scores_[raster_digest(image)] = score; }

double ScriptedScorer::score(const Image& image) const {
  auto it = scores_.find(raster_digest(image));
  return it == scores_.end() ? default_ : it->second;
}

LossGradient loss_and_gradient(const LogisticModel& model, std::span<const LabeledFeatures> data) {
  LossGradient out;
  out.grad_weights.assign(model.weights.size(), 0.0);
  if (data.empty()) return out;
  for (const auto& s : data) {
    const double z = model.logit(s.x);
    out.loss += softplus(z) - s.label * z;
    const double g = sigmoid(z) - s.label;
    simd::axpy(g, s.x.values, out.grad_weights);
    out.grad_bias += g;
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  out.loss *= inv;
  for (double& g : out.grad_weights) g *= inv;
  out.grad_bias *= inv;
  return out;
}

LogisticScorer train_baseline(std::span<const LabeledFeatures> train,
                              std::span<const LabeledFeatures> validation,
                              const TrainOptions& options, TrainReport* report) {
  if (train.empty()) throw Error(ErrorKind::kValidation, "training set is empty");
  bool has_pos = false, has_neg = false;
  for (const auto& s : train) (s.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) {
    throw Error(ErrorKind::kValidation, "training set must contain both DP and non-DP examples");
  }
  const std::size_t dim = train.front().x.values.size();

  Rng rng = make_rng(options.seed);
  LogisticModel model;
  model.weights.assign(dim, 0.0);
  for (double& w : model.weights) w = (uniform01(rng) - 0.5) * 0.02;
  model.bias = 0.0;

  const auto selection = validation.empty() ? train : validation;
  LogisticModel best = model;
  double best_f1 = -1.0;
  TrainReport local;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    if (options.full_batch) {
      const LossGradient lg = loss_and_gradient(model, train);
      simd::axpy(-options.learning_rate, lg.grad_weights, model.weights);
      model.bias -= options.learning_rate * lg.grad_bias;
    } else {
      shuffle(order, rng);
      for (std::size_t i : order) {
        const auto& s = train[i];
        const double g = model.probability(s.x) - s.label;
        simd::axpy(-options.learning_rate * g, s.x.values, model.weights);
        model.bias -= options.learning_rate * g;
      }
    }
    local.epoch_loss.push_back(loss_and_gradient(model, train).loss);
    const double f1 = f1_at(model, selection);
    local.selection_f1.push_back(f1);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = model;
      local.best_epoch = epoch;
    }
  }
  if (report) *report = std::move(local);
  return LogisticScorer(options.epochs > 0 ? best : model);
}

BinaryMetrics evaluate_binary(std::span<const double> scores, std::span<const int> labels,
                              double threshold) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::kValidation, "evaluate_binary: scores and labels differ in length");
  }
  metrics::Counts dp, non_dp;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = predict(scores[i], threshold) == Verdict::kDp;
    const bool truth = labels[i] != 0;
    if (pred && truth) {
      ++dp.tp;
    } else if (pred && !truth) {
      ++dp.fp;
      ++non_dp.fn;
    } else if (!pred && truth) {
      ++dp.fn;
      ++non_dp.fp;
    } else {
      ++non_dp.tp;
    }
  }
  return {metrics::prf(dp), metrics::prf(non_dp)};
}

BinaryMetrics evaluate_binary(const BinaryScorer& scorer, std::span<const LabeledImage> test,
                              double threshold) {
  if (test.empty()) throw Error(ErrorKind::kValidation, "evaluate_binary: empty test set");
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& t : test) {
    scores.push_back(scorer.score(*t.image));
    labels.push_back(t.label);
  }
  return evaluate_binary(scores, labels, threshold);
}

}  // namespace dpguard::classifier
