#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dpguard/classifier.hpp"

namespace dpguard::onnx {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  // Integer tensors (shapes, indices) keep exact values here instead.
  std::vector<std::int64_t> ints;
  bool is_int = false;

  std::size_t numel() const;
};

// Minimal CPU interpreter for classification graphs (Conv/BatchNorm/Relu/
// pooling/Gemm/MatMul/elementwise/Softmax/Sigmoid/Flatten/Reshape).
class Graph {
 public:
  static Graph parse(const std::string& bytes);
  static Graph load(const std::string& path);
  ~Graph();
  Graph(Graph&&) noexcept;
  Graph& operator=(Graph&&) noexcept;

  const std::string& input_name() const;
  // Declared dims; unknown (symbolic) dims are reported as -1.
  const std::vector<std::int64_t>& input_shape() const;
  const std::vector<std::int64_t>& output_shape() const;
  std::size_t output_count() const;
  const std::map<std::string, std::string>& metadata() const;

  Tensor run(const Tensor& input) const;

 private:
  Graph();
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Preprocessing read from metadata_props:
//   dpguard.preprocess       image (default) | baseline_features
//   dpguard.scale            pixel multiplier before normalization (default 1/255)
//   dpguard.mean, dpguard.std  comma-separated per-channel constants (default 0 / 1)
//   dpguard.output           probability | logits (default by output width)
//   dpguard.logit_activation softmax (default) | sigmoid
//   dpguard.dp_index         index of the DP class in a 2-wide output (default 1)
class OnnxScorer final : public classifier::BinaryScorer {
 public:
  explicit OnnxScorer(Graph graph, std::string path);
  double score(const Image& image) const override;
  std::string descriptor() const override { return "onnx:" + path_; }
  const Graph& graph() const { return graph_; }

 private:
  enum class Preprocess { kImage, kBaselineFeatures };
  enum class Output { kProbability, kLogits };

  Graph graph_;
  std::string path_;
  Preprocess preprocess_ = Preprocess::kImage;
  Output output_ = Output::kProbability;
  bool sigmoid_logits_ = false;
  int dp_index_ = 1;
  float scale_ = 1.0f / 255.0f;
  float mean_[3] = {0, 0, 0};
  float std_[3] = {1, 1, 1};
  int height_ = 0;
  int width_ = 0;
};

// Throws Error(kIo) for a missing file, Error(kShape) when the graph is not a
// single-image-input, single 1-probability or 2-logit output model.
std::unique_ptr<classifier::BinaryScorer> load_external_model(const std::string& path);

// Baseline as a graph: features[1,1,1,1072] -> Flatten -> Gemm -> Sigmoid.
std::string export_baseline(const classifier::LogisticScorer& scorer);
void export_baseline(const classifier::LogisticScorer& scorer, const std::string& path);

}  // namespace dpguard::onnx
