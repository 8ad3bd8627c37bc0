#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dpguard/classifier.hpp"
#include "dpguard/corpus.hpp"
#include "dpguard/gateway.hpp"
#include "dpguard/taxonomy.hpp"

namespace dpguard::detector {

// Flag names as they appear in JSON output.
inline constexpr const char* kUnclassifiedDp = "unclassified_dp";
inline constexpr const char* kStage2Error = "stage2_error";
inline constexpr const char* kCached = "cached";
inline constexpr const char* kInputError = "input_error";
inline constexpr const char* kDryRun = "dry_run";

struct Timings {
  double stage1_ms = 0.0;
  double stage2_ms = 0.0;
};

struct DetectionResult {
  std::string image_ref;
  std::string group_id;
  std::optional<Platform> platform;
  double binary_score = 0.0;
  classifier::Verdict verdict = classifier::Verdict::kNonDp;
  CategorySet categories{kNoDp};
  std::optional<std::string> raw_output;
  Timings timings;
  std::set<std::string> flags;
  std::string error;

  bool has_flag(const std::string& f) const { return flags.count(f) > 0; }
  // DP verdict with at least one DP category (what the reporter counts).
  bool is_deceptive() const;
};

struct DetectInput {
  std::string image_ref;
  std::string path;  // read when bytes is empty
  std::vector<std::uint8_t> bytes;
  std::string group_id;
  std::optional<Platform> platform;
};

struct DetectorConfig {
  const classifier::BinaryScorer* scorer = nullptr;
  gateway::Gateway* gateway = nullptr;  // may be null when dry_run
  std::string best_prompt;
  std::string system_prompt;
  const Taxonomy* taxonomy = nullptr;
  double threshold = 0.5;
  double temperature = 0.0;
  std::string cache_dir;  // per-image result cache; empty disables
  bool dry_run = false;   // stage 2 is skipped entirely
};

DetectionResult detect(const DetectInput& input, const DetectorConfig& config);

// Results in input order; at most `parallelism` images in flight.
std::vector<DetectionResult> detect_batch(const std::vector<DetectInput>& inputs, const DetectorConfig& config,
                                          std::size_t parallelism = 4);

// {image, group_id, platform?, score, verdict, categories[], flags[], raw_sha256?, error?}
std::string to_json_line(const DetectionResult& result);
DetectionResult from_json_line(std::string_view line);
std::vector<DetectionResult> read_results(const std::string& path);

// Cache key over image digest, prompt digest, and model descriptors.
std::string result_cache_key(const std::string& image_digest, const DetectorConfig& config);

}  // namespace dpguard::detector
