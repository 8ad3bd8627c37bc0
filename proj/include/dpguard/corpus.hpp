#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpguard/rng.hpp"
#include "dpguard/taxonomy.hpp"

namespace dpguard {

enum class Platform { kMobile, kWebsite };
enum class Split { kUnassigned, kTrain, kValidation, kTest };

const char* to_string(Platform p);
const char* to_string(Split s);
Platform parse_platform(std::string_view text);
Split parse_split(std::string_view text);

struct UIRecord {
  std::string image_ref;  // path as written in the manifest
  Platform platform = Platform::kMobile;
  std::string source;
  CategorySet labels;
  std::string group_id;
  Split split = Split::kUnassigned;

  bool is_dp() const { return !labels.empty() && !labels.count(kNoDp); }
};

struct Corpus {
  std::vector<UIRecord> records;
  std::string taxonomy_version;
  // Directory relative image refs resolve against.
  std::string base_dir;

  std::string resolve(const UIRecord& r) const;
  std::vector<UIRecord> in_split(Split s) const;
};

struct ImportOptions {
  // Unreadable images become warnings instead of errors.
  bool lenient = false;
  // Skip the image readability check entirely (synthetic manifests).
  bool check_images = true;
};

struct ManifestIssue {
  std::size_t line = 0;
  std::string message;
};

struct ImportResult {
  Corpus corpus;
  std::vector<ManifestIssue> warnings;
};

// One JSON object per line: {image, platform, source, labels[], group_id[, split]}.
// Throws Error(kValidation) listing every offending line.
ImportResult import_manifest(const std::string& path, const Taxonomy& taxonomy,
                             const ImportOptions& options = {});
ImportResult parse_manifest(std::string_view text, const Taxonomy& taxonomy,
                            const std::string& base_dir, const ImportOptions& options = {});

std::string to_manifest_line(const UIRecord& record);
std::string to_manifest(const Corpus& corpus);

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

// Seeded Fisher-Yates over manifest order, then contiguous train/val/test
// slices of sizes N - floor(v*N) - floor(t*N), floor(v*N), floor(t*N).
Corpus split(const Corpus& corpus, const SplitRatios& ratios, std::uint32_t seed);

struct SampleOptions {
  std::size_t batch_size = 100;
  std::size_t min_per_category = 5;
};

// Balanced batch: each class contributes up to min_per_category records, quota
// picks are truncated uniformly when they overflow the batch, and the rest of
// the batch is filled uniformly from unused records.
std::vector<UIRecord> balanced_sample(const std::vector<UIRecord>& pool,
                                      const std::vector<int>& classes,
                                      const SampleOptions& options, Rng& rng);

struct CategoryCount {
  std::map<Platform, std::size_t> instances;
  std::map<Platform, std::size_t> images;
};

struct CorpusStats {
  std::map<int, CategoryCount> per_category;
  std::map<Platform, std::size_t> total_instances;
  std::map<Platform, std::size_t> total_images;
  std::map<Platform, std::size_t> dp_images;
  std::map<Platform, std::size_t> dp_instances;
};

CorpusStats stats(const std::vector<UIRecord>& records);

}  // namespace dpguard
