#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpguard/detector.hpp"
#include "dpguard/taxonomy.hpp"

namespace dpguard::reporter {

struct Buckets {
  double one = 0.0;   // % of deceptive images with exactly 1 category
  double two = 0.0;
  double more = 0.0;  // > 2
  bool operator==(const Buckets&) const = default;
};

struct PlatformReport {
  std::size_t total_groups = 0;
  std::size_t groups_with_dp = 0;
  double pct_groups_with_dp = 0.0;
  std::size_t total_images = 0;
  std::size_t images_with_dp = 0;
  double pct_images_with_dp = 0.0;
  // Over deceptive images only; absent when there are none (std needs two).
  std::optional<double> mean_categories;
  std::optional<double> std_categories;  // sample (n - 1) estimator
  std::optional<Buckets> buckets;
  std::map<int, std::size_t> category_instances;

  bool operator==(const PlatformReport&) const = default;
};

// Keyed by platform name ("mobile", "website", or "unknown").
struct EmpiricalReport {
  std::map<std::string, PlatformReport> platforms;
  bool operator==(const EmpiricalReport&) const = default;
};

// An image is deceptive iff its verdict is DP with at least one DP category
// (unclassified_dp images therefore count as clean). Each category counts once per image.
EmpiricalReport aggregate(const std::vector<detector::DetectionResult>& results);

enum class Format { kJson, kCsv, kMarkdown };
Format parse_format(std::string_view name);
const char* extension(Format f);

// Names come from the taxonomy when given; markdown lists every active category.
std::string render_report(const EmpiricalReport& report, Format format, const Taxonomy* taxonomy = nullptr);
EmpiricalReport report_from_json(std::string_view text);

}  // namespace dpguard::reporter
