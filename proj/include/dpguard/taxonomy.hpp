#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace dpguard {

inline constexpr int kNoDp = 0;
inline constexpr int kCategoryCount = 22;  // "No DP" plus 21 deceptive-pattern categories

using CategorySet = std::set<int>;

struct DPCategory {
  int id = 0;
  std::string name;
  std::string definition;
  std::vector<std::string> cases;
  bool active = true;
  // Alternate spellings accepted when parsing model output.
  std::vector<std::string> aliases;
  // Reference sample counts by platform, when the file carries them.
  std::map<std::string, int> samples;
};

class Taxonomy {
 public:
  Taxonomy() = default;
  // Validates every invariant; throws Error(kValidation) naming the offender.
  Taxonomy(std::vector<DPCategory> categories, std::string version);

  const std::vector<DPCategory>& categories() const { return categories_; }
  const std::string& version() const { return version_; }
  const DPCategory& at(int id) const;
  bool contains(int id) const { return id >= 0 && id < static_cast<int>(categories_.size()); }

  // Active DP categories (excludes "No DP").
  std::vector<int> active_dp_ids() const;
  // The classes used in detection mode: "No DP" followed by the active DP ids.
  std::vector<int> detection_classes() const;

  // Copy with only the given DP ids active ("No DP" stays active).
  Taxonomy with_active(const CategorySet& dp_ids) const;

 private:
  std::vector<DPCategory> categories_;
  std::string version_;
};

Taxonomy parse_taxonomy(std::string_view json_text);
Taxonomy load_taxonomy(const std::string& path);
std::string default_taxonomy_path();
Taxonomy load_default_taxonomy();

// Lowercase, non-alphanumerics to single spaces, trimmed.
std::string normalize_name(std::string_view text);

std::string render_system_prompt(const Taxonomy& taxonomy);

// Category ids mentioned in free-form model output. An explicit "no deceptive
// pattern" verdict wins over stray category names and yields {0}.
CategorySet parse_category_mentions(std::string_view text, const Taxonomy& taxonomy);

}  // namespace dpguard
