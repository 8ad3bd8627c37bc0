#include "dpguard/taxonomy.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <sstream>

#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "json.hpp"

namespace dpguard {
namespace {

using nlohmann::json;

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

std::string required_string(const json& entry, const char* key, std::size_t index) {
  if (!entry.contains(key) || !entry[key].is_string()) {
    throw Error(ErrorKind::kValidation, "taxonomy entry " + std::to_string(index) +
                                            ": missing string field '" + key + "'");
  }
  return entry[key].get<std::string>();
}

// Normalized phrases that state an explicit benign verdict.
constexpr std::array<std::string_view, 12> kNegativeVerdicts = {
    "no dp",
    "no deceptive pattern",
    "no deceptive patterns",
    "no dark pattern",
    "no dark patterns",
    "not contain any deceptive pattern",
    "not contain any deceptive patterns",
    "not include any deceptive pattern",
    "not include any deceptive patterns",
    "free of deceptive patterns",
    "no deceptive design",
    "non dp",
};

bool contains_phrase(const std::string& padded, std::string_view phrase) {
  std::string needle;
  needle.reserve(phrase.size() + 2);
  needle.push_back(' ');
  needle.append(phrase);
  needle.push_back(' ');
  return padded.find(needle) != std::string::npos;
}

}  // namespace

Taxonomy::Taxonomy(std::vector<DPCategory> categories, std::string version)
    : version_(std::move(version)) {
  std::set<int> ids;
  std::map<std::string, int> names;
  for (const auto& c : categories) {
    if (!ids.insert(c.id).second) {
      throw Error(ErrorKind::kValidation, "duplicate category id " + std::to_string(c.id));
    }
    const std::string key = normalize_name(c.name);
    if (key.empty()) {
      throw Error(ErrorKind::kValidation, "category " + std::to_string(c.id) + " has an empty name");
    }
    if (auto [it, fresh] = names.emplace(key, c.id); !fresh) {
      throw Error(ErrorKind::kValidation, "duplicate category name '" + c.name + "' (ids " +
                                              std::to_string(it->second) + " and " +
                                              std::to_string(c.id) + ")");
    }
  }
  std::vector<int> missing, unexpected;
  for (int id = 0; id < kCategoryCount; ++id) {
    if (!ids.count(id)) missing.push_back(id);
  }
  for (int id : ids) {
    if (id < 0 || id >= kCategoryCount) unexpected.push_back(id);
  }
  if (!missing.empty() || !unexpected.empty()) {
    std::ostringstream msg;
    msg << "non-contiguous ids: expected 0.." << kCategoryCount - 1;
    if (!missing.empty()) {
      msg << ", missing";
      for (int id : missing) msg << ' ' << id;
    }
    if (!unexpected.empty()) {
      msg << ", unexpected";
      for (int id : unexpected) msg << ' ' << id;
    }
    throw Error(ErrorKind::kValidation, msg.str());
  }
  std::sort(categories.begin(), categories.end(),
            [](const DPCategory& a, const DPCategory& b) { return a.id < b.id; });
  if (normalize_name(categories[kNoDp].name) != "no dp") {
    throw Error(ErrorKind::kValidation, "category 0 must be 'No DP', found '" +
                                            categories[kNoDp].name + "'");
  }
  for (const auto& c : categories) {
    if (c.id != kNoDp && c.cases.empty()) {
      throw Error(ErrorKind::kValidation,
                  "category " + std::to_string(c.id) + " (" + c.name + ") has no use cases");
    }
    for (const auto& alias : c.aliases) {
      const std::string key = normalize_name(alias);
      auto it = names.find(key);
      if (it != names.end() && it->second != c.id) {
        throw Error(ErrorKind::kValidation, "alias '" + alias + "' of category " +
                                                std::to_string(c.id) + " collides with category " +
                                                std::to_string(it->second));
      }
    }
  }
  categories_ = std::move(categories);
}

const DPCategory& Taxonomy::at(int id) const {
  if (!contains(id)) throw Error(ErrorKind::kValidation, "unknown category id " + std::to_string(id));
  return categories_[static_cast<std::size_t>(id)];
}

std::vector<int> Taxonomy::active_dp_ids() const {
  std::vector<int> out;
  for (const auto& c : categories_) {
    if (c.id != kNoDp && c.active) out.push_back(c.id);
  }
  return out;
}

std::vector<int> Taxonomy::detection_classes() const {
  std::vector<int> out{kNoDp};
  const auto dp = active_dp_ids();
  out.insert(out.end(), dp.begin(), dp.end());
  return out;
}

Taxonomy Taxonomy::with_active(const CategorySet& dp_ids) const {
  Taxonomy copy = *this;
  for (auto& c : copy.categories_) c.active = c.id == kNoDp || dp_ids.count(c.id) > 0;
  return copy;
}

Taxonomy parse_taxonomy(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(json_text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(ErrorKind::kParse, "taxonomy parse error at line " + std::to_string(line) +
                                       ", column " + std::to_string(col) + ": " + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorKind::kParse, "taxonomy file must be a JSON array");

  std::vector<DPCategory> categories;
  categories.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& entry = doc[i];
    if (!entry.is_object()) {
      throw Error(ErrorKind::kValidation, "taxonomy entry " + std::to_string(i) + " is not an object");
    }
    DPCategory c;
    if (!entry.contains("id") || !entry["id"].is_number_integer()) {
      throw Error(ErrorKind::kValidation, "taxonomy entry " + std::to_string(i) + ": missing integer 'id'");
    }
    c.id = entry["id"].get<int>();
    c.name = required_string(entry, "name", i);
    c.definition = required_string(entry, "definition", i);
    if (entry.contains("cases")) {
      if (!entry["cases"].is_array()) {
        throw Error(ErrorKind::kValidation, "taxonomy entry " + std::to_string(i) + ": 'cases' must be an array");
      }
      for (const auto& s : entry["cases"]) c.cases.push_back(s.get<std::string>());
    }
    c.active = entry.value("active", true);
    if (entry.contains("aliases")) {
      for (const auto& s : entry["aliases"]) c.aliases.push_back(s.get<std::string>());
    }
    if (entry.contains("samples")) {
      for (const auto& [platform, count] : entry["samples"].items()) {
        c.samples[platform] = count.get<int>();
      }
    }
    categories.push_back(std::move(c));
  }
  return Taxonomy(std::move(categories), "sha256:" + sha256_hex(json_text).substr(0, 16));
}

Taxonomy load_taxonomy(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return parse_taxonomy(text);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::string default_taxonomy_path() {
  return std::string(DPGUARD_DEFAULT_ASSET_DIR) + "/taxonomy.json";
}

Taxonomy load_default_taxonomy() { return load_taxonomy(default_taxonomy_path()); }

std::string normalize_name(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      pending_space = true;
    }
  }
  return out;
}

std::string render_system_prompt(const Taxonomy& taxonomy) {
  std::ostringstream out;
  out << "You are an expert reviewer of user-interface screenshots from mobile apps and websites. "
         "Your task is to identify deceptive design in the screenshot using the taxonomy below.\n\n"
         "Deceptive pattern categories:\n";
  for (int id : taxonomy.active_dp_ids()) {
    const auto& c = taxonomy.at(id);
    out << id << ". **" << c.name << "**: " << c.definition << '\n';
  }
  out << "\nName every category that is present using its exact name from the list above. "
         "If the screenshot shows none of these categories, say so plainly.\n";
  return out.str();
}

CategorySet parse_category_mentions(std::string_view text, const Taxonomy& taxonomy) {
  const std::string padded = " " + normalize_name(text) + " ";
  for (auto phrase : kNegativeVerdicts) {
    if (contains_phrase(padded, phrase)) return {kNoDp};
  }

  CategorySet found;
  for (const auto& c : taxonomy.categories()) {
    if (c.id == kNoDp) continue;
    bool hit = contains_phrase(padded, normalize_name(c.name));
    for (const auto& alias : c.aliases) {
      if (hit) break;
      hit = contains_phrase(padded, normalize_name(alias));
    }
    if (hit) found.insert(c.id);
  }

  static const std::regex kNumericTag(R"(\bcategor(?:y|ies)\s*(?:#|no\.?|id)?\s*(\d{1,3})\b)",
                                      std::regex::icase);
  const std::string raw(text);
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kNumericTag);
       it != std::sregex_iterator(); ++it) {
    const int id = std::stoi((*it)[1].str());
    if (id == kNoDp) return {kNoDp};
    if (taxonomy.contains(id)) found.insert(id);
  }

  if (found.empty()) spdlog::debug("no category mention in model output: {}", padded);
  return found;
}

}  // namespace dpguard
