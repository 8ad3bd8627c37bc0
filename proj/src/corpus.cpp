#include "dpguard/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "dpguard/image.hpp"
#include "json.hpp"

namespace dpguard {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string image_problem(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "unreadable image " + path;
  std::uint8_t head[8] = {};
  in.read(reinterpret_cast<char*>(head), sizeof head);
  if (sniff_format(std::span<const std::uint8_t>(head, static_cast<std::size_t>(in.gcount()))) ==
      ImageFormat::kUnknown) {
    return "not a PNG/JPEG image " + path;
  }
  return {};
}

std::string format_issues(const std::vector<ManifestIssue>& issues) {
  std::ostringstream out;
  out << issues.size() << " invalid manifest record(s)";
  std::size_t shown = 0;
  for (const auto& issue : issues) {
    if (++shown > 20) {
      out << "\n  ...";
      break;
    }
    out << "\n  line " << issue.line << ": " << issue.message;
  }
  return out.str();
}

}  // namespace

const char* to_string(Platform p) { return p == Platform::kMobile ? "mobile" : "website"; }

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "unassigned";
}

Platform parse_platform(std::string_view text) {
  if (text == "mobile") return Platform::kMobile;
  if (text == "website" || text == "web") return Platform::kWebsite;
  throw Error(ErrorKind::kValidation, "unknown platform '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "validation" || text == "val") return Split::kValidation;
  if (text == "test") return Split::kTest;
  if (text == "unassigned" || text.empty()) return Split::kUnassigned;
  throw Error(ErrorKind::kValidation, "unknown split '" + std::string(text) + "'");
}

std::string Corpus::resolve(const UIRecord& r) const {
  const fs::path p(r.image_ref);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

std::vector<UIRecord> Corpus::in_split(Split s) const {
  std::vector<UIRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

ImportResult parse_manifest(std::string_view text, const Taxonomy& taxonomy,
                            const std::string& base_dir, const ImportOptions& options) {
  ImportResult result;
  result.corpus.taxonomy_version = taxonomy.version();
  result.corpus.base_dir = base_dir;
  std::vector<ManifestIssue> errors;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end >= text.size()) break;
      continue;
    }

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kParse, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      UIRecord r;
      r.image_ref = obj.at("image").get<std::string>();
      r.platform = parse_platform(obj.at("platform").get<std::string>());
      r.source = obj.value("source", std::string{});
      r.group_id = obj.value("group_id", std::string{});
      for (const auto& v : obj.at("labels")) {
        const int id = v.get<int>();
        if (!taxonomy.contains(id)) {
          throw Error(ErrorKind::kValidation, "label id " + std::to_string(id) + " out of range");
        }
        r.labels.insert(id);
      }
      if (obj.contains("split")) r.split = parse_split(obj["split"].get<std::string>());
      if (r.labels.empty()) throw Error(ErrorKind::kValidation, "labels must be nonempty");
      if (r.labels.count(kNoDp) && r.labels.size() > 1) {
        throw Error(ErrorKind::kValidation, "No DP is exclusive with every other label");
      }
      if (r.group_id.empty()) throw Error(ErrorKind::kValidation, "group_id must be nonempty");
      if (options.check_images) {
        UIRecord probe = r;
        const std::string problem = image_problem(result.corpus.resolve(probe));
        if (!problem.empty()) {
          if (options.lenient) {
            result.warnings.push_back({line_no, problem});
          } else {
            errors.push_back({line_no, problem});
          }
        }
      }
      result.corpus.records.push_back(std::move(r));
    } catch (const Error& e) {
      errors.push_back({line_no, e.what()});
    } catch (const json::exception& e) {
      errors.push_back({line_no, e.what()});
    }
    if (end >= text.size()) break;
  }
  if (!errors.empty()) throw Error(ErrorKind::kValidation, format_issues(errors));
  return result;
}

ImportResult import_manifest(const std::string& path, const Taxonomy& taxonomy,
                             const ImportOptions& options) {
  const std::string text = read_text_file(path);
  const std::string base = fs::path(path).parent_path().string();
  try {
    return parse_manifest(text, taxonomy, base, options);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::string to_manifest_line(const UIRecord& record) {
  // Field order is fixed (ordered_json) so re-serialization is byte-stable.
  nlohmann::ordered_json obj;
  obj["image"] = record.image_ref;
  obj["platform"] = to_string(record.platform);
  obj["source"] = record.source;
  obj["labels"] = std::vector<int>(record.labels.begin(), record.labels.end());
  obj["group_id"] = record.group_id;
  if (record.split != Split::kUnassigned) obj["split"] = to_string(record.split);
  return obj.dump();
}

std::string to_manifest(const Corpus& corpus) {
  std::string out;
  for (const auto& r : corpus.records) {
    out += to_manifest_line(r);
    out += '\n';
  }
  return out;
}

Corpus split(const Corpus& corpus, const SplitRatios& ratios, std::uint32_t seed) {
  if (corpus.records.empty()) throw Error(ErrorKind::kValidation, "cannot split an empty corpus");
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw Error(ErrorKind::kValidation, "split ratios must be non-negative and sum to 1");
  }
  const std::size_t n = corpus.records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed);
  shuffle(order, rng);

  // Small epsilon keeps e.g. 0.2 * 10 from flooring to 1.
  const auto floor_count = [n](double ratio) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = floor_count(ratios.validation);
  const std::size_t n_test = floor_count(ratios.test);
  const std::size_t n_train = n - n_val - n_test;

  Corpus out = corpus;
  for (std::size_t k = 0; k < n; ++k) {
    Split s = Split::kTest;
    if (k < n_train) {
      s = Split::kTrain;
    } else if (k < n_train + n_val) {
      s = Split::kValidation;
    }
    out.records[order[k]].split = s;
  }
  return out;
}

std::vector<UIRecord> balanced_sample(const std::vector<UIRecord>& pool,
                                      const std::vector<int>& classes,
                                      const SampleOptions& options, Rng& rng) {
  if (options.batch_size == 0) throw Error(ErrorKind::kValidation, "batch_size must be >= 1");
  const std::size_t target = std::min(options.batch_size, pool.size());
  std::vector<bool> used(pool.size(), false);
  std::vector<std::size_t> quota;

  for (int c : classes) {
    std::vector<std::size_t> labeled;
    std::size_t already = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!pool[i].labels.count(c)) continue;
      if (used[i]) {
        ++already;
      } else {
        labeled.push_back(i);
      }
    }
    const std::size_t want = std::min(options.min_per_category, already + labeled.size());
    if (want <= already) continue;
    for (std::size_t i : sample_without_replacement(labeled, want - already, rng)) {
      used[i] = true;
      quota.push_back(i);
    }
  }

  if (quota.size() > target) {
    quota = sample_without_replacement(quota, target, rng);
    std::fill(used.begin(), used.end(), false);
    for (std::size_t i : quota) used[i] = true;
  }

  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!used[i]) rest.push_back(i);
  }
  const auto fill = sample_without_replacement(rest, target - quota.size(), rng);

  std::vector<UIRecord> batch;
  batch.reserve(target);
  for (std::size_t i : quota) batch.push_back(pool[i]);
  for (std::size_t i : fill) batch.push_back(pool[i]);
  return batch;
}

CorpusStats stats(const std::vector<UIRecord>& records) {
  CorpusStats s;
  for (Platform p : {Platform::kMobile, Platform::kWebsite}) {
    s.total_instances[p] = 0;
    s.total_images[p] = 0;
    s.dp_images[p] = 0;
    s.dp_instances[p] = 0;
  }
  for (const auto& r : records) {
    s.total_images[r.platform] += 1;
    s.total_instances[r.platform] += r.labels.size();
    if (r.is_dp()) {
      s.dp_images[r.platform] += 1;
      s.dp_instances[r.platform] += r.labels.size();
    }
    for (int c : r.labels) {
      auto& cc = s.per_category[c];
      cc.instances[r.platform] += 1;
      cc.images[r.platform] += 1;
    }
  }
  return s;
}

}  // namespace dpguard
