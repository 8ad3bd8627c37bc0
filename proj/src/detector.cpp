#include "dpguard/detector.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "dpguard/digest.hpp"
#include "dpguard/parallel.hpp"
#include "dpguard/prompt_optimizer.hpp"

namespace dpguard::detector {

using json = nlohmann::json;
using classifier::Verdict;

bool DetectionResult::is_deceptive() const {
  if (verdict != Verdict::kDp) return false;
  for (int c : categories) {
    if (c != kNoDp) return true;
  }
  return false;
}

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

json to_json(const DetectionResult& r, bool with_raw) {
  json j;
  j["image"] = r.image_ref;
  j["group_id"] = r.group_id;
  if (r.platform) j["platform"] = to_string(*r.platform);
  j["score"] = r.binary_score;
  j["verdict"] = r.verdict == Verdict::kDp ? "DP" : "non-DP";
  j["categories"] = std::vector<int>(r.categories.begin(), r.categories.end());
  j["flags"] = std::vector<std::string>(r.flags.begin(), r.flags.end());
  if (r.raw_output) {
    j["raw_sha256"] = sha256_hex(*r.raw_output);
    if (with_raw) j["raw_output"] = *r.raw_output;
  }
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

DetectionResult from_json(const json& j) {
  DetectionResult r;
  r.image_ref = j.at("image").get<std::string>();
  r.group_id = j.value("group_id", "");
  if (j.contains("platform")) r.platform = parse_platform(j.at("platform").get<std::string>());
  r.binary_score = j.at("score").get<double>();
  const std::string v = j.at("verdict").get<std::string>();
  if (v != "DP" && v != "non-DP") throw Error(ErrorKind::kValidation, "unknown verdict '" + v + "'");
  r.verdict = v == "DP" ? Verdict::kDp : Verdict::kNonDp;
  const auto cats = j.at("categories").get<std::vector<int>>();
  r.categories = CategorySet(cats.begin(), cats.end());
  const auto flags = j.value("flags", std::vector<std::string>{});
  r.flags = std::set<std::string>(flags.begin(), flags.end());
  if (j.contains("raw_output")) r.raw_output = j.at("raw_output").get<std::string>();
  r.error = j.value("error", "");
  return r;
}

void require(const DetectorConfig& c) {
  if (!c.scorer) throw Error(ErrorKind::kConfig, "detector needs a stage-1 scorer");
  if (!c.taxonomy) throw Error(ErrorKind::kConfig, "detector needs a taxonomy");
  if (!c.dry_run && !c.gateway) throw Error(ErrorKind::kConfig, "detector needs a gateway unless dry_run is set");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw Error(ErrorKind::kConfig, "threshold must lie in (0, 1)");
}

}  // namespace

std::string result_cache_key(const std::string& image_digest, const DetectorConfig& config) {
  char num[64];
  std::snprintf(num, sizeof num, "%.17g|%.17g", config.threshold, config.temperature);
  const json key = {image_digest,
                    sha256_hex(config.system_prompt + '\0' + config.best_prompt),
                    config.scorer ? config.scorer->descriptor() : "",
                    config.gateway ? config.gateway->descriptor() : "",
                    config.taxonomy ? config.taxonomy->version() : "",
                    num};
  return sha256_hex(key.dump());
}

DetectionResult detect(const DetectInput& input, const DetectorConfig& config) {
  require(config);
  DetectionResult result;
  result.image_ref = input.image_ref.empty() ? input.path : input.image_ref;
  result.group_id = input.group_id;
  result.platform = input.platform;

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint8_t> bytes;
  Image image;
  try {
    bytes = input.bytes.empty() ? read_file_bytes(input.path) : input.bytes;
    image = decode_image(bytes);
  } catch (const Error& e) {
    result.flags.insert(kInputError);
    result.error = e.what();
    return result;
  }

  const std::string image_digest = sha256_hex(bytes);
  const bool use_cache = !config.cache_dir.empty() && !config.dry_run;
  const auto cache_path =
      std::filesystem::path(config.cache_dir) / (result_cache_key(image_digest, config) + ".json");
  if (use_cache && std::filesystem::exists(cache_path)) {
    try {
      DetectionResult cached = from_json(json::parse(read_text_file(cache_path.string())));
      cached.image_ref = result.image_ref;
      cached.group_id = result.group_id;
      cached.platform = result.platform;
      cached.flags.insert(kCached);
      return cached;
    } catch (const std::exception& e) {
      spdlog::warn("ignoring unreadable result cache entry {}: {}", cache_path.string(), e.what());
    }
  }

  result.binary_score = config.scorer->score(image);
  result.verdict = classifier::predict(result.binary_score, config.threshold);
  result.timings.stage1_ms = ms_since(t0);

  if (result.verdict == Verdict::kDp) {
    if (config.dry_run) {
      result.categories.clear();
      result.flags.insert(kDryRun);
      return result;
    }
    const auto t1 = std::chrono::steady_clock::now();
    gateway::ChatRequest req;
    req.system_prompt = config.system_prompt;
    req.user_prompt = config.best_prompt;
    req.temperature = config.temperature;
    req.images = {gateway::make_payload(std::move(bytes))};
    try {
      const auto response = config.gateway->complete(req);
      result.raw_output = response.text;
      const CategorySet predicted = optimizer::prediction_from_output(
          response.text, *config.taxonomy, config.taxonomy->detection_classes());
      result.categories = predicted;
      if (predicted.count(kNoDp)) result.flags.insert(kUnclassifiedDp);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kTransport && e.kind() != ErrorKind::kAuth) throw;
      result.categories = {kNoDp};
      result.flags.insert(kStage2Error);
      result.error = e.what();
    }
    result.timings.stage2_ms = ms_since(t1);
  }

  if (use_cache && !result.has_flag(kStage2Error)) {
    write_file_atomic(cache_path.string(), to_json(result, true).dump());
  }
  return result;
}

std::vector<DetectionResult> detect_batch(const std::vector<DetectInput>& inputs, const DetectorConfig& config,
                                          std::size_t parallelism) {
  require(config);
  if (parallelism < 1) throw Error(ErrorKind::kValidation, "parallelism must be >= 1");
  std::vector<DetectionResult> results(inputs.size());
  parallel_for(inputs.size(), parallelism, [&](std::size_t i) {
    try {
      results[i] = detect(inputs[i], config);
    } catch (const std::exception& e) {
      DetectionResult r;
      r.image_ref = inputs[i].image_ref.empty() ? inputs[i].path : inputs[i].image_ref;
      r.group_id = inputs[i].group_id;
      r.platform = inputs[i].platform;
      r.flags.insert(kStage2Error);
      r.error = e.what();
      results[i] = std::move(r);
    }
  });
  return results;
}

std::string to_json_line(const DetectionResult& result) { return to_json(result, false).dump(); }

DetectionResult from_json_line(std::string_view line) {
  try {
    return from_json(json::parse(line));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, std::string("result line: ") + e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("result line: ") + e.what());
  }
}

std::vector<DetectionResult> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path);
  std::vector<DetectionResult> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const Error& e) {
      throw Error(e.kind(), path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dpguard::detector
