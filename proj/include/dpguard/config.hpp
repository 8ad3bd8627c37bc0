#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include "dpguard/harvester.hpp"
#include "dpguard/prompt_optimizer.hpp"

namespace dpguard {

struct GatewayConfig {
  std::string backend = "mock";  // mock | http
  std::string endpoint;
  std::string model;
  std::string api_key_env = "DPGUARD_API_KEY";
  double requests_per_second = 1.0;
  std::size_t max_in_flight = 4;
  double timeout_s = 120.0;
  int max_attempts = 5;
  std::string mock_script;  // JSON file for the scripted backend
};

struct EmbedderConfig {
  std::string backend = "bag-of-words";  // bag-of-words | hashing | http
  std::string endpoint;
  std::string model;
  std::size_t dimension = 512;
};

struct ClassifierConfig {
  std::string model;  // .onnx or baseline .json
  double threshold = 0.5;
  std::optional<double> mock_score;  // scripted stage-1 default score
  std::string mock_scores;           // JSON {image path: score}
};

struct DedupConfig {
  double intra_threshold = 0.95;
  double common_threshold = 0.90;
  std::uintmax_t min_bytes = 8192;
};

struct CrawlConfig {
  harvester::CrawlLimits limits;
  std::string renderer = "static";  // static | webdriver
  std::string webdriver_url;
  std::size_t workers = 4;
};

struct AppConfig {
  std::string source;  // config file path, empty for defaults
  std::string taxonomy;
  std::string initial_prompt;
  std::string best_prompt;
  std::string mutation_instructions;
  std::string system_prompt;  // empty: rendered from the taxonomy
  std::string cache_dir;      // empty: <output>/cache
  GatewayConfig gateway;
  EmbedderConfig embedder;
  ClassifierConfig classifier;
  optimizer::OptimizerConfig optimizer;
  CrawlConfig crawl;
  DedupConfig dedup;
  std::size_t detect_parallelism = 4;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

// Replaces ${NAME} with the variable's value; unset names are config errors.
std::string interpolate_env(const std::string& text, const EnvLookup& env);

// Defaults point at the shipped assets. Relative paths in a file resolve
// against the file's directory; every referenced input file must exist.
AppConfig default_config();
AppConfig load_config(const std::string& path, const EnvLookup& env = {});
AppConfig parse_config(std::string_view toml_text, const std::string& base_dir, const EnvLookup& env = {});

}  // namespace dpguard
