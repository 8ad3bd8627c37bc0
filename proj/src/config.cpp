#include "dpguard/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <type_traits>

#include "toml.hpp"

#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "dpguard/taxonomy.hpp"

namespace dpguard {

namespace fs = std::filesystem;

std::string interpolate_env(const std::string& text, const EnvLookup& env) {
  std::string out;
  for (std::size_t i = 0; i < text.size();) {
    if (text.compare(i, 2, "${") == 0) {
      const auto end = text.find('}', i + 2);
      if (end == std::string::npos) throw Error(ErrorKind::kConfig, "unterminated ${ in \"" + text + "\"");
      const std::string name = text.substr(i + 2, end - i - 2);
      const auto value = env(name);
      if (!value) throw Error(ErrorKind::kConfig, "environment variable " + name + " is not set");
      out += *value;
      i = end + 1;
    } else {
      out += text[i++];
    }
  }
  return out;
}

AppConfig default_config() {
  AppConfig c;
  const std::string assets = DPGUARD_DEFAULT_ASSET_DIR;
  c.taxonomy = default_taxonomy_path();
  c.initial_prompt = assets + "/prompts/initial_prompt.txt";
  c.best_prompt = assets + "/prompts/best_prompt.txt";
  c.mutation_instructions = assets + "/prompts/mutation_instructions.txt";
  return c;
}

namespace {

class Section {
 public:
  Section(const toml::table* table, std::string name, std::set<std::string> allowed, const std::string& base_dir,
          const EnvLookup& env)
      : table_(table), name_(std::move(name)), base_(base_dir), env_(env) {
    if (!table_) return;
    for (const auto& [key, node] : *table_) {
      if (!allowed.count(std::string(key.str()))) {
        throw Error(ErrorKind::kConfig, "unknown key [" + name_ + "] " + std::string(key.str()));
      }
    }
  }

  template <typename T>
  void number(const char* key, T& out) const {
    const toml::node* n = find(key);
    if (!n) return;
    if (auto v = n->value<double>()) {
      if constexpr (std::is_unsigned_v<T>) {
        if (*v < 0) bad(key, "non-negative");
      }
      out = static_cast<T>(*v);
    } else {
      bad(key, "a number");
    }
  }
  void boolean(const char* key, bool& out) const {
    const toml::node* n = find(key);
    if (!n) return;
    if (auto v = n->value<bool>()) {
      out = *v;
    } else {
      bad(key, "a boolean");
    }
  }
  void text(const char* key, std::string& out) const {
    const toml::node* n = find(key);
    if (!n) return;
    if (auto v = n->value<std::string>()) {
      out = interpolate_env(*v, env_);
    } else {
      bad(key, "a string");
    }
  }
  // Input file: resolved against the config directory and required to exist.
  void input_path(const char* key, std::string& out) const {
    std::string raw;
    text(key, raw);
    if (raw.empty()) return;
    fs::path p(raw);
    if (p.is_relative()) p = fs::path(base_) / p;
    if (!fs::exists(p)) {
      throw Error(ErrorKind::kConfig, "[" + name_ + "] " + key + ": file not found: " + p.string());
    }
    out = p.string();
  }
  void output_path(const char* key, std::string& out) const {
    std::string raw;
    text(key, raw);
    if (raw.empty()) return;
    fs::path p(raw);
    if (p.is_relative()) p = fs::path(base_) / p;
    out = p.string();
  }

 private:
  const toml::node* find(const char* key) const { return table_ ? table_->get(key) : nullptr; }
  [[noreturn]] void bad(const char* key, const char* what) const {
    throw Error(ErrorKind::kConfig, "[" + name_ + "] " + key + " must be " + what);
  }

  const toml::table* table_;
  std::string name_;
  std::string base_;
  const EnvLookup& env_;
};

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

}  // namespace

AppConfig parse_config(std::string_view toml_text, const std::string& base_dir, const EnvLookup& env_in) {
  const EnvLookup env = env_in ? env_in : process_env();
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config line " << e.source().begin.line << ", column " << e.source().begin.column << ": "
        << e.description();
    throw Error(ErrorKind::kConfig, msg.str());
  }
  static const std::set<std::string> sections = {"paths",     "gateway", "embedder", "classifier",
                                                 "optimizer", "crawl",   "dedup",    "detect"};
  for (const auto& [key, node] : root) {
    if (!sections.count(std::string(key.str())) || !node.is_table()) {
      throw Error(ErrorKind::kConfig, "unknown config section '" + std::string(key.str()) + "'");
    }
  }
  const auto table = [&](const char* name) { return root[name].as_table(); };

  AppConfig c = default_config();

  Section paths(table("paths"), "paths",
                {"taxonomy", "initial_prompt", "best_prompt", "mutation_instructions", "system_prompt", "cache_dir"},
                base_dir, env);
  paths.input_path("taxonomy", c.taxonomy);
  paths.input_path("initial_prompt", c.initial_prompt);
  paths.input_path("best_prompt", c.best_prompt);
  paths.input_path("mutation_instructions", c.mutation_instructions);
  paths.input_path("system_prompt", c.system_prompt);
  paths.output_path("cache_dir", c.cache_dir);

  Section gw(table("gateway"), "gateway",
             {"backend", "endpoint", "model", "api_key_env", "requests_per_second", "max_in_flight", "timeout_s",
              "max_attempts", "mock_script"},
             base_dir, env);
  gw.text("backend", c.gateway.backend);
  gw.text("endpoint", c.gateway.endpoint);
  gw.text("model", c.gateway.model);
  gw.text("api_key_env", c.gateway.api_key_env);
  gw.number("requests_per_second", c.gateway.requests_per_second);
  gw.number("max_in_flight", c.gateway.max_in_flight);
  gw.number("timeout_s", c.gateway.timeout_s);
  gw.number("max_attempts", c.gateway.max_attempts);
  gw.input_path("mock_script", c.gateway.mock_script);
  if (c.gateway.backend != "mock" && c.gateway.backend != "http") {
    throw Error(ErrorKind::kConfig, "[gateway] backend must be \"mock\" or \"http\"");
  }
  if (c.gateway.backend == "http" && c.gateway.endpoint.empty()) {
    throw Error(ErrorKind::kConfig, "[gateway] endpoint is required for the http backend");
  }

  Section em(table("embedder"), "embedder", {"backend", "endpoint", "model", "dimension"}, base_dir, env);
  em.text("backend", c.embedder.backend);
  em.text("endpoint", c.embedder.endpoint);
  em.text("model", c.embedder.model);
  em.number("dimension", c.embedder.dimension);
  if (c.embedder.backend != "bag-of-words" && c.embedder.backend != "hashing" && c.embedder.backend != "http") {
    throw Error(ErrorKind::kConfig, "[embedder] backend must be bag-of-words, hashing, or http");
  }

  Section cl(table("classifier"), "classifier", {"model", "threshold", "mock_score", "mock_scores"}, base_dir, env);
  cl.input_path("model", c.classifier.model);
  cl.number("threshold", c.classifier.threshold);
  double mock = -1.0;
  cl.number("mock_score", mock);
  if (mock >= 0.0) c.classifier.mock_score = mock;
  cl.input_path("mock_scores", c.classifier.mock_scores);
  if (!(c.classifier.threshold > 0.0 && c.classifier.threshold < 1.0)) {
    throw Error(ErrorKind::kConfig, "[classifier] threshold must lie in (0, 1)");
  }

  Section op(table("optimizer"), "optimizer",
             {"queue_size", "new_per_round", "rounds", "batch_size", "min_per_category", "similarity_threshold",
              "stagnation_limit", "epsilon", "mutation_temperature", "detection_temperature", "max_flagged_fraction",
              "parallelism"},
             base_dir, env);
  auto& o = c.optimizer;
  op.number("queue_size", o.queue_size);
  op.number("new_per_round", o.new_per_round);
  op.number("rounds", o.rounds);
  op.number("batch_size", o.batch_size);
  op.number("min_per_category", o.min_per_category);
  op.number("similarity_threshold", o.similarity_threshold);
  op.number("stagnation_limit", o.stagnation_limit);
  op.number("epsilon", o.epsilon);
  op.number("mutation_temperature", o.mutation_temperature);
  op.number("detection_temperature", o.detection_temperature);
  op.number("max_flagged_fraction", o.max_flagged_fraction);
  op.number("parallelism", o.parallelism);
  o.validate();

  Section cr(table("crawl"), "crawl",
             {"max_pages", "fanout", "timeout_s", "politeness_ms", "max_redirects", "respect_robots", "renderer",
              "webdriver_url", "workers", "user_agent"},
             base_dir, env);
  auto& lim = c.crawl.limits;
  cr.number("max_pages", lim.max_pages_per_domain);
  cr.number("fanout", lim.fanout);
  double timeout = lim.request_timeout.count();
  cr.number("timeout_s", timeout);
  lim.request_timeout = std::chrono::duration<double>(timeout);
  double politeness_ms = lim.politeness_delay.count() * 1000.0;
  cr.number("politeness_ms", politeness_ms);
  lim.politeness_delay = std::chrono::duration<double>(politeness_ms / 1000.0);
  cr.number("max_redirects", lim.max_redirects);
  cr.boolean("respect_robots", lim.respect_robots);
  cr.text("user_agent", lim.user_agent);
  cr.text("renderer", c.crawl.renderer);
  cr.text("webdriver_url", c.crawl.webdriver_url);
  cr.number("workers", c.crawl.workers);
  lim.validate();
  if (c.crawl.renderer != "static" && c.crawl.renderer != "webdriver") {
    throw Error(ErrorKind::kConfig, "[crawl] renderer must be \"static\" or \"webdriver\"");
  }
  if (c.crawl.renderer == "webdriver" && c.crawl.webdriver_url.empty()) {
    throw Error(ErrorKind::kConfig, "[crawl] webdriver_url is required for the webdriver renderer");
  }

  Section dd(table("dedup"), "dedup", {"intra_threshold", "common_threshold", "min_bytes"}, base_dir, env);
  dd.number("intra_threshold", c.dedup.intra_threshold);
  dd.number("common_threshold", c.dedup.common_threshold);
  dd.number("min_bytes", c.dedup.min_bytes);

  Section de(table("detect"), "detect", {"parallelism"}, base_dir, env);
  de.number("parallelism", c.detect_parallelism);
  if (c.detect_parallelism < 1) throw Error(ErrorKind::kConfig, "[detect] parallelism must be >= 1");

  return c;
}

AppConfig load_config(const std::string& path, const EnvLookup& env) {
  if (!fs::exists(path)) throw Error(ErrorKind::kConfig, "config file not found: " + path);
  const auto base = fs::absolute(path).parent_path().string();
  AppConfig c = parse_config(read_text_file(path), base, env);
  c.source = path;
  return c;
}

}  // namespace dpguard
