#include "dpguard/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dpguard/classifier.hpp"
#include "dpguard/config.hpp"
#include "dpguard/corpus.hpp"
#include "dpguard/detector.hpp"
#include "dpguard/digest.hpp"
#include "dpguard/gateway.hpp"
#include "dpguard/harvester.hpp"
#include "dpguard/metrics.hpp"
#include "dpguard/onnx_model.hpp"
#include "dpguard/prompt_optimizer.hpp"
#include "dpguard/reporter.hpp"

namespace dpguard::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Context {
  std::string config_path;
  std::uint32_t seed = 42;
  std::string output = "out";
  std::ostream* out = nullptr;
  AppConfig config;
  Taxonomy taxonomy;

  std::string output_file(const std::string& name) const {
    const fs::path p = fs::path(output) / name;
    fs::create_directories(p.parent_path());
    return p.string();
  }
};

void init_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_color_mt("dpguard");
  spdlog::set_default_logger(logger);
  const char* level = std::getenv("DPGUARD_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

void load(Context& ctx) {
  ctx.config = ctx.config_path.empty() ? default_config() : load_config(ctx.config_path);
  ctx.taxonomy = load_taxonomy(ctx.config.taxonomy);
}

std::string system_prompt(const Context& ctx) {
  if (!ctx.config.system_prompt.empty()) return read_text_file(ctx.config.system_prompt);
  return render_system_prompt(ctx.taxonomy);
}

std::unique_ptr<classifier::BinaryScorer> make_scorer(const Context& ctx, const std::string& model_override = {}) {
  const ClassifierConfig& c = ctx.config.classifier;
  const std::string model = model_override.empty() ? c.model : model_override;
  if (model.empty() && (c.mock_score || !c.mock_scores.empty())) {
    auto scorer = std::make_unique<classifier::ScriptedScorer>(c.mock_score.value_or(0.0));
    if (!c.mock_scores.empty()) {
      const json j = json::parse(read_text_file(c.mock_scores));
      const fs::path base = fs::path(c.mock_scores).parent_path();
      for (const auto& [file, score] : j.items()) {
        fs::path p(file);
        if (p.is_relative()) p = base / p;
        scorer->set(read_image(p.string()), score.get<double>());
      }
    }
    return scorer;
  }
  if (model.empty()) throw Error(ErrorKind::kConfig, "no stage-1 model configured ([classifier] model)");
  if (fs::path(model).extension() == ".onnx") return onnx::load_external_model(model);
  return std::make_unique<classifier::LogisticScorer>(classifier::LogisticScorer::load(model));
}

std::unique_ptr<gateway::Gateway> make_gateway(const Context& ctx) {
  const GatewayConfig& g = ctx.config.gateway;
  std::shared_ptr<gateway::ChatBackend> backend;
  if (g.backend == "mock") {
    backend = g.mock_script.empty()
                  ? std::make_shared<gateway::ScriptedChat>()
                  : gateway::ScriptedChat::from_json(read_text_file(g.mock_script),
                                                     fs::path(g.mock_script).parent_path().string());
  } else {
    backend = std::make_shared<gateway::HttpChatBackend>(gateway::HttpBackendOptions{
        g.endpoint, g.model, g.api_key_env, std::chrono::duration<double>(g.timeout_s)});
  }
  gateway::GatewayOptions options;
  options.retry.max_attempts = g.max_attempts;
  options.requests_per_second = g.backend == "mock" ? 0.0 : g.requests_per_second;
  options.max_in_flight = g.max_in_flight;
  options.deadline = std::chrono::duration<double>(g.timeout_s);
  options.cache_dir = ctx.config.cache_dir.empty() ? (fs::path(ctx.output) / "cache" / "chat").string()
                                                   : ctx.config.cache_dir;
  return std::make_unique<gateway::Gateway>(backend, options);
}

std::unique_ptr<gateway::Embedder> make_embedder(const Context& ctx) {
  const EmbedderConfig& e = ctx.config.embedder;
  if (e.backend == "hashing") return std::make_unique<gateway::HashingEmbedder>(e.dimension);
  if (e.backend == "http") {
    return std::make_unique<gateway::HttpEmbedder>(gateway::HttpBackendOptions{
        e.endpoint, e.model, ctx.config.gateway.api_key_env, std::chrono::duration<double>(ctx.config.gateway.timeout_s)});
  }
  return std::make_unique<gateway::BagOfWordsEmbedder>();
}

ImportResult import(const Context& ctx, const std::string& manifest, bool check_images, bool lenient = false) {
  ImportOptions opts;
  opts.check_images = check_images;
  opts.lenient = lenient;
  auto result = import_manifest(manifest, ctx.taxonomy, opts);
  for (const auto& w : result.warnings) spdlog::warn("{}:{}: {}", manifest, w.line, w.message);
  return result;
}

// Rewrites image refs so the manifest stays valid when written to `path`.
std::string manifest_at(Corpus corpus, const std::string& path) {
  const fs::path dir = fs::absolute(fs::path(path).parent_path());
  for (auto& r : corpus.records) {
    if (fs::path(r.image_ref).is_absolute()) continue;
    r.image_ref = fs::absolute(corpus.resolve(r)).lexically_normal().lexically_proximate(dir).generic_string();
  }
  corpus.base_dir = dir.string();
  return to_manifest(corpus);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::kUsage, "not a number: '" + item + "'");
    }
  }
  return out;
}

// ----- subcommands -----

void cmd_taxonomy_show(Context& ctx, bool as_json) {
  load(ctx);
  std::ostream& out = *ctx.out;
  if (as_json) {
    out << read_text_file(ctx.config.taxonomy);
    return;
  }
  for (const auto& c : ctx.taxonomy.categories()) {
    out << c.id << '\t' << c.name << '\t' << (c.id == kNoDp ? "benign" : c.active ? "active" : "inactive") << '\n';
  }
}

void cmd_corpus_import(Context& ctx, const std::string& manifest, bool check_images, bool lenient) {
  load(ctx);
  const auto result = import(ctx, manifest, check_images, lenient);
  const std::string path = ctx.output_file("corpus.jsonl");
  write_file_atomic(path, manifest_at(result.corpus, path));
  *ctx.out << result.corpus.records.size() << " records imported, " << result.warnings.size() << " warnings\n";
}

void cmd_corpus_split(Context& ctx, const std::string& manifest, const std::string& ratios_text, bool check_images) {
  load(ctx);
  const auto r = parse_list(ratios_text);
  if (r.size() != 3) throw Error(ErrorKind::kUsage, "--ratios needs three comma-separated values");
  const Corpus split_corpus = split(import(ctx, manifest, check_images).corpus, {r[0], r[1], r[2]}, ctx.seed);
  const std::string path = ctx.output_file("split.jsonl");
  write_file_atomic(path, manifest_at(split_corpus, path));
  *ctx.out << "train " << split_corpus.in_split(Split::kTrain).size() << ", validation "
           << split_corpus.in_split(Split::kValidation).size() << ", test "
           << split_corpus.in_split(Split::kTest).size() << '\n';
}

void cmd_corpus_stats(Context& ctx, const std::string& manifest, bool check_images) {
  load(ctx);
  const auto corpus = import(ctx, manifest, check_images).corpus;
  const CorpusStats s = stats(corpus.records);
  json j = json::object();
  json cats = json::array();
  std::ostream& out = *ctx.out;
  out << "id\tname\tmobile\twebsite\ttotal\n";
  for (const auto& c : ctx.taxonomy.categories()) {
    std::size_t m = 0, w = 0;
    if (auto it = s.per_category.find(c.id); it != s.per_category.end()) {
      m = it->second.instances.count(Platform::kMobile) ? it->second.instances.at(Platform::kMobile) : 0;
      w = it->second.instances.count(Platform::kWebsite) ? it->second.instances.at(Platform::kWebsite) : 0;
    }
    cats.push_back({{"id", c.id}, {"name", c.name}, {"mobile", m}, {"website", w}, {"total", m + w}});
    out << c.id << '\t' << c.name << '\t' << m << '\t' << w << '\t' << m + w << '\n';
  }
  j["categories"] = cats;
  for (Platform p : {Platform::kMobile, Platform::kWebsite}) {
    const auto get = [&](const std::map<Platform, std::size_t>& m) { return m.count(p) ? m.at(p) : 0; };
    j["platforms"][to_string(p)] = {{"images", get(s.total_images)},
                                    {"instances", get(s.total_instances)},
                                    {"dp_images", get(s.dp_images)},
                                    {"dp_instances", get(s.dp_instances)}};
  }
  write_file_atomic(ctx.output_file("stats.json"), j.dump(2) + "\n");
}

Corpus ensure_split(const Context& ctx, Corpus corpus) {
  const bool unassigned = std::all_of(corpus.records.begin(), corpus.records.end(),
                                      [](const UIRecord& r) { return r.split == Split::kUnassigned; });
  if (!unassigned) return corpus;
  spdlog::info("manifest carries no split; splitting 6:2:2 with seed {}", ctx.seed);
  return split(corpus, {}, ctx.seed);
}

std::vector<classifier::LabeledFeatures> featurize_split(const Corpus& corpus, Split s) {
  std::vector<classifier::LabeledFeatures> out;
  for (const auto& r : corpus.in_split(s)) {
    out.push_back({classifier::featurize(read_image(corpus.resolve(r))), r.is_dp() ? 1 : 0});
  }
  return out;
}

json binary_json(const classifier::BinaryMetrics& m) {
  const auto prf = [](const metrics::PRF& p) {
    return json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
  };
  return {{"dp", prf(m.dp)}, {"non_dp", prf(m.non_dp)}};
}

void cmd_classifier_train(Context& ctx, const std::string& manifest, int epochs, double lr, bool full_batch) {
  load(ctx);
  const Corpus corpus = ensure_split(ctx, import(ctx, manifest, true).corpus);
  const auto train = featurize_split(corpus, Split::kTrain);
  const auto val = featurize_split(corpus, Split::kValidation);
  const auto test = featurize_split(corpus, Split::kTest);
  classifier::TrainOptions opts;
  opts.epochs = epochs;
  opts.learning_rate = lr;
  opts.seed = ctx.seed;
  opts.full_batch = full_batch;
  classifier::TrainReport report;
  const auto model = classifier::train_baseline(train, val, opts, &report);
  model.save(ctx.output_file("baseline.json"));
  onnx::export_baseline(model, ctx.output_file("baseline.onnx"));

  json j = {{"epoch_loss", report.epoch_loss}, {"selection_f1", report.selection_f1}, {"best_epoch", report.best_epoch}};
  if (!test.empty()) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& t : test) {
      scores.push_back(model.score(t.x));
      labels.push_back(t.label);
    }
    j["test"] = binary_json(classifier::evaluate_binary(scores, labels, ctx.config.classifier.threshold));
  }
  write_file_atomic(ctx.output_file("train_report.json"), j.dump(2) + "\n");
  *ctx.out << j.dump(2) << '\n';
}

void cmd_classifier_eval(Context& ctx, const std::string& manifest, const std::string& model) {
  load(ctx);
  const Corpus corpus = import(ctx, manifest, true).corpus;
  auto scorer = make_scorer(ctx, model);
  auto records = corpus.in_split(Split::kTest);
  if (records.empty()) records = corpus.records;
  std::vector<Image> images;
  std::vector<classifier::LabeledImage> labeled;
  images.reserve(records.size());
  for (const auto& r : records) images.push_back(read_image(corpus.resolve(r)));
  for (std::size_t i = 0; i < records.size(); ++i) labeled.push_back({&images[i], records[i].is_dp() ? 1 : 0});
  const json j = binary_json(classifier::evaluate_binary(*scorer, labeled, ctx.config.classifier.threshold));
  write_file_atomic(ctx.output_file("classifier_eval.json"), j.dump(2) + "\n");
  *ctx.out << j.dump(2) << '\n';
}

void cmd_classifier_predict(Context& ctx, const std::vector<std::string>& images, const std::string& model) {
  load(ctx);
  auto scorer = make_scorer(ctx, model);
  std::string lines;
  for (const auto& path : images) {
    const double s = scorer->score(read_image(path));
    const auto v = classifier::predict(s, ctx.config.classifier.threshold);
    lines += json{{"image", path}, {"score", s}, {"verdict", v == classifier::Verdict::kDp ? "DP" : "non-DP"}}.dump() + "\n";
  }
  write_file_atomic(ctx.output_file("predictions.jsonl"), lines);
  *ctx.out << lines;
}

void cmd_optimize(Context& ctx, const std::string& manifest, bool dry_run, int rounds) {
  load(ctx);
  optimizer::OptimizerConfig oc = ctx.config.optimizer;
  oc.seed = ctx.seed;
  if (rounds > 0) oc.rounds = rounds;
  oc.validate();
  const Corpus corpus = ensure_split(ctx, import(ctx, manifest, true).corpus);
  const optimizer::PromptAssets assets{system_prompt(ctx), read_text_file(ctx.config.initial_prompt),
                                       read_text_file(ctx.config.mutation_instructions)};
  const auto train_size = corpus.in_split(Split::kTrain).size();
  if (dry_run) {
    const json plan = {{"train_records", train_size},
                       {"queue_size", oc.queue_size},
                       {"new_per_round", oc.new_per_round},
                       {"rounds", oc.rounds},
                       {"batch_size", oc.batch_size},
                       {"round1_candidates", oc.queue_size + oc.new_per_round - 1},
                       {"max_chat_calls_round1", 10 * (oc.queue_size + oc.new_per_round - 1) +
                                                     (oc.queue_size + oc.new_per_round) * oc.batch_size}};
    *ctx.out << plan.dump(2) << '\n';
    return;
  }
  auto gw = make_gateway(ctx);
  auto embedder = make_embedder(ctx);
  try {
    const auto result = optimizer::optimize(oc, corpus, ctx.taxonomy, *gw, *embedder, assets);
    write_file_atomic(ctx.output_file("best_prompt.txt"), result.best.text + "\n");
    write_file_atomic(ctx.output_file("optimize_history.json"), optimizer::history_to_json(result.history, 2) + "\n");
    json queue = json::array();
    for (const auto& e : result.queue.entries) {
      queue.push_back({{"id", e.prompt.id},
                       {"parent_id", e.prompt.parent_id ? json(*e.prompt.parent_id) : json(nullptr)},
                       {"round_created", e.prompt.round_created},
                       {"loss", e.last_loss},
                       {"text", e.prompt.text}});
    }
    write_file_atomic(ctx.output_file("queue.json"), queue.dump(2) + "\n");
    *ctx.out << "best prompt #" << result.best.id << " after " << result.history.size() << " rounds"
             << (result.early_stopped ? " (early stop)" : "") << ", loss " << result.history.back().best_loss << '\n';
  } catch (const optimizer::OptimizeError& e) {
    write_file_atomic(ctx.output_file("optimize_history.json"), optimizer::history_to_json(e.history(), 2) + "\n");
    throw;
  }
}

void cmd_detect(Context& ctx, const std::vector<std::string>& images, const std::string& manifest,
                const std::string& split_name, bool dry_run) {
  load(ctx);
  if (images.empty() == manifest.empty()) throw Error(ErrorKind::kUsage, "detect needs either --image or --manifest");
  std::vector<detector::DetectInput> inputs;
  if (!manifest.empty()) {
    const Corpus corpus = import(ctx, manifest, false).corpus;
    const Split only = split_name.empty() ? Split::kUnassigned : parse_split(split_name);
    for (const auto& r : corpus.records) {
      if (only != Split::kUnassigned && r.split != only) continue;
      inputs.push_back({r.image_ref, corpus.resolve(r), {}, r.group_id, r.platform});
    }
  } else {
    for (const auto& p : images) inputs.push_back({p, p, {}, fs::path(p).parent_path().filename().string(), std::nullopt});
  }
  auto scorer = make_scorer(ctx);
  std::unique_ptr<gateway::Gateway> gw;
  if (!dry_run) gw = make_gateway(ctx);
  detector::DetectorConfig dc;
  dc.scorer = scorer.get();
  dc.gateway = gw.get();
  dc.best_prompt = read_text_file(ctx.config.best_prompt);
  dc.system_prompt = system_prompt(ctx);
  dc.taxonomy = &ctx.taxonomy;
  dc.threshold = ctx.config.classifier.threshold;
  dc.dry_run = dry_run;
  if (!dry_run) dc.cache_dir = (fs::path(ctx.output) / "cache" / "results").string();
  const auto results = detector::detect_batch(inputs, dc, ctx.config.detect_parallelism);
  std::string lines;
  for (const auto& r : results) lines += detector::to_json_line(r) + "\n";
  write_file_atomic(ctx.output_file("detections.jsonl"), lines);
  *ctx.out << lines;
}

void cmd_evaluate(Context& ctx, const std::string& results_path, const std::string& manifest, bool no_dp_class,
                  const std::string& supported) {
  load(ctx);
  const Corpus corpus = import(ctx, manifest, false).corpus;
  std::map<std::string, const UIRecord*> truth;
  for (const auto& r : corpus.records) truth[r.image_ref] = &r;
  std::vector<CategorySet> preds, truths;
  std::size_t unmatched = 0;
  for (const auto& r : detector::read_results(results_path)) {
    auto it = truth.find(r.image_ref);
    if (it == truth.end()) {
      ++unmatched;
      continue;
    }
    CategorySet p = r.verdict == classifier::Verdict::kDp ? r.categories : CategorySet{kNoDp};
    if (p.empty()) p = {kNoDp};
    preds.push_back(std::move(p));
    truths.push_back(it->second->labels);
  }
  if (unmatched) spdlog::warn("{} results have no manifest record and were ignored", unmatched);
  if (preds.empty()) throw Error(ErrorKind::kValidation, "no detection result matches a manifest record");
  metrics::EvalOptions opts;
  opts.include_no_dp = !no_dp_class;
  if (!supported.empty()) {
    for (double v : parse_list(supported)) opts.supported.push_back(static_cast<int>(v));
  }
  const auto report = metrics::evaluate(preds, truths, ctx.taxonomy, opts);
  write_file_atomic(ctx.output_file("evaluation.json"), metrics::to_json(report) + "\n");
  *ctx.out << metrics::to_table(report);
}

void cmd_crawl(Context& ctx, std::vector<std::string> urls, const std::string& seeds_file, bool dry_run, int max_pages,
               int fanout, double politeness_ms) {
  load(ctx);
  if (!seeds_file.empty()) {
    std::istringstream in(read_text_file(seeds_file));
    std::string line;
    while (std::getline(in, line)) {
      line.erase(line.find_last_not_of(" \t\r") + 1);
      line.erase(0, line.find_first_not_of(" \t"));
      if (!line.empty() && line[0] != '#') urls.push_back(line);
    }
  }
  if (urls.empty()) throw Error(ErrorKind::kUsage, "crawl needs --url or --seeds");
  harvester::CrawlLimits limits = ctx.config.crawl.limits;
  if (max_pages > 0) limits.max_pages_per_domain = static_cast<std::size_t>(max_pages);
  if (fanout >= 0) limits.fanout = static_cast<std::size_t>(fanout);
  if (politeness_ms >= 0) limits.politeness_delay = std::chrono::duration<double>(politeness_ms / 1000.0);
  limits.validate();
  if (dry_run) {
    json plan = json::array();
    for (const auto& u : urls) {
      plan.push_back({{"seed", u},
                      {"domain", harvester::registrable_domain(harvester::url_host(u))},
                      {"max_pages", limits.max_pages_per_domain},
                      {"fanout", limits.fanout}});
    }
    *ctx.out << plan.dump(2) << '\n';
    return;
  }
  const CrawlConfig& cc = ctx.config.crawl;
  const auto factory = [&]() -> std::unique_ptr<harvester::Renderer> {
    if (cc.renderer == "webdriver") return std::make_unique<harvester::WebDriverRenderer>(cc.webdriver_url, limits);
    return std::make_unique<harvester::StaticRenderer>(limits);
  };
  const auto sites = harvester::crawl_sites(urls, factory, limits, ctx.seed, cc.workers,
                                            (fs::path(ctx.output) / "crawl" / "screens").string());
  std::string alive, records;
  std::map<std::string, int> buckets;
  std::size_t pages = 0;
  for (const auto& s : sites) {
    alive += json{{"url", s.alive.url}, {"status", s.alive.status}, {"error", s.alive.error}, {"bucket", s.alive.bucket()}}
                 .dump() +
             "\n";
    ++buckets[s.alive.bucket()];
    for (const auto& r : s.records) records += harvester::to_json_line(r) + "\n";
    pages += s.records.size();
  }
  write_file_atomic(ctx.output_file("crawl/alive.jsonl"), alive);
  write_file_atomic(ctx.output_file("crawl/records.jsonl"), records);
  *ctx.out << "seeds " << sites.size() << ", pages " << pages << ", status";
  for (const auto& [b, n] : buckets) *ctx.out << ' ' << b << '=' << n;
  *ctx.out << '\n';
}

void cmd_dedup(Context& ctx, const std::string& input, const std::string& gallery, double threshold,
               double common_threshold, const std::string& sweep, long ground_truth) {
  load(ctx);
  const DedupConfig& dc = ctx.config.dedup;
  if (threshold <= 0) threshold = dc.intra_threshold;
  if (common_threshold <= 0) common_threshold = dc.common_threshold;

  auto groups = harvester::image_groups(input);
  std::size_t before = 0, after_size = 0;
  for (auto& [name, files] : groups) {
    before += files.size();
    files = harvester::size_filter(files, dc.min_bytes);
    after_size += files.size();
  }
  const auto intra = harvester::dedup_intra_group_files(groups, threshold);
  json j;
  j["input_images"] = before;
  j["after_size_filter"] = after_size;
  j["intra_threshold"] = threshold;
  const auto removal_json = [](const std::vector<harvester::Removal>& rs) {
    json a = json::array();
    for (const auto& r : rs) a.push_back({{"removed", r.removed}, {"kept", r.representative}, {"similarity", r.similarity}});
    return a;
  };
  j["intra_removed"] = removal_json(intra.removed);
  std::vector<std::string> kept = intra.kept;
  if (!gallery.empty()) {
    const auto common = harvester::remove_common_files(kept, harvester::list_images(gallery), common_threshold);
    j["common_threshold"] = common_threshold;
    j["common_removed"] = removal_json(common.removed);
    kept = common.kept;
  }
  j["kept"] = kept;
  j["warnings"] = intra.warnings;
  if (!sweep.empty()) {
    std::map<std::string, std::vector<harvester::SignedImage>> signed_groups;
    for (const auto& [name, files] : groups) {
      for (const auto& f : files) {
        try {
          signed_groups[name].push_back({f, harvester::dhash_file(f)});
        } catch (const Error&) {
        }
      }
    }
    const auto rows = harvester::threshold_sweep(signed_groups, parse_list(sweep));
    json s = json::array();
    for (const auto& r : rows) s.push_back({{"threshold", r.threshold}, {"kept", r.kept}});
    j["sweep"] = s;
    if (ground_truth >= 0) {
      j["sweep_choice"] = harvester::closest_to_ground_truth(rows, static_cast<std::size_t>(ground_truth)).threshold;
    }
  }
  write_file_atomic(ctx.output_file("dedup.json"), j.dump(2) + "\n");
  *ctx.out << "images " << before << ", after size filter " << after_size << ", kept " << kept.size() << '\n';
}

void cmd_report(Context& ctx, const std::string& results_path, const std::string& format) {
  load(ctx);
  const auto report = reporter::aggregate(detector::read_results(results_path));
  std::vector<reporter::Format> formats;
  if (format == "all") {
    formats = {reporter::Format::kJson, reporter::Format::kCsv, reporter::Format::kMarkdown};
  } else {
    formats = {reporter::parse_format(format)};
  }
  for (auto f : formats) {
    write_file_atomic(ctx.output_file(std::string("report.") + reporter::extension(f)),
                      reporter::render_report(report, f, &ctx.taxonomy));
  }
  *ctx.out << reporter::render_report(report, reporter::Format::kMarkdown, &ctx.taxonomy);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  init_logging();
  Context ctx;
  ctx.out = &out;

  CLI::App app{"Deceptive-pattern detection toolkit"};
  app.name("dpguard");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", ctx.config_path, "TOML configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", ctx.seed, "Random seed")->capture_default_str();
  app.add_option("--output", ctx.output, "Output directory")->capture_default_str();

  std::function<void()> action;

  auto* tax = app.add_subcommand("taxonomy", "Taxonomy utilities");
  tax->require_subcommand(1);
  bool tax_json = false;
  auto* tax_show = tax->add_subcommand("show", "List the categories");
  tax_show->add_flag("--json", tax_json, "Print the taxonomy file");
  tax_show->callback([&] { action = [&] { cmd_taxonomy_show(ctx, tax_json); }; });

  std::string manifest, ratios = "0.6,0.2,0.2", model, split_name, results, gallery, input, sweep, format = "all",
                        seeds_file;
  bool no_image_check = false, lenient = false, dry_run = false, full_batch = false, no_dp_class = false;
  std::vector<std::string> images, urls;
  int epochs = 10, rounds = 0, max_pages = 0, fanout = -1;
  double lr = 0.05, threshold = 0, common_threshold = 0, politeness_ms = -1;
  long ground_truth = -1;
  std::string supported;

  auto* corpus = app.add_subcommand("corpus", "Manifest import, splitting, statistics");
  corpus->require_subcommand(1);
  auto* c_import = corpus->add_subcommand("import", "Validate and normalize a manifest");
  c_import->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  c_import->add_flag("--lenient", lenient, "Unreadable images become warnings");
  c_import->add_flag("--no-image-check", no_image_check);
  c_import->callback([&] { action = [&] { cmd_corpus_import(ctx, manifest, !no_image_check, lenient); }; });
  auto* c_split = corpus->add_subcommand("split", "Seeded train/validation/test split");
  c_split->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  c_split->add_option("--ratios", ratios, "train,validation,test")->capture_default_str();
  c_split->add_flag("--no-image-check", no_image_check);
  c_split->callback([&] { action = [&] { cmd_corpus_split(ctx, manifest, ratios, !no_image_check); }; });
  auto* c_stats = corpus->add_subcommand("stats", "Per-category instance counts");
  c_stats->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  c_stats->add_flag("--no-image-check", no_image_check);
  c_stats->callback([&] { action = [&] { cmd_corpus_stats(ctx, manifest, !no_image_check); }; });

  auto* cls = app.add_subcommand("classifier", "Stage-1 binary classifier");
  cls->require_subcommand(1);
  auto* cl_train = cls->add_subcommand("train", "Train the logistic baseline and export it");
  cl_train->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  cl_train->add_option("--epochs", epochs)->capture_default_str();
  cl_train->add_option("--lr", lr)->capture_default_str();
  cl_train->add_flag("--full-batch", full_batch);
  cl_train->callback([&] { action = [&] { cmd_classifier_train(ctx, manifest, epochs, lr, full_batch); }; });
  auto* cl_eval = cls->add_subcommand("eval", "Binary P/R/F1 on the test split");
  cl_eval->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  cl_eval->add_option("--model", model)->check(CLI::ExistingFile);
  cl_eval->callback([&] { action = [&] { cmd_classifier_eval(ctx, manifest, model); }; });
  auto* cl_pred = cls->add_subcommand("predict", "Score images");
  cl_pred->add_option("--image", images)->required()->check(CLI::ExistingFile);
  cl_pred->add_option("--model", model)->check(CLI::ExistingFile);
  cl_pred->callback([&] { action = [&] { cmd_classifier_predict(ctx, images, model); }; });

  auto* opt = app.add_subcommand("optimize", "Mutation-based prompt optimization");
  opt->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  opt->add_option("--rounds", rounds, "Override the configured round count");
  opt->add_flag("--dry-run", dry_run, "Print the plan without calling any model");
  opt->callback([&] { action = [&] { cmd_optimize(ctx, manifest, dry_run, rounds); }; });

  auto* det = app.add_subcommand("detect", "Two-stage detection");
  det->add_option("--image", images)->check(CLI::ExistingFile);
  det->add_option("--manifest", manifest)->check(CLI::ExistingFile);
  det->add_option("--split", split_name, "Only records of this split");
  det->add_flag("--dry-run", dry_run, "Stage 1 only; no model calls");
  det->callback([&] { action = [&] { cmd_detect(ctx, images, manifest, split_name, dry_run); }; });

  auto* ev = app.add_subcommand("evaluate", "Per-category and averaged P/R/F1");
  ev->add_option("--results", results)->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  ev->add_flag("--exclude-no-dp", no_dp_class, "Leave the No DP class out");
  ev->add_option("--supported", supported, "Comma-separated ids included in the averages");
  ev->callback([&] { action = [&] { cmd_evaluate(ctx, results, manifest, no_dp_class, supported); }; });

  auto* cr = app.add_subcommand("crawl", "Alive-check and crawl websites");
  cr->add_option("--url", urls);
  cr->add_option("--seeds", seeds_file, "File with one URL per line")->check(CLI::ExistingFile);
  cr->add_option("--max-pages", max_pages);
  cr->add_option("--fanout", fanout);
  cr->add_option("--politeness-ms", politeness_ms);
  cr->add_flag("--dry-run", dry_run, "Print the plan without network access");
  cr->callback([&] { action = [&] { cmd_crawl(ctx, urls, seeds_file, dry_run, max_pages, fanout, politeness_ms); }; });

  auto* dd = app.add_subcommand("dedup", "Size filter and near-duplicate removal");
  dd->add_option("--input", input, "Directory with one subdirectory per app/domain")->required()->check(CLI::ExistingDirectory);
  dd->add_option("--gallery", gallery, "Directory of meaningless reference screens")->check(CLI::ExistingDirectory);
  dd->add_option("--threshold", threshold);
  dd->add_option("--common-threshold", common_threshold);
  dd->add_option("--sweep", sweep, "Comma-separated thresholds to compare");
  dd->add_option("--ground-truth", ground_truth, "Hand-labeled kept count for the sweep");
  dd->callback([&] { action = [&] { cmd_dedup(ctx, input, gallery, threshold, common_threshold, sweep, ground_truth); }; });

  auto* rep = app.add_subcommand("report", "Prevalence statistics from detection results");
  rep->add_option("--results", results)->required()->check(CLI::ExistingFile);
  rep->add_option("--format", format, "json, csv, markdown, or all")->capture_default_str();
  rep->callback([&] { action = [&] { cmd_report(ctx, results, format); }; });

  std::vector<std::string> argv_store{"dpguard"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dpguard::cli
