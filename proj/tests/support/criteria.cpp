#include "criteria.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"

#include "dpguard/classifier.hpp"
#include "dpguard/cli.hpp"
#include "dpguard/detector.hpp"
#include "dpguard/digest.hpp"
#include "dpguard/harvester.hpp"
#include "dpguard/metrics.hpp"
#include "dpguard/reporter.hpp"

namespace dpguard::testing {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename... Args>
std::string fmt(const char* format, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

gateway::GatewayOptions offline_options() {
  gateway::GatewayOptions o;
  o.requests_per_second = 0;
  o.sleeper = [](std::chrono::duration<double>) {};
  return o;
}

}  // namespace

Outcome check_optimizer_trace() {
  const auto sc = make_optimizer_scenario(40, 7);
  const auto t0 = Clock::now();
  const auto result = run_optimizer(sc);
  const double elapsed = seconds_since(t0);
  const std::string got = trace_of(result.history);
  const std::string want = reference_trace(sc);
  std::size_t rejected = 0;
  for (const auto& r : result.history) rejected += r.attempts - r.generated;
  const bool same = got == want;
  return {same && elapsed < 5.0 && !result.history.empty(),
          fmt("%zu rounds, %zu gate rejections, trace %s reference, %.2fs", result.history.size(), rejected,
              same ? "identical to" : "DIFFERS from", elapsed)};
}

Outcome check_similarity_gate() {
  gateway::BagOfWordsEmbedder embedder;
  const std::string p0 = "Identify every deceptive pattern in this user interface screenshot";
  const std::vector<std::string> words = {"identify", "every",   "deceptive", "pattern", "in",     "this",
                                          "user",     "interface", "screenshot", "apple", "river", "stone",
                                          "cloud",    "violet",  "engine",    "paper",   "window", "garden",
                                          "silver",   "thunder", "lantern",   "maple",   "orbit",  "candle"};
  Rng rng = make_rng(2024);
  std::size_t accepted = 0, rejected = 0, wrong = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t len = 1 + uniform_below(rng, 12);
    const std::uint32_t pool = 1 + uniform_below(rng, static_cast<std::uint32_t>(words.size()));
    std::string text;
    for (std::size_t k = 0; k < len; ++k) text += words[uniform_below(rng, pool)] + " ";
    const bool ok = optimizer::accept_candidate(text, p0, embedder, 0.2);
    const double cos = word_cosine(text, p0);
    (ok ? accepted : rejected) += 1;
    if (ok != (cos > 0.2)) ++wrong;
  }
  // counts (1, 2, 2, 4) against (1): cosine = 1 / sqrt(25) = 0.2 exactly
  const bool boundary_rejected =
      !optimizer::accept_candidate("alpha beta beta gamma gamma delta delta delta delta", "alpha", embedder, 0.2) &&
      !optimizer::accept_similarity(0.2, 0.2) && optimizer::accept_similarity(std::nextafter(0.2, 1.0), 0.2);
  return {wrong == 0 && accepted > 0 && rejected > 0 && boundary_rejected,
          fmt("%zu accepted, %zu rejected, %zu disagree with oracle, boundary %s", accepted, rejected, wrong,
              boundary_rejected ? "rejected" : "ACCEPTED")};
}

Outcome check_early_stop() {
  auto sc = make_constant_loss_scenario(40, 7);
  sc.config.rounds = 25;
  const auto result = run_optimizer(sc);
  const bool ok = result.early_stopped && result.history.size() == 4 && result.best.id == 0;
  return {ok, fmt("history length %zu, early_stopped=%d, best id %d", result.history.size(),
                  static_cast<int>(result.early_stopped), result.best.id)};
}

Outcome check_bce() {
  Rng rng = make_rng(99);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<int> pred(21), truth(21);
    for (int c = 0; c < 21; ++c) {
      pred[c] = static_cast<int>(uniform_below(rng, 2));
      truth[c] = static_cast<int>(uniform_below(rng, 2));
    }
    worst = std::max(worst, std::abs(optimizer::bce_loss(pred, truth, 1e-7) - direct_bce(pred, truth, 1e-7)));
  }
  std::vector<int> perfect(21, 0);
  perfect[3] = 1;
  const double perfect_err = std::abs(optimizer::bce_loss(perfect, perfect, 1e-7) - (-std::log1p(-1e-7)));
  return {worst <= 1e-12 && perfect_err <= 1e-15,
          fmt("max deviation %.3g over 10000 pairs, perfect-prediction error %.3g", worst, perfect_err)};
}

Outcome check_metrics_oracle() {
  Rng rng = make_rng(5);
  double worst = 0.0;
  std::size_t count_mismatch = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const std::size_t images = 1 + uniform_below(rng, 6);
    const std::size_t nclasses = 1 + uniform_below(rng, 5);
    std::vector<int> classes;
    for (int c : sample_without_replacement(std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}, nclasses, rng)) {
      classes.push_back(c);
    }
    std::vector<CategorySet> preds(images), truths(images);
    for (std::size_t i = 0; i < images; ++i) {
      for (int c = 0; c < 8; ++c) {
        if (uniform_below(rng, 3) == 0) preds[i].insert(c);
        if (uniform_below(rng, 3) == 0) truths[i].insert(c);
      }
    }
    const auto got = metrics::confusion_counts(preds, truths, classes);
    const auto want = brute_counts(preds, truths, classes);
    std::vector<metrics::PRF> per_class;
    for (int c : classes) {
      const auto& g = got.at(c);
      const auto& w = want.at(c);
      if (g.tp != w.tp || g.fp != w.fp || g.fn != w.fn) ++count_mismatch;
      per_class.push_back(metrics::prf(g));
    }
    const auto micro = metrics::micro_average(got);
    const auto macro = metrics::macro_average(per_class);
    const auto bm = brute_micro(want);
    const auto bM = brute_macro(want);
    for (double d : {micro.precision - bm.p, micro.recall - bm.r, micro.f1 - bm.f1, macro.precision - bM.p,
                     macro.recall - bM.r, macro.f1 - bM.f1}) {
      worst = std::max(worst, std::abs(d));
    }
  }
  const auto fixture = metrics::confusion_counts({{1}, {1, 2}, {0}}, {{1}, {2}, {2}}, {0, 1, 2});
  const auto is = [&](int c, long tp, long fp, long fn) {
    const auto& k = fixture.at(c);
    return k.tp == tp && k.fp == fp && k.fn == fn;
  };
  const bool fixture_ok = is(1, 1, 1, 0) && is(2, 1, 0, 1) && is(0, 0, 1, 0);
  return {count_mismatch == 0 && worst <= 1e-12 && fixture_ok,
          fmt("%zu count mismatches, max score deviation %.3g, 3-image fixture %s", count_mismatch, worst,
              fixture_ok ? "exact" : "WRONG")};
}

Outcome check_baseline_classifier() {
  const auto set = bright_dark_set(250, 42);
  const auto t0 = Clock::now();
  std::vector<classifier::LabeledFeatures> train, test;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    (i < 200 ? train : test).push_back({classifier::featurize(set.images[i]), set.labels[i]});
  }
  const auto model = classifier::train_baseline(train, {}, {});
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& t : test) {
    scores.push_back(model.score(t.x));
    labels.push_back(t.label);
  }
  const double f1 = classifier::evaluate_binary(scores, labels).dp.f1;
  const double elapsed = seconds_since(t0);

  Rng rng = make_rng(11);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    classifier::LogisticModel m;
    for (auto& w : m.weights) w = (uniform01(rng) - 0.5) * 0.1;
    m.bias = uniform01(rng) - 0.5;
    std::vector<classifier::LabeledFeatures> data(4);
    for (auto& d : data) {
      d.x.values.resize(classifier::kFeatureLength);
      for (auto& v : d.x.values) v = uniform01(rng);
      d.label = static_cast<int>(uniform_below(rng, 2));
    }
    const auto g = classifier::loss_and_gradient(m, data);
    const double h = 1e-5;
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j <= m.weights.size(); ++j) {
      auto plus = m, minus = m;
      double* wp = j < m.weights.size() ? &plus.weights[j] : &plus.bias;
      double* wm = j < m.weights.size() ? &minus.weights[j] : &minus.bias;
      *wp += h;
      *wm -= h;
      const double fd = (classifier::loss_and_gradient(plus, data).loss -
                         classifier::loss_and_gradient(minus, data).loss) / (2 * h);
      const double an = j < m.weights.size() ? g.grad_weights[j] : g.grad_bias;
      num += (an - fd) * (an - fd);
      den += fd * fd;
    }
    worst = std::max(worst, std::sqrt(num / den));
  }
  return {f1 >= 0.95 && elapsed < 30.0 && worst <= 1e-5,
          fmt("test F1 %.4f in %.2fs, worst relative gradient error %.3g", f1, elapsed, worst)};
}

Outcome check_pipeline_cost() {
  const Taxonomy tax = load_default_taxonomy();
  classifier::ScriptedScorer scorer(0.1);
  std::vector<detector::DetectInput> inputs;
  const double high[] = {0.5, 0.51, 0.7, 0.9, 0.999};
  const double low[] = {0.0, 0.2, 0.4999, 0.49};
  for (int i = 0; i < 50; ++i) {
    const Image img = tagged_image(static_cast<std::uint32_t>(1000 + i));
    scorer.set(img, i < 20 ? high[i % 5] : low[i % 4]);
    inputs.push_back({"img" + std::to_string(i), {}, encode_png(img), "g" + std::to_string(i % 5), Platform::kMobile});
  }
  auto chat = std::make_shared<gateway::ScriptedChat>("Nagging");
  gateway::Gateway gw(chat, offline_options());
  detector::DetectorConfig cfg;
  cfg.scorer = &scorer;
  cfg.gateway = &gw;
  cfg.best_prompt = "List the deceptive patterns.";
  cfg.system_prompt = render_system_prompt(tax);
  cfg.taxonomy = &tax;
  const auto results = detector::detect_batch(inputs, cfg, 4);
  std::size_t dp = 0;
  for (const auto& r : results) dp += r.verdict == classifier::Verdict::kDp;
  return {gw.backend_calls() == 20 && chat->calls() == 20 && dp == 20,
          fmt("%ld gateway calls, %ld backend calls, %zu stage-1 positives", gw.backend_calls(), chat->calls(), dp)};
}

Outcome check_end_to_end_accuracy() {
  const Taxonomy tax = load_default_taxonomy();
  Rng rng = make_rng(314);
  const auto labels = random_labels(500, tax, 0.8, 3, rng);
  std::vector<std::size_t> idx(500);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto answered = sample_without_replacement(idx, 400, rng);
  const std::set<std::size_t> truthful(answered.begin(), answered.end());

  classifier::ScriptedScorer scorer(0.0);
  auto chat = std::make_shared<gateway::ScriptedChat>("No DP");
  std::vector<detector::DetectInput> inputs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Image img = tagged_image(static_cast<std::uint32_t>(50000 + i));
    auto bytes = encode_png(img);
    const bool dp = !labels[i].count(kNoDp);
    scorer.set(img, dp ? 0.9 : 0.1);
    if (truthful.count(i)) chat->script(sha256_hex(bytes), label_names(labels[i], tax));
    inputs.push_back({"img" + std::to_string(i), {}, std::move(bytes), "g" + std::to_string(i % 50), Platform::kMobile});
  }
  gateway::Gateway gw(chat, offline_options());
  detector::DetectorConfig cfg;
  cfg.scorer = &scorer;
  cfg.gateway = &gw;
  cfg.best_prompt = "List the deceptive patterns.";
  cfg.system_prompt = render_system_prompt(tax);
  cfg.taxonomy = &tax;
  const auto results = detector::detect_batch(inputs, cfg, 4);
  std::vector<CategorySet> preds;
  for (const auto& r : results) preds.push_back(r.verdict == classifier::Verdict::kDp ? r.categories : CategorySet{kNoDp});
  metrics::EvalOptions opts;
  opts.include_no_dp = false;
  const double recall = metrics::evaluate(preds, labels, tax, opts).micro.recall;
  return {std::abs(recall - 0.80) <= 0.02, fmt("micro recall over DP classes %.4f", recall)};
}

Outcome check_crawler() {
  FixtureServer site;
  install_site(site);
  site.start();
  TempDir tmp;
  harvester::CrawlLimits limits;
  limits.politeness_delay = std::chrono::duration<double>(0);
  limits.request_timeout = std::chrono::duration<double>(5);
  const std::vector<std::string> seeds = {site.url("/p0"), site.url("/missing")};
  const auto make = [&] { return std::make_unique<harvester::StaticRenderer>(limits); };

  const auto t0 = Clock::now();
  const auto first = harvester::crawl_sites(seeds, make, limits, 42, 2, tmp.file("run1"));
  const auto second = harvester::crawl_sites(seeds, make, limits, 42, 2, tmp.file("run2"));
  const double elapsed = seconds_since(t0);

  const std::string host = "127.0.0.1:" + std::to_string(site.port());
  std::size_t off_domain = 0;
  for (const auto& e : site.log()) off_domain += e.host != host;
  std::size_t max_enqueued = 0, ok_pages = 0;
  for (const auto& r : first[0].records) {
    max_enqueued = std::max(max_enqueued, r.enqueued);
    ok_pages += r.status == 200;
  }
  const auto urls = [](const std::vector<harvester::CrawlRecord>& rs) {
    std::vector<std::string> out;
    for (const auto& r : rs) out.push_back(r.url);
    return out;
  };
  const bool deterministic = urls(first[0].records) == urls(second[0].records);
  const bool skipped = first[1].alive.status == 404 && first[1].records.empty();
  return {first[0].records.size() == 20 && ok_pages == 20 && off_domain == 0 && max_enqueued <= 5 && skipped &&
              deterministic && elapsed < 60.0,
          fmt("%zu pages visited, %zu off-domain requests, max %zu enqueued per page, 404 seed %s, visit set %s, "
              "%.2fs",
              first[0].records.size(), off_domain, max_enqueued, skipped ? "skipped" : "CRAWLED",
              deterministic ? "stable" : "UNSTABLE", elapsed)};
}

Outcome check_dedup() {
  const std::size_t sizes[] = {6, 5, 4, 3, 3, 3, 2, 2, 2};
  std::map<std::string, std::vector<harvester::SignedImage>> groups;
  std::size_t total = 0;
  for (std::size_t c = 0; c < 9; ++c) {
    const Image base = blocky(static_cast<std::uint32_t>(100 + c));
    for (std::size_t k = 0; k < sizes[c]; ++k) {
      const Image img = k == 0 ? base : perturb(base, static_cast<std::uint32_t>(c * 31 + k), 3);
      groups["app" + std::to_string(c / 3)].push_back(
          {"c" + std::to_string(c) + "_m" + std::to_string(k), harvester::dhash(img)});
      ++total;
    }
  }
  const auto once = harvester::dedup_intra_group(groups, 0.95);
  std::vector<double> thresholds;
  for (int t = 50; t <= 100; t += 5) thresholds.push_back(t / 100.0);
  const auto sweep = harvester::threshold_sweep(groups, thresholds);
  bool monotone = true;
  for (std::size_t i = 1; i < sweep.size(); ++i) monotone = monotone && sweep[i].kept >= sweep[i - 1].kept;

  std::map<std::string, std::vector<harvester::SignedImage>> kept_groups;
  const std::set<std::string> kept(once.kept.begin(), once.kept.end());
  for (const auto& [g, items] : groups) {
    for (const auto& it : items) {
      if (kept.count(it.name)) kept_groups[g].push_back(it);
    }
  }
  const auto twice = harvester::dedup_intra_group(kept_groups, 0.95);
  return {total == 30 && once.kept.size() == 9 && monotone && twice.removed.empty(),
          fmt("%zu images -> %zu kept at 0.95, sweep %s, second pass removed %zu", total, once.kept.size(),
              monotone ? "monotone" : "NOT monotone", twice.removed.size())};
}

Outcome check_size_filter() {
  TempDir tmp;
  const auto make = [&](const std::string& name, std::size_t size) {
    std::ofstream(tmp.file(name), std::ios::binary) << std::string(size, 'x');
    return tmp.file(name);
  };
  const auto a = make("exact.png", 8192);
  const auto b = make("over.png", 8193);
  const auto c = make("under.png", 8191);
  const auto kept = harvester::size_filter({a, b, c});
  const bool ok = kept == std::vector<std::string>{b};
  return {ok, ok ? "8192 removed, 8193 kept" : fmt("unexpected result with %zu kept", kept.size())};
}

Outcome check_reporter() {
  std::vector<detector::DetectionResult> results;
  const std::vector<CategorySet> deceptive = {{1}, {2, 3}, {4, 5}, {6, 7, 8}};
  for (int i = 0; i < 10; ++i) {
    detector::DetectionResult r;
    r.image_ref = "img" + std::to_string(i);
    r.group_id = "app" + std::to_string(i);
    r.platform = Platform::kMobile;
    if (i < 4) {
      r.verdict = classifier::Verdict::kDp;
      r.categories = deceptive[i];
    }
    results.push_back(r);
  }
  const auto report = reporter::aggregate(results);
  const auto& p = report.platforms.at("mobile");
  const std::string csv = reporter::render_report(report, reporter::Format::kCsv);
  const bool ok = std::abs(p.pct_images_with_dp - 40.0) < 1e-12 && p.mean_categories &&
                  std::abs(*p.mean_categories - 2.0) < 1e-12 && p.std_categories &&
                  std::abs(*p.std_categories - 0.8165) <= 1e-4 && p.buckets &&
                  *p.buckets == reporter::Buckets{25.0, 50.0, 25.0} &&
                  csv.find("mobile,pct_images_with_dp,40.00\n") != std::string::npos;
  return {ok, fmt("prevalence %.2f%%, mean %.4f, std %.4f, buckets %.0f/%.0f/%.0f", p.pct_images_with_dp,
                  p.mean_categories.value_or(-1), p.std_categories.value_or(-1), p.buckets ? p.buckets->one : -1,
                  p.buckets ? p.buckets->two : -1, p.buckets ? p.buckets->more : -1)};
}

Outcome check_split_determinism() {
  TempDir tmp;
  const Taxonomy tax = load_default_taxonomy();
  Rng rng = make_rng(77);
  const auto labels = random_labels(1000, tax, 0.6, 3, rng);
  const Corpus corpus = synthetic_corpus(labels, Split::kUnassigned, 100);
  write_file_atomic(tmp.file("manifest.jsonl"), to_manifest(corpus));

  std::ostringstream out, err;
  int codes = 0;
  for (const char* dir : {"a", "b"}) {
    codes += cli::run({"corpus", "split", "--seed", "42", "--manifest", tmp.file("manifest.jsonl"), "--no-image-check",
                       "--output", tmp.file(dir)},
                      out, err);
  }
  const std::string a = read_text_file(tmp.file("a/split.jsonl"));
  const std::string b = read_text_file(tmp.file("b/split.jsonl"));
  ImportOptions opts;
  opts.check_images = false;
  const Corpus parsed = parse_manifest(a, tax, tmp.path().string(), opts).corpus;
  const auto n = [&](Split s) { return parsed.in_split(s).size(); };
  const bool ok = codes == 0 && a == b && n(Split::kTrain) == 600 && n(Split::kValidation) == 200 &&
                  n(Split::kTest) == 200;
  return {ok, fmt("exit codes sum %d, files %s, sizes %zu/%zu/%zu", codes, a == b ? "identical" : "DIFFER",
                  n(Split::kTrain), n(Split::kValidation), n(Split::kTest))};
}

const std::vector<Criterion>& primary_criteria() {
  static const std::vector<Criterion> all = {
      {"optimizer trace equivalence", check_optimizer_trace},
      {"similarity gate", check_similarity_gate},
      {"early stop", check_early_stop},
      {"BCE correctness", check_bce},
      {"metrics oracle", check_metrics_oracle},
      {"baseline classifier", check_baseline_classifier},
      {"pipeline cost contract", check_pipeline_cost},
      {"end-to-end mock accuracy", check_end_to_end_accuracy},
      {"crawler", check_crawler},
      {"dedup", check_dedup},
      {"size filter boundary", check_size_filter},
      {"reporter", check_reporter},
      {"split determinism", check_split_determinism},
  };
  return all;
}

}  // namespace dpguard::testing
