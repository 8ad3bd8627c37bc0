#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "support/fixtures.hpp"

#include "dpguard/cli.hpp"
#include "dpguard/config.hpp"
#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"

using namespace dpguard;
using json = nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kRuntime;
}

// A workspace with a small labeled corpus of bright (DP) and dark screens and a mock configuration.
struct Workspace {
  testing::TempDir dir;
  std::string config;
  std::string manifest;

  explicit Workspace(const std::string& extra_config = "", std::size_t n = 20) {
    std::filesystem::create_directories(dir.path() / "img");
    const auto set = testing::bright_dark_set(n, 17);
    std::string m;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string ref = "img/s" + std::to_string(i) + ".png";
      write_png(dir.file(ref), set.images[i]);
      const std::string labels = set.labels[i] ? (i % 4 == 1 ? "[1]" : "[12, 14]") : "[0]";
      m += R"({"image":")" + ref + R"(","platform":")" + (i % 3 ? "mobile" : "website") +
           R"(","source":"fixture","labels":)" + labels + R"(,"group_id":"app)" + std::to_string(i % 5) + "\"}\n";
    }
    manifest = dir.file("manifest.jsonl");
    write_file_atomic(manifest, m);

    const std::string p0 = read_text_file(std::string(DPGUARD_SOURCE_DIR) + "/assets/prompts/initial_prompt.txt");
    json script = {{"default", "Nagging"}, {"mutations", json::array()}};
    for (int k = 0; k < 8; ++k) script["mutations"].push_back(p0 + " Variant " + std::to_string(k) + ".");
    write_file_atomic(dir.file("mock.json"), script.dump());

    config = dir.file("dpguard.toml");
    write_file_atomic(config, "[gateway]\nbackend = \"mock\"\nmock_script = \"mock.json\"\n"
                              "[classifier]\nmock_score = 0.9\n"
                              "[optimizer]\nqueue_size = 3\nnew_per_round = 2\nrounds = 2\nbatch_size = 4\n"
                              "min_per_category = 1\n"
                              "[dedup]\nmin_bytes = 0\n" +
                                  extra_config);
  }

  std::vector<std::string> args(std::vector<std::string> rest) const {
    std::vector<std::string> a = {"--config", config, "--output", dir.file("out")};
    a.insert(a.end(), rest.begin(), rest.end());
    return a;
  }
  std::string out(const std::string& name) const { return dir.file("out/" + name); }
};

}  // namespace

// ----- configuration -----

TEST_CASE("defaults point at the shipped assets") {
  const AppConfig c = default_config();
  CHECK(std::filesystem::exists(c.taxonomy));
  CHECK(std::filesystem::exists(c.initial_prompt));
  CHECK(std::filesystem::exists(c.best_prompt));
  CHECK(c.optimizer.queue_size == 15);
  CHECK(c.optimizer.rounds == 25);
  CHECK(c.optimizer.batch_size == 100);
  CHECK(c.optimizer.similarity_threshold == 0.2);
  CHECK(c.dedup.intra_threshold == 0.95);
  CHECK(c.dedup.common_threshold == 0.90);
  CHECK(c.crawl.limits.max_pages_per_domain == 20);
  CHECK(c.crawl.limits.fanout == 5);
  CHECK(c.gateway.requests_per_second == 1.0);
}

TEST_CASE("toml parsing and validation") {
  testing::TempDir tmp;
  write_file_atomic(tmp.file("p0.txt"), "Find deceptive patterns.");
  const auto c = parse_config("[paths]\ninitial_prompt = \"p0.txt\"\n[optimizer]\nrounds = 7\n", tmp.path().string());
  CHECK(c.initial_prompt == tmp.file("p0.txt"));
  CHECK(c.optimizer.rounds == 7);

  const auto bad = [&](const std::string& text) { return kind_of([&] { parse_config(text, tmp.path().string()); }); };
  CHECK(bad("[optimizer\nrounds = 1") == ErrorKind::kConfig);
  CHECK(bad("[nonsense]\nx = 1\n") == ErrorKind::kConfig);
  CHECK(bad("[optimizer]\nroundz = 1\n") == ErrorKind::kConfig);
  CHECK(bad("[optimizer]\nrounds = \"many\"\n") == ErrorKind::kConfig);
  CHECK(bad("[optimizer]\nqueue_size = 0\n") == ErrorKind::kConfig);
  CHECK(bad("[paths]\ninitial_prompt = \"absent.txt\"\n") == ErrorKind::kConfig);
  CHECK(bad("[gateway]\nbackend = \"carrier-pigeon\"\n") == ErrorKind::kConfig);
  CHECK(bad("[gateway]\nbackend = \"http\"\n") == ErrorKind::kConfig);
  CHECK(bad("[crawl]\nrenderer = \"webdriver\"\n") == ErrorKind::kConfig);
  CHECK(kind_of([] { load_config("/nonexistent/dpguard.toml"); }) != ErrorKind::kRuntime);
}

TEST_CASE("environment interpolation") {
  const auto env = env_of({{"API_HOST", "api.example.com"}, {"EMPTY", ""}});
  CHECK(interpolate_env("https://${API_HOST}/v1", env) == "https://api.example.com/v1");
  CHECK(interpolate_env("${EMPTY}x", env) == "x");
  CHECK(interpolate_env("plain $HOME", env) == "plain $HOME");
  CHECK(kind_of([&] { interpolate_env("${MISSING}", env); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { interpolate_env("${API_HOST", env); }) == ErrorKind::kConfig);

  testing::TempDir tmp;
  const auto c = parse_config("[gateway]\nbackend = \"http\"\nendpoint = \"https://${API_HOST}/v1/chat/completions\"\n",
                              tmp.path().string(), env);
  CHECK(c.gateway.endpoint == "https://api.example.com/v1/chat/completions");
}

// ----- command line -----

TEST_CASE("taxonomy listing") {
  const auto r = run({"taxonomy", "show"});
  CHECK(r.code == 0);
  CHECK(lines_of(r.out).size() == 22);
  const auto j = run({"taxonomy", "show", "--json"});
  CHECK(j.code == 0);
  CHECK(json::parse(j.out).size() == 22);
}

TEST_CASE("exit codes") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"taxonomy", "show", "--bogus"}).code == 1);
  CHECK(run({"--config", "/nonexistent.toml", "taxonomy", "show"}).code == 1);

  testing::TempDir tmp;
  write_file_atomic(tmp.file("broken.toml"), "[optimizer\n");
  CHECK(run({"--config", tmp.file("broken.toml"), "taxonomy", "show"}).code == 1);

  // no stage-1 model configured
  write_png(tmp.file("x.png"), testing::solid(8, 8, 1, 2, 3));
  CHECK(run({"--output", tmp.file("out"), "detect", "--image", tmp.file("x.png")}).code == 1);
  // detect needs exactly one input kind
  Workspace ws;
  CHECK(run(ws.args({"detect"})).code == 1);

  // unreachable chat endpoint is an environment failure
  Workspace remote("", 4);
  write_file_atomic(remote.config, "[gateway]\nbackend = \"http\"\nendpoint = \"http://127.0.0.1:1/v1/chat\"\n"
                                   "max_attempts = 1\ntimeout_s = 2\n[classifier]\nmock_score = 0.9\n"
                                   "[optimizer]\nqueue_size = 2\nnew_per_round = 1\nrounds = 1\nbatch_size = 2\n");
  CHECK(run(remote.args({"optimize", "--manifest", remote.manifest})).code == 2);
}

TEST_CASE("detect on a single image with mocks") {
  Workspace ws;
  const auto r = run(ws.args({"detect", "--image", ws.dir.file("img/s1.png")}));
  CHECK(r.code == 0);
  const auto lines = lines_of(r.out);
  REQUIRE(lines.size() == 1);
  const auto j = json::parse(lines[0]);
  CHECK(j["verdict"] == "DP");
  CHECK(j["categories"] == json::array({1}));
  CHECK(std::filesystem::exists(ws.out("detections.jsonl")));
}

TEST_CASE("dry runs never touch the network") {
  testing::FixtureServer server;
  auto state = std::make_shared<testing::ChatFixtureState>();
  testing::install_chat(server, state);
  testing::install_site(server);
  server.start();
  Workspace ws;
  write_file_atomic(ws.config, "[gateway]\nbackend = \"http\"\nendpoint = \"" + server.url("/v1/chat/completions") +
                                   "\"\nmodel = \"m\"\n[classifier]\nmock_score = 0.9\n"
                                   "[embedder]\nbackend = \"http\"\nendpoint = \"" + server.url("/v1/embeddings") + "\"\n");
  const auto d = run(ws.args({"detect", "--manifest", ws.manifest, "--dry-run"}));
  CHECK(d.code == 0);
  CHECK(lines_of(d.out).size() == 20);
  const auto o = run(ws.args({"optimize", "--manifest", ws.manifest, "--dry-run"}));
  CHECK(o.code == 0);
  CHECK(json::parse(o.out).contains("rounds"));
  const auto c = run(ws.args({"crawl", "--url", server.url("/p0"), "--dry-run"}));
  CHECK(c.code == 0);
  CHECK(server.log().empty());
  CHECK(state->bodies.empty());
}

TEST_CASE("corpus, classifier, detect, evaluate, report") {
  Workspace ws;
  auto r = run(ws.args({"corpus", "import", "--manifest", ws.manifest}));
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(ws.out("corpus.jsonl")));

  r = run(ws.args({"corpus", "split", "--manifest", ws.manifest}));
  CHECK(r.code == 0);
  const auto split_lines = lines_of(read_text_file(ws.out("split.jsonl")));
  CHECK(split_lines.size() == 20);
  std::map<std::string, int> per_split;
  for (const auto& l : split_lines) ++per_split[json::parse(l)["split"].get<std::string>()];
  CHECK(per_split["train"] == 12);
  CHECK(per_split["validation"] == 4);
  CHECK(per_split["test"] == 4);

  r = run(ws.args({"corpus", "stats", "--manifest", ws.out("split.jsonl")}));
  CHECK(r.code == 0);
  CHECK(json::parse(read_text_file(ws.out("stats.json"))).is_object());
  CHECK(run(ws.args({"corpus", "split", "--manifest", ws.manifest, "--ratios", "0.5,0.5"})).code == 1);

  r = run(ws.args({"classifier", "train", "--manifest", ws.out("split.jsonl")}));
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(ws.out("baseline.json")));
  CHECK(std::filesystem::exists(ws.out("baseline.onnx")));
  r = run(ws.args({"classifier", "eval", "--manifest", ws.out("split.jsonl"), "--model", ws.out("baseline.onnx")}));
  CHECK(r.code == 0);
  const auto eval = json::parse(read_text_file(ws.out("classifier_eval.json")));
  CHECK(eval.dump().find("f1") != std::string::npos);
  r = run(ws.args({"classifier", "predict", "--model", ws.out("baseline.json"), "--image", ws.dir.file("img/s0.png"),
                   "--image", ws.dir.file("img/s1.png")}));
  CHECK(r.code == 0);
  CHECK(lines_of(read_text_file(ws.out("predictions.jsonl"))).size() == 2);

  r = run(ws.args({"detect", "--manifest", ws.out("split.jsonl"), "--split", "test"}));
  CHECK(r.code == 0);
  CHECK(lines_of(r.out).size() == 4);
  r = run(ws.args({"detect", "--manifest", ws.manifest}));
  CHECK(r.code == 0);

  r = run(ws.args({"evaluate", "--results", ws.out("detections.jsonl"), "--manifest", ws.manifest}));
  CHECK(r.code == 0);
  const auto ev = json::parse(read_text_file(ws.out("evaluation.json")));
  CHECK(ev.contains("micro"));
  CHECK(r.out.find("Nagging") != std::string::npos);

  r = run(ws.args({"report", "--results", ws.out("detections.jsonl")}));
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(ws.out("report.json")));
  CHECK(std::filesystem::exists(ws.out("report.csv")));
  CHECK(std::filesystem::exists(ws.out("report.md")));
  CHECK(r.out.find("| Nagging |") != std::string::npos);
  CHECK(run(ws.args({"report", "--results", ws.out("detections.jsonl"), "--format", "pdf"})).code == 1);
}

TEST_CASE("optimize with scripted mutations") {
  Workspace ws;
  const auto r = run(ws.args({"optimize", "--manifest", ws.manifest}));
  CHECK(r.code == 0);
  const std::string best = read_text_file(ws.out("best_prompt.txt"));
  CHECK_FALSE(best.empty());
  const auto history = json::parse(read_text_file(ws.out("optimize_history.json")));
  CHECK(history.size() >= 1);
  CHECK(history.size() <= 2);
  CHECK(json::parse(read_text_file(ws.out("queue.json"))).size() <= 3);

  const auto one = run(ws.args({"optimize", "--manifest", ws.manifest, "--rounds", "1"}));
  CHECK(one.code == 0);
  CHECK(json::parse(read_text_file(ws.out("optimize_history.json"))).size() == 1);
}

TEST_CASE("dedup and crawl commands") {
  Workspace ws;
  std::filesystem::create_directories(ws.dir.path() / "shots/app1");
  std::filesystem::create_directories(ws.dir.path() / "shots/app2");
  write_png(ws.dir.file("shots/app1/a.png"), testing::blocky(1));
  write_png(ws.dir.file("shots/app1/b.png"), testing::blocky(1));
  write_png(ws.dir.file("shots/app2/c.png"), testing::blocky(2));
  auto r = run(ws.args({"dedup", "--input", ws.dir.file("shots")}));
  CHECK(r.code == 0);
  const auto d = json::parse(read_text_file(ws.out("dedup.json")));
  CHECK(d["kept"].size() == 2);

  testing::FixtureServer server;
  testing::install_site(server);
  server.start();
  r = run(ws.args({"crawl", "--url", server.url("/p0"), "--url", server.url("/missing"), "--max-pages", "3",
                   "--politeness-ms", "0"}));
  CHECK(r.code == 0);
  CHECK(lines_of(read_text_file(ws.out("crawl/records.jsonl"))).size() == 3);
  CHECK(lines_of(read_text_file(ws.out("crawl/alive.jsonl"))).size() == 2);
}
