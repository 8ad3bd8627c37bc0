#include "fixtures.hpp"

#include <stdlib.h>

#include <algorithm>
#include <cstdlib>

#include "httplib.h"
#include "json.hpp"

#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"

namespace dpguard::testing {

namespace fs = std::filesystem;
using json = nlohmann::json;

TempDir::TempDir() {
  std::string templ = (fs::temp_directory_path() / "dpguard-test-XXXXXX").string();
  if (!mkdtemp(templ.data())) throw Error(ErrorKind::kIo, "mkdtemp failed");
  path_ = templ;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.set(x, y, r, g, b);
  }
  return img;
}

Image tagged_image(std::uint32_t tag) {
  Image img(8, 8);
  for (int k = 0; k < 64; ++k) {
    img.set(k % 8, k / 8, static_cast<std::uint8_t>(tag & 0xff), static_cast<std::uint8_t>((tag >> 8) & 0xff),
            static_cast<std::uint8_t>(((tag >> 16) + k * 4) & 0xff));
  }
  return img;
}

Image blocky(std::uint32_t seed) {
  Rng rng = make_rng(seed);
  int cells[8][9];
  for (auto& row : cells) {
    row[0] = static_cast<int>(uniform_below(rng, 256));
    for (int c = 1; c < 9; ++c) {
      do {
        row[c] = static_cast<int>(uniform_below(rng, 256));
      } while (std::abs(row[c] - row[c - 1]) < 16);
    }
  }
  Image img(72, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 72; ++x) {
      const auto v = static_cast<std::uint8_t>(cells[y / 8][x / 8]);
      img.set(x, y, v, v, v);
    }
  }
  return img;
}

Image perturb(const Image& image, std::uint32_t seed, int amplitude) {
  Rng rng = make_rng(seed);
  Image out = image;
  for (auto& v : out.rgb) {
    const int d = static_cast<int>(uniform_below(rng, static_cast<std::uint32_t>(2 * amplitude + 1))) - amplitude;
    v = static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + d, 0, 255));
  }
  return out;
}

Image noise_image(std::uint32_t seed, int w, int h, int lo, int hi) {
  Rng rng = make_rng(seed);
  Image img(w, h);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(lo + static_cast<int>(uniform_below(rng, hi - lo + 1)));
  return img;
}

BrightDark bright_dark_set(std::size_t n, std::uint32_t seed) {
  BrightDark set;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const auto s = seed * 7919u + static_cast<std::uint32_t>(i);
    set.images.push_back(label ? noise_image(s, 24, 24, 170, 255) : noise_image(s, 24, 24, 0, 85));
    set.labels.push_back(label);
  }
  return set;
}

std::vector<CategorySet> random_labels(std::size_t n, const Taxonomy& taxonomy, double dp_fraction,
                                       std::size_t max_labels, Rng& rng) {
  const auto ids = taxonomy.active_dp_ids();
  std::vector<CategorySet> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (uniform01(rng) >= dp_fraction) {
      out.push_back({kNoDp});
      continue;
    }
    const std::size_t k = 1 + uniform_below(rng, static_cast<std::uint32_t>(max_labels));
    CategorySet s;
    for (int id : sample_without_replacement(ids, k, rng)) s.insert(id);
    out.push_back(std::move(s));
  }
  return out;
}

std::string label_names(const CategorySet& labels, const Taxonomy& taxonomy) {
  std::string out;
  for (int id : labels) {
    if (!out.empty()) out += "; ";
    out += taxonomy.at(id).name;
  }
  return out;
}

Corpus synthetic_corpus(const std::vector<CategorySet>& labels, Split split, std::size_t groups) {
  Corpus c;
  c.base_dir = ".";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    UIRecord r;
    r.image_ref = "img/" + std::to_string(i) + ".png";
    r.platform = i % 3 == 0 ? Platform::kWebsite : Platform::kMobile;
    r.source = "synthetic";
    r.labels = labels[i];
    r.group_id = "app" + std::to_string(i % groups);
    r.split = split;
    c.records.push_back(std::move(r));
  }
  return c;
}

FixtureServer::FixtureServer() : server_(std::make_unique<httplib::Server>()) {
  server_->set_pre_routing_handler([this](const httplib::Request& req, httplib::Response&) {
    std::lock_guard lock(mutex_);
    log_.push_back({req.method, req.get_header_value("Host"), req.path});
    return httplib::Server::HandlerResponse::Unhandled;
  });
  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw Error(ErrorKind::kIo, "fixture server could not bind");
}

FixtureServer::~FixtureServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

void FixtureServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

std::string FixtureServer::url(const std::string& path) const {
  return "http://127.0.0.1:" + std::to_string(port_) + path;
}

std::vector<RequestLogEntry> FixtureServer::log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

void FixtureServer::clear_log() {
  std::lock_guard lock(mutex_);
  log_.clear();
}

void install_site(FixtureServer& fixture, int pages, int links) {
  const int port = fixture.port();
  fixture.server().Get(R"(/p(\d+))", [=](const httplib::Request& req, httplib::Response& res) {
    const int i = std::stoi(req.matches[1]);
    if (i < 0 || i >= pages) {
      res.status = 404;
      return;
    }
    std::string html = "<html><head><title>Page " + std::to_string(i) + "</title></head><body>\n";
    for (int k = 0; k < links; ++k) {
      const int target = (i * 7 + k * 3 + 1) % pages;
      html += "<a href=\"/p" + std::to_string(target) + "\">page " + std::to_string(target) + "</a>\n";
    }
    html += "<a href=\"http://localhost:" + std::to_string(port) + "/external\">elsewhere</a>\n";
    html += "<a href=\"mailto:owner@example.com\">mail</a>\n<a href=\"#top\">top</a>\n</body></html>\n";
    res.set_content(html, "text/html");
  });
  fixture.server().Get("/missing", [](const httplib::Request&, httplib::Response& res) { res.status = 404; });
  fixture.server().Get("/moved", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/p1", 301); });
  fixture.server().Get("/external", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html>off-domain</html>", "text/html");
  });
}

void install_webdriver(FixtureServer& fixture, std::shared_ptr<WebDriverState> state) {
  auto& s = fixture.server();
  const auto value = [](httplib::Response& res, const json& v) { res.set_content(json{{"value", v}}.dump(), "application/json"); };
  s.Post("/session", [=](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(state->mutex);
    ++state->sessions_created;
    value(res, {{"sessionId", "s" + std::to_string(state->sessions_created)}, {"capabilities", json::object()}});
  });
  s.Delete(R"(/session/([^/]+))", [=](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(state->mutex);
    ++state->sessions_deleted;
    value(res, nullptr);
  });
  s.Post(R"(/session/([^/]+)/url)", [=](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(state->mutex);
    state->current_url = json::parse(req.body).at("url").get<std::string>();
    state->navigated.push_back(state->current_url);
    value(res, nullptr);
  });
  s.Get(R"(/session/([^/]+)/url)", [=](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(state->mutex);
    value(res, state->current_url);
  });
  s.Post(R"(/session/([^/]+)/execute/sync)", [=](const httplib::Request&, httplib::Response& res) {
    value(res, json::array({1280, 2400}));
  });
  s.Post(R"(/session/([^/]+)/window/rect)", [=](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body);
    std::lock_guard lock(state->mutex);
    state->window_sizes.emplace_back(body.at("width").get<int>(), body.at("height").get<int>());
    value(res, body);
  });
  s.Get(R"(/session/([^/]+)/screenshot)", [=](const httplib::Request&, httplib::Response& res) {
    value(res, base64_encode(encode_png(solid(40, 30, 10, 200, 30))));
  });
  s.Get(R"(/session/([^/]+)/source)", [=](const httplib::Request&, httplib::Response& res) {
    value(res, "<html><body><a href=\"/p2\">two</a></body></html>");
  });
}

void install_chat(FixtureServer& fixture, std::shared_ptr<ChatFixtureState> state) {
  fixture.server().Post("/v1/chat/completions", [=](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(state->mutex);
    state->bodies.push_back(req.body);
    state->auth_headers.push_back(req.get_header_value("Authorization"));
    if (!state->status_sequence.empty()) {
      const int status = state->status_sequence.front();
      state->status_sequence.erase(state->status_sequence.begin());
      if (status != 200) {
        res.status = status;
        res.set_content(R"({"error":{"message":"fixture failure"}})", "application/json");
        return;
      }
    }
    const json body = {{"id", "fixture"},
                       {"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", state->reply}}}}})},
                       {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}}};
    res.set_content(body.dump(), "application/json");
  });
  fixture.server().Post("/v1/embeddings", [=](const httplib::Request& req, httplib::Response& res) {
    const std::string input = json::parse(req.body).at("input").get<std::string>();
    const json body = {{"data", json::array({{{"embedding", {1.0, static_cast<double>(input.size()), 0.5}}}})}};
    res.set_content(body.dump(), "application/json");
  });
}

}  // namespace dpguard::testing
