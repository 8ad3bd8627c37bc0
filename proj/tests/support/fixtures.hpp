#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dpguard/corpus.hpp"
#include "dpguard/image.hpp"
#include "dpguard/rng.hpp"
#include "dpguard/taxonomy.hpp"

namespace httplib {
class Server;
}

namespace dpguard::testing {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// ----- images -----

Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
// 8x8 raster whose pixels spell out `tag`; distinct tags give distinct PNG bytes.
Image tagged_image(std::uint32_t tag);
// 9x8 grid of 8x8 gray cells; horizontally adjacent cells differ by >= 16 levels.
Image blocky(std::uint32_t seed);
// Adds uniform noise in [-amplitude, amplitude] to every channel.
Image perturb(const Image& image, std::uint32_t seed, int amplitude);
// Noise image whose pixels lie in [lo, hi].
Image noise_image(std::uint32_t seed, int w, int h, int lo, int hi);

struct BrightDark {
  std::vector<Image> images;
  std::vector<int> labels;  // 1 = bright = DP
};
// Alternating dark (non-DP, pixels <= 85) and bright (DP, pixels >= 170) noise images.
BrightDark bright_dark_set(std::size_t n, std::uint32_t seed);

// ----- corpora -----

// Random label sets over the active DP ids: with probability dp_fraction a
// record carries 1..max_labels DP ids, otherwise {No DP}.
std::vector<CategorySet> random_labels(std::size_t n, const Taxonomy& taxonomy, double dp_fraction,
                                       std::size_t max_labels, Rng& rng);

std::string label_names(const CategorySet& labels, const Taxonomy& taxonomy);

// Records "img/<i>.png" in group "app<i % groups>", all assigned to `split`.
Corpus synthetic_corpus(const std::vector<CategorySet>& labels, Split split, std::size_t groups = 10);

// ----- HTTP fixtures -----

struct RequestLogEntry {
  std::string method;
  std::string host;
  std::string path;
};

// Loopback HTTP server on an ephemeral port. Install routes, then start().
class FixtureServer {
 public:
  FixtureServer();
  ~FixtureServer();
  FixtureServer(const FixtureServer&) = delete;
  FixtureServer& operator=(const FixtureServer&) = delete;

  httplib::Server& server() { return *server_; }
  void start();
  int port() const { return port_; }
  std::string url(const std::string& path = "/") const;
  std::vector<RequestLogEntry> log() const;
  void clear_log();

 private:
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mutex_;
  std::vector<RequestLogEntry> log_;
};

// /p0 ... /p<pages-1>, each linking to `links` other pages plus an off-domain
// link (http://localhost:<port>/external), a mailto, and a fragment. /missing
// is a 404, /moved redirects to /p1.
void install_site(FixtureServer& server, int pages = 50, int links = 12);

// W3C WebDriver subset: session create/delete, url, execute/sync, window/rect,
// screenshot, source. Screenshots are a solid 40x30 PNG.
struct WebDriverState {
  std::mutex mutex;
  int sessions_created = 0;
  int sessions_deleted = 0;
  std::vector<std::string> navigated;
  std::vector<std::pair<int, int>> window_sizes;
  std::string current_url;
};
void install_webdriver(FixtureServer& server, std::shared_ptr<WebDriverState> state);

// OpenAI-style /v1/chat/completions and /v1/embeddings.
struct ChatFixtureState {
  std::mutex mutex;
  std::vector<int> status_sequence;  // consumed one per request; empty = 200
  std::string reply = "Nagging";
  std::vector<std::string> bodies;
  std::vector<std::string> auth_headers;
};
void install_chat(FixtureServer& server, std::shared_ptr<ChatFixtureState> state);

}  // namespace dpguard::testing
