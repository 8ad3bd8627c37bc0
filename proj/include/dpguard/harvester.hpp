#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpguard/image.hpp"
#include "dpguard/rng.hpp"

namespace dpguard::harvester {

// ----- perceptual signatures -----

// 64-bit difference hash: 9x8 area-resized luma rounded to 8-bit levels,
// bit = left > right, first comparison in the most significant bit.
std::uint64_t dhash(const Image& image);
std::uint64_t dhash_file(const std::string& path);

// 1 - hamming(a, b) / 64.
double perceptual_similarity(std::uint64_t a, std::uint64_t b);

// Keeps files strictly larger than min_bytes, in input order. Missing files are dropped.
std::vector<std::string> size_filter(const std::vector<std::string>& files, std::uintmax_t min_bytes = 8192);

struct SignedImage {
  std::string name;
  std::uint64_t signature = 0;
};

struct Removal {
  std::string removed;
  std::string representative;  // kept image or gallery entry that matched
  double similarity = 0.0;
};

struct DedupResult {
  std::vector<std::string> kept;
  std::vector<Removal> removed;
  std::vector<std::string> warnings;
};

// Greedy keep-first within each group, scanning names in lexicographic order:
// an image goes when it is >= threshold similar to an already kept one.
DedupResult dedup_intra_group(const std::map<std::string, std::vector<SignedImage>>& groups, double threshold,
                              std::size_t workers = 1);
// Same, signing files on the fly; undecodable files are skipped with a warning.
DedupResult dedup_intra_group_files(const std::map<std::string, std::vector<std::string>>& groups, double threshold,
                                    std::size_t workers = 1);

DedupResult remove_common(const std::vector<SignedImage>& images, const std::vector<SignedImage>& gallery,
                          double threshold);
DedupResult remove_common_files(const std::vector<std::string>& images, const std::vector<std::string>& gallery,
                                double threshold);

struct SweepRow {
  double threshold = 0.0;
  std::size_t kept = 0;
};

std::vector<SweepRow> threshold_sweep(const std::map<std::string, std::vector<SignedImage>>& groups,
                                      const std::vector<double>& thresholds);
// Row whose kept count is nearest the hand-labeled ground truth (first on ties).
SweepRow closest_to_ground_truth(const std::vector<SweepRow>& sweep, std::size_t ground_truth);

// Group = first-level subdirectory (files directly under dir form group "").
std::map<std::string, std::vector<std::string>> image_groups(const std::string& dir);
std::vector<std::string> list_images(const std::string& dir);

// ----- crawling -----

struct CrawlLimits {
  std::size_t max_pages_per_domain = 20;
  std::size_t fanout = 5;
  std::chrono::duration<double> request_timeout{10.0};
  std::chrono::duration<double> politeness_delay{0.5};
  int max_redirects = 3;
  bool respect_robots = false;
  std::string user_agent = "dpguard-harvester/1.0";

  void validate() const;
};

struct AliveStatus {
  std::string url;
  int status = 0;           // final HTTP status; 0 when no response
  std::string error;        // "", "dns", "connect", "timeout", "tls", "redirects", "other"
  std::string final_url;

  bool crawlable() const { return status == 200; }
  // "200", "404", ..., or the error bucket.
  std::string bucket() const;
};

AliveStatus check_alive(const std::string& url, const CrawlLimits& limits = {});

// Registrable domain of a host via a built-in public-suffix subset; IP
// literals and single-label hosts are their own domain.
std::string registrable_domain(const std::string& host);
std::string url_host(const std::string& url);

// Absolute http(s) URLs of <a href> targets in document order, fragments dropped.
std::vector<std::string> extract_links(const std::string& html, const std::string& base_url);

struct PageCapture {
  int status = 0;
  std::string final_url;
  std::string html;
  std::string redirect_to;  // Location of a 3xx response
  std::optional<Image> screenshot;
  std::string error;
};

class Renderer {
 public:
  virtual ~Renderer() = default;
  virtual PageCapture visit(const std::string& url) = 0;
  virtual std::string descriptor() const = 0;
};

// Plain HTTP GET without redirect following. The screenshot is a
// placeholder raster derived from the document, since nothing is rendered.
class StaticRenderer final : public Renderer {
 public:
  explicit StaticRenderer(CrawlLimits limits = {}) : limits_(std::move(limits)) {}
  PageCapture visit(const std::string& url) override;
  std::string descriptor() const override { return "static"; }

 private:
  CrawlLimits limits_;
};

// W3C WebDriver client: status via a plain GET, then navigate, size the
// window to the document, and take a screenshot.
class WebDriverRenderer final : public Renderer {
 public:
  WebDriverRenderer(std::string endpoint, CrawlLimits limits = {}, std::string browser = "chrome");
  ~WebDriverRenderer() override;
  PageCapture visit(const std::string& url) override;
  std::string descriptor() const override { return "webdriver:" + endpoint_; }

 private:
  void ensure_session();
  std::string endpoint_;
  CrawlLimits limits_;
  std::string browser_;
  std::string session_;
  StaticRenderer probe_;
};

struct CrawlRecord {
  std::string url;
  std::string domain;
  int status = 0;
  std::optional<std::string> screenshot_ref;
  std::string captured_at;  // ISO-8601 UTC
  int depth = 0;
  std::size_t enqueued = 0;  // new frontier entries discovered on this page
  std::string error;
};

std::string to_json_line(const CrawlRecord& record);

using Sleeper = std::function<void(std::chrono::duration<double>)>;

// Breadth-first, same registrable domain, per-page shuffled fanout, hard page cap.
// Screenshots go to screenshot_dir/<n>.png when screenshot_dir is nonempty.
std::vector<CrawlRecord> crawl_domain(const std::string& seed_url, Renderer& renderer, const CrawlLimits& limits,
                                      Rng& rng, const std::string& screenshot_dir = {}, Sleeper sleeper = {});

struct SiteCrawl {
  AliveStatus alive;
  std::vector<CrawlRecord> records;
};

// Alive-checks every seed, crawls the 200s on up to `workers` threads. Each
// domain draws from its own mt19937(seed + index).
std::vector<SiteCrawl> crawl_sites(const std::vector<std::string>& seeds,
                                   const std::function<std::unique_ptr<Renderer>()>& make_renderer,
                                   const CrawlLimits& limits, std::uint32_t seed, std::size_t workers,
                                   const std::string& output_dir = {});

}  // namespace dpguard::harvester
