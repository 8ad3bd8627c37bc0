#include <netdb.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <deque>
#include <filesystem>
#include <regex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "httplib.h"
#include "json.hpp"
#include <spdlog/spdlog.h>

#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "dpguard/gateway.hpp"
#include "dpguard/harvester.hpp"
#include "dpguard/parallel.hpp"

namespace dpguard::harvester {

using json = nlohmann::json;
using gateway::parse_url;
using gateway::ParsedUrl;
using Seconds = std::chrono::duration<double>;

void CrawlLimits::validate() const {
  if (max_pages_per_domain < 1) throw Error(ErrorKind::kConfig, "max_pages_per_domain must be >= 1");
  if (request_timeout <= Seconds::zero()) throw Error(ErrorKind::kConfig, "request_timeout must be > 0");
  if (max_redirects < 0) throw Error(ErrorKind::kConfig, "max_redirects must be >= 0");
  if (politeness_delay < Seconds::zero()) throw Error(ErrorKind::kConfig, "politeness_delay must be >= 0");
}

std::string AliveStatus::bucket() const { return error.empty() ? std::to_string(status) : error; }

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_ip_literal(const std::string& host) {
  if (host.find(':') != std::string::npos) return true;
  return !host.empty() && std::all_of(host.begin(), host.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || c == '.'; });
}

std::string error_bucket(httplib::Error e) {
  switch (e) {
    case httplib::Error::Connection: return "connect";
    case httplib::Error::ConnectionTimeout:
    case httplib::Error::Read:
    case httplib::Error::Write: return "timeout";
    case httplib::Error::SSLConnection:
    case httplib::Error::SSLLoadingCerts:
    case httplib::Error::SSLServerVerification: return "tls";
    default: return "other";
  }
}

void configure(httplib::Client& client, const CrawlLimits& limits) {
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(limits.request_timeout).count();
  const time_t sec = static_cast<time_t>(us / 1000000);
  const time_t usec = static_cast<time_t>(us % 1000000);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  client.set_follow_location(false);
  client.set_default_headers({{"User-Agent", limits.user_agent}});
}

std::string remove_dot_segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const bool trailing = !path.empty() && path.back() == '/';
  while (i <= path.size()) {
    const auto j = path.find('/', i);
    const std::string seg = path.substr(i, j == std::string::npos ? std::string::npos : j - i);
    if (seg == "..") {
      if (!out.empty()) out.pop_back();
    } else if (!seg.empty() && seg != ".") {
      out.push_back(seg);
    }
    if (j == std::string::npos) break;
    i = j + 1;
  }
  std::string r;
  for (const auto& s : out) r += "/" + s;
  if (r.empty() || (trailing && r.back() != '/')) r += "/";
  return r;
}

std::string normalize_url(const std::string& url) {
  ParsedUrl u = parse_url(url);
  const auto q = u.path.find('?');
  const std::string path = q == std::string::npos ? u.path : u.path.substr(0, q);
  const std::string query = q == std::string::npos ? "" : u.path.substr(q);
  return u.origin() + remove_dot_segments(path) + query;
}

std::string resolve_url(const std::string& href_in, const std::string& base) {
  std::string href = href_in;
  if (auto h = href.find('#'); h != std::string::npos) href.resize(h);
  while (!href.empty() && std::isspace(static_cast<unsigned char>(href.back()))) href.pop_back();
  while (!href.empty() && std::isspace(static_cast<unsigned char>(href.front()))) href.erase(href.begin());
  if (href.empty()) return {};
  const std::string lh = lower(href);
  if (lh.rfind("http://", 0) == 0 || lh.rfind("https://", 0) == 0) return normalize_url(href);
  const ParsedUrl b = parse_url(base);
  if (href.rfind("//", 0) == 0) return normalize_url(b.scheme + ":" + href);
  const auto colon = href.find(':');
  if (colon != std::string::npos && href.find('/') > colon) return {};  // mailto:, javascript:, tel:
  const auto q = b.path.find('?');
  const std::string base_path = q == std::string::npos ? b.path : b.path.substr(0, q);
  if (href[0] == '/') return normalize_url(b.origin() + href);
  if (href[0] == '?') return normalize_url(b.origin() + base_path + href);
  const std::string dir = base_path.substr(0, base_path.rfind('/') + 1);
  return normalize_url(b.origin() + dir + href);
}

std::string decode_entities(std::string s) {
  static const std::pair<const char*, const char*> table[] = {
      {"&amp;", "&"}, {"&quot;", "\""}, {"&#39;", "'"}, {"&lt;", "<"}, {"&gt;", ">"}};
  for (const auto& [from, to] : table) {
    for (auto p = s.find(from); p != std::string::npos; p = s.find(from, p + 1)) s.replace(p, std::strlen(from), to);
  }
  return s;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Stand-in raster for renderers that cannot paint: an 8x6 block mosaic
// seeded by the document digest, so distinct documents differ visually.
Image placeholder_raster(const std::string& html) {
  const std::string digest = sha256_hex(html);
  Image img(320, 240, 255);
  for (int by = 0; by < 6; ++by) {
    for (int bx = 0; bx < 8; ++bx) {
      const int k = (by * 8 + bx) % 32;
      const auto v = static_cast<std::uint8_t>(std::stoi(digest.substr(static_cast<std::size_t>(k) * 2, 2), nullptr, 16));
      for (int y = by * 40; y < by * 40 + 40; ++y) {
        for (int x = bx * 40; x < bx * 40 + 40; ++x) img.set(x, y, v, static_cast<std::uint8_t>(255 - v), static_cast<std::uint8_t>(v / 2));
      }
    }
  }
  return img;
}

std::vector<std::string> robots_disallows(const std::string& origin, const CrawlLimits& limits) {
  httplib::Client client(origin);
  configure(client, limits);
  auto res = client.Get("/robots.txt");
  std::vector<std::string> out;
  if (!res || res->status != 200) return out;
  std::istringstream in(res->body);
  std::string line;
  bool applies = false;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = lower(line.substr(0, colon));
    std::string value = line.substr(colon + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    value.erase(value.find_last_not_of(" \t\r") + 1);
    if (key == "user-agent") {
      applies = value == "*";
    } else if (key == "disallow" && applies && !value.empty()) {
      out.push_back(value);
    }
  }
  return out;
}

}  // namespace

std::string url_host(const std::string& url) { return parse_url(url).host; }

std::string registrable_domain(const std::string& host_in) {
  std::string host = lower(host_in);
  while (!host.empty() && host.back() == '.') host.pop_back();
  if (is_ip_literal(host) || host.find('.') == std::string::npos) return host;
  // Multi-label public suffixes common in crawl seeds; everything else is
  // treated as a single-label suffix.
  static const std::set<std::string> suffixes = {
      "co.uk", "org.uk", "ac.uk", "gov.uk", "me.uk", "ltd.uk", "plc.uk", "net.uk", "sch.uk", "nhs.uk",
      "com.au", "net.au", "org.au", "edu.au", "gov.au", "co.nz", "org.nz", "net.nz", "govt.nz",
      "co.jp", "ne.jp", "or.jp", "ac.jp", "go.jp", "co.kr", "or.kr", "ac.kr", "go.kr",
      "com.cn", "net.cn", "org.cn", "gov.cn", "edu.cn", "com.hk", "org.hk", "edu.hk", "com.tw", "org.tw", "edu.tw",
      "com.sg", "edu.sg", "gov.sg", "com.my", "com.br", "net.br", "org.br", "gov.br", "com.ar", "com.mx",
      "co.in", "net.in", "org.in", "ac.in", "gov.in", "co.za", "org.za", "ac.za", "co.il", "org.il", "ac.il",
      "com.tr", "org.tr", "com.ua", "com.ru", "com.pl", "co.id", "or.id", "ac.id", "com.vn", "com.ph", "com.pk",
      "com.sa", "com.eg", "com.ng", "co.ke", "co.th", "ac.th", "github.io", "gitlab.io", "blogspot.com",
      "herokuapp.com", "netlify.app", "vercel.app", "pages.dev", "appspot.com", "azurewebsites.net",
      "cloudfront.net", "s3.amazonaws.com", "web.app", "firebaseapp.com"};
  std::vector<std::string> labels;
  std::size_t i = 0;
  for (auto j = host.find('.'); ; j = host.find('.', i)) {
    labels.push_back(host.substr(i, j == std::string::npos ? std::string::npos : j - i));
    if (j == std::string::npos) break;
    i = j + 1;
  }
  std::size_t suffix_labels = 1;
  for (std::size_t k = labels.size() - 1; k > 0; --k) {
    std::string candidate;
    for (std::size_t m = k; m < labels.size(); ++m) candidate += (m > k ? "." : "") + labels[m];
    if (suffixes.count(candidate)) suffix_labels = std::max(suffix_labels, labels.size() - k);
  }
  if (labels.size() <= suffix_labels) return host;
  std::string out;
  for (std::size_t m = labels.size() - suffix_labels - 1; m < labels.size(); ++m) {
    out += (out.empty() ? "" : ".") + labels[m];
  }
  return out;
}

std::vector<std::string> extract_links(const std::string& html, const std::string& base_url) {
  static const std::regex re(R"re(<a\s[^>]*?href\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>"']+)))re", std::regex::icase);
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(html.begin(), html.end(), re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const std::string raw = m[1].matched ? m[1].str() : m[2].matched ? m[2].str() : m[3].str();
    try {
      std::string abs = resolve_url(decode_entities(raw), base_url);
      if (!abs.empty()) out.push_back(std::move(abs));
    } catch (const Error&) {
      // Unparseable targets are not links we can follow.
    }
  }
  return out;
}

AliveStatus check_alive(const std::string& url, const CrawlLimits& limits) {
  AliveStatus st;
  st.url = url;
  std::string current = url;
  for (int hop = 0;; ++hop) {
    const ParsedUrl u = parse_url(current);
    if (!is_ip_literal(u.host)) {
      addrinfo hints{};
      hints.ai_socktype = SOCK_STREAM;
      addrinfo* res = nullptr;
      if (getaddrinfo(u.host.c_str(), nullptr, &hints, &res) != 0) {
        st.error = "dns";
        st.final_url = current;
        return st;
      }
      freeaddrinfo(res);
    }
    httplib::Client client(u.origin());
    configure(client, limits);
    auto res = client.Get(u.path);
    st.final_url = current;
    if (!res) {
      st.status = 0;
      st.error = error_bucket(res.error());
      return st;
    }
    st.status = res->status;
    if (res->status >= 300 && res->status < 400 && res->has_header("Location")) {
      if (hop >= limits.max_redirects) {
        st.error = "redirects";
        return st;
      }
      current = resolve_url(res->get_header_value("Location"), current);
      if (current.empty()) return st;
      continue;
    }
    return st;
  }
}

PageCapture StaticRenderer::visit(const std::string& url) {
  PageCapture cap;
  const ParsedUrl u = parse_url(url);
  httplib::Client client(u.origin());
  configure(client, limits_);
  auto res = client.Get(u.path);
  cap.final_url = url;
  if (!res) {
    cap.error = error_bucket(res.error());
    return cap;
  }
  cap.status = res->status;
  if (res->status >= 300 && res->status < 400 && res->has_header("Location")) {
    cap.redirect_to = resolve_url(res->get_header_value("Location"), url);
  }
  if (res->status == 200) {
    cap.html = res->body;
    cap.screenshot = placeholder_raster(res->body);
  }
  return cap;
}

namespace {

json wd_call(const std::string& endpoint, const CrawlLimits& limits, const std::string& method,
             const std::string& path, const json& body = nullptr) {
  const ParsedUrl u = parse_url(endpoint);
  httplib::Client client(u.origin());
  configure(client, limits);
  std::string prefix = u.path;
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  const std::string full = prefix + path;
  httplib::Result res = method == "GET"      ? client.Get(full)
                        : method == "DELETE" ? client.Delete(full)
                                             : client.Post(full, body.is_null() ? "{}" : body.dump(), "application/json");
  if (!res) throw Error(ErrorKind::kTransport, "webdriver " + method + " " + path + ": " + httplib::to_string(res.error()));
  json j;
  try {
    j = json::parse(res->body);
  } catch (const json::parse_error&) {
    throw Error(ErrorKind::kTransport, "webdriver " + path + ": non-JSON reply (HTTP " + std::to_string(res->status) + ")");
  }
  if (res->status != 200) {
    std::string msg = j.contains("value") && j["value"].is_object() ? j["value"].value("message", "") : "";
    throw Error(ErrorKind::kTransport, "webdriver " + path + ": HTTP " + std::to_string(res->status) + " " + msg);
  }
  return j.value("value", json());
}

}  // namespace

WebDriverRenderer::WebDriverRenderer(std::string endpoint, CrawlLimits limits, std::string browser)
    : endpoint_(std::move(endpoint)), limits_(limits), browser_(std::move(browser)), probe_(limits) {
  parse_url(endpoint_);
}

WebDriverRenderer::~WebDriverRenderer() {
  if (session_.empty()) return;
  try {
    wd_call(endpoint_, limits_, "DELETE", "/session/" + session_);
  } catch (const std::exception& e) {
    spdlog::debug("closing webdriver session: {}", e.what());
  }
}

void WebDriverRenderer::ensure_session() {
  if (!session_.empty()) return;
  const json caps = {{"capabilities", {{"alwaysMatch", {{"browserName", browser_}}}}}};
  const json v = wd_call(endpoint_, limits_, "POST", "/session", caps);
  session_ = v.value("sessionId", "");
  if (session_.empty()) throw Error(ErrorKind::kTransport, "webdriver returned no session id");
}

PageCapture WebDriverRenderer::visit(const std::string& url) {
  PageCapture cap = probe_.visit(url);
  cap.screenshot.reset();
  if (cap.status != 200) return cap;
  ensure_session();
  const std::string s = "/session/" + session_;
  wd_call(endpoint_, limits_, "POST", s + "/url", {{"url", url}});
  try {
    const json size = wd_call(endpoint_, limits_, "POST", s + "/execute/sync",
                              {{"script", "return [document.documentElement.scrollWidth, "
                                          "document.documentElement.scrollHeight];"},
                               {"args", json::array()}});
    if (size.is_array() && size.size() == 2) {
      wd_call(endpoint_, limits_, "POST", s + "/window/rect", {{"width", size[0]}, {"height", size[1]}});
    }
  } catch (const Error& e) {
    spdlog::debug("full-page sizing unavailable: {}", e.what());
  }
  const json shot = wd_call(endpoint_, limits_, "GET", s + "/screenshot");
  cap.screenshot = decode_image(base64_decode(shot.get<std::string>()));
  const json source = wd_call(endpoint_, limits_, "GET", s + "/source");
  if (source.is_string()) cap.html = source.get<std::string>();
  const json current = wd_call(endpoint_, limits_, "GET", s + "/url");
  if (current.is_string()) cap.final_url = current.get<std::string>();
  return cap;
}

std::string to_json_line(const CrawlRecord& r) {
  json j = {{"url", r.url},       {"domain", r.domain}, {"status", r.status},
            {"captured_at", r.captured_at}, {"depth", r.depth},   {"enqueued", r.enqueued}};
  j["screenshot"] = r.screenshot_ref ? json(*r.screenshot_ref) : json(nullptr);
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

std::vector<CrawlRecord> crawl_domain(const std::string& seed_url, Renderer& renderer, const CrawlLimits& limits,
                                      Rng& rng, const std::string& screenshot_dir, Sleeper sleeper) {
  limits.validate();
  if (!sleeper) sleeper = [](Seconds d) { std::this_thread::sleep_for(d); };
  const std::string seed = normalize_url(seed_url);
  const std::string domain = registrable_domain(url_host(seed));
  const auto same_domain = [&](const std::string& u) { return registrable_domain(url_host(u)) == domain; };

  std::vector<std::string> disallow;
  if (limits.respect_robots) disallow = robots_disallows(parse_url(seed).origin(), limits);
  const auto allowed = [&](const std::string& u) {
    const std::string path = parse_url(u).path;
    return std::none_of(disallow.begin(), disallow.end(), [&](const std::string& d) { return path.rfind(d, 0) == 0; });
  };

  std::deque<std::pair<std::string, int>> frontier{{seed, 0}};
  std::unordered_set<std::string> seen{seed};
  std::vector<CrawlRecord> records;
  std::optional<std::chrono::steady_clock::time_point> last_request;

  while (!frontier.empty() && records.size() < limits.max_pages_per_domain) {
    auto [url, depth] = frontier.front();
    frontier.pop_front();
    if (!allowed(url)) continue;

    if (last_request) {
      const Seconds since(std::chrono::steady_clock::now() - *last_request);
      if (since < limits.politeness_delay) sleeper(limits.politeness_delay - since);
    }
    last_request = std::chrono::steady_clock::now();

    CrawlRecord rec;
    rec.url = url;
    rec.domain = domain;
    rec.depth = depth;
    rec.captured_at = utc_now();
    PageCapture cap;
    try {
      cap = renderer.visit(url);
    } catch (const std::exception& e) {
      rec.error = std::string("renderer: ") + e.what();
      records.push_back(std::move(rec));
      continue;
    }
    rec.status = cap.status;
    rec.error = cap.error;

    if (cap.status == 200 && cap.screenshot && !screenshot_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "%03zu.png", records.size());
      const auto path = (std::filesystem::path(screenshot_dir) / name).string();
      std::filesystem::create_directories(screenshot_dir);
      write_png(path, *cap.screenshot);
      rec.screenshot_ref = path;
    }

    if (!cap.redirect_to.empty() && same_domain(cap.redirect_to) && seen.insert(cap.redirect_to).second) {
      frontier.emplace_back(cap.redirect_to, depth);
      ++rec.enqueued;
    }
    if (cap.status == 200) {
      std::vector<std::string> links;
      std::unordered_set<std::string> local;
      for (auto& l : extract_links(cap.html, cap.final_url.empty() ? url : cap.final_url)) {
        if (!seen.count(l) && same_domain(l) && local.insert(l).second) links.push_back(std::move(l));
      }
      shuffle(links, rng);
      if (links.size() > limits.fanout) links.resize(limits.fanout);
      for (auto& l : links) {
        seen.insert(l);
        frontier.emplace_back(std::move(l), depth + 1);
      }
      rec.enqueued += links.size();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<SiteCrawl> crawl_sites(const std::vector<std::string>& seeds,
                                   const std::function<std::unique_ptr<Renderer>()>& make_renderer,
                                   const CrawlLimits& limits, std::uint32_t seed, std::size_t workers,
                                   const std::string& output_dir) {
  limits.validate();
  std::vector<SiteCrawl> out(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    out[i].alive = check_alive(seeds[i], limits);
    if (!out[i].alive.crawlable()) {
      spdlog::info("skipping {}: {}", seeds[i], out[i].alive.bucket());
      return;
    }
    auto renderer = make_renderer();
    Rng rng = make_rng(seed + static_cast<std::uint32_t>(i));
    std::string dir;
    if (!output_dir.empty()) {
      char prefix[16];
      std::snprintf(prefix, sizeof prefix, "%04zu_", i);
      dir = (std::filesystem::path(output_dir) / (prefix + registrable_domain(url_host(seeds[i])))).string();
    }
    out[i].records = crawl_domain(seeds[i], *renderer, limits, rng, dir);
  });
  return out;
}

}  // namespace dpguard::harvester
