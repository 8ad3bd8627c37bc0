#include <cstdlib>
#include <regex>

#include "httplib.h"
#include "json.hpp"

#include "dpguard/digest.hpp"
#include "dpguard/gateway.hpp"

namespace dpguard::gateway {

using json = nlohmann::json;

std::string ParsedUrl::origin() const {
  const bool default_port = (scheme == "http" && port == 80) || (scheme == "https" && port == 443);
  return scheme + "://" + host + (default_port ? "" : ":" + std::to_string(port));
}

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?)://([^/:?#]+)(?::(\d+))?([^#]*))", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(url, m, re)) throw Error(ErrorKind::kValidation, "not an http(s) URL: " + url);
  ParsedUrl u;
  u.scheme = m[1].str();
  for (auto& c : u.scheme) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  u.host = m[2].str();
  for (auto& c : u.host) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  u.port = m[3].matched ? std::stoi(m[3].str()) : (u.scheme == "https" ? 443 : 80);
  u.path = m[4].str();
  if (u.path.empty() || u.path[0] != '/') u.path = "/" + u.path;
  return u;
}

namespace {

std::string api_key_from_env(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? v : "";
}

json post_json(const HttpBackendOptions& options, const std::string& api_key, const std::string& body) {
  const ParsedUrl url = parse_url(options.endpoint);
  httplib::Client client(url.origin());
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout).count();
  const time_t sec = static_cast<time_t>(us / 1000000);
  const time_t usec = static_cast<time_t>(us % 1000000);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  auto res = client.Post(url.path, headers, body, "application/json");
  if (!res) {
    throw TransportError("request to " + url.origin() + " failed: " + httplib::to_string(res.error()), 0, true);
  }
  const int status = res->status;
  if (status == 401 || status == 403) throw TransportError("authentication rejected (HTTP " + std::to_string(status) + ")", status, false);
  if (status == 429 || status >= 500) throw TransportError("HTTP " + std::to_string(status), status, true);
  if (status != 200) throw TransportError("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200), status, false);
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("malformed response body: ") + e.what(), status, false);
  }
}

}  // namespace

HttpChatBackend::HttpChatBackend(HttpBackendOptions options)
    : options_(std::move(options)), api_key_(api_key_from_env(options_.api_key_env)) {
  parse_url(options_.endpoint);
}

std::string HttpChatBackend::request_body(const ChatRequest& request, const std::string& model) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", request.user_prompt}});
  for (const auto& img : request.images) {
    content.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:" + img.mime + ";base64," + base64_encode(img.bytes)}}}});
  }
  json messages = json::array();
  if (!request.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", content}});
  json body = {{"model", model},
               {"messages", messages},
               {"temperature", request.temperature},
               {"max_tokens", request.max_output}};
  return body.dump();
}

ChatResponse HttpChatBackend::send(const ChatRequest& request) {
  const json j = post_json(options_, api_key_, request_body(request, options_.model));
  ChatResponse r;
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) {
      r.text = content.get<std::string>();
    } else {
      for (const auto& part : content) r.text += part.value("text", "");
    }
  } catch (const json::exception& e) {
    throw TransportError(std::string("response has no message content: ") + e.what(), 200, false);
  }
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
    r.usage.completion_tokens = j["usage"].value("completion_tokens", 0L);
  }
  r.backend = descriptor();
  return r;
}

HttpEmbedder::HttpEmbedder(HttpBackendOptions options)
    : options_(std::move(options)), api_key_(api_key_from_env(options_.api_key_env)) {
  parse_url(options_.endpoint);
}

EmbeddingVector HttpEmbedder::embed(std::string_view text) {
  if (text.empty()) throw Error(ErrorKind::kValidation, "cannot embed empty text");
  const json body = {{"model", options_.model}, {"input", std::string(text)}};
  const json j = post_json(options_, api_key_, body.dump());
  try {
    return j.at("data").at(0).at("embedding").get<EmbeddingVector>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("response has no embedding: ") + e.what(), 200, false);
  }
}

}  // namespace dpguard::gateway
