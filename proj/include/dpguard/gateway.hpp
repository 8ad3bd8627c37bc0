#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpguard/error.hpp"
#include "dpguard/image.hpp"

namespace dpguard::gateway {

struct ImagePayload {
  std::vector<std::uint8_t> bytes;  // encoded PNG/JPEG as sent on the wire
  std::string mime;
  std::string digest;  // sha256 of bytes
};

ImagePayload make_payload(std::vector<std::uint8_t> bytes);
ImagePayload make_payload(const Image& image);  // PNG-encodes

struct ChatRequest {
  std::string system_prompt;
  std::string user_prompt;
  std::vector<ImagePayload> images;
  double temperature = 0.0;
  int max_output = 1024;
};

struct Usage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  Usage usage;
  std::string backend;
  bool cached = false;
};

// Thrown by backends. `status` is the HTTP status (0 for connection-level
// failures); retryable errors are retried by the gateway.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, int status, bool retryable)
      : Error(status == 401 || status == 403 ? ErrorKind::kAuth : ErrorKind::kTransport, message),
        status_(status),
        retryable_(retryable) {}
  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse send(const ChatRequest& request) = 0;
  virtual std::string descriptor() const = 0;
};

using EmbeddingVector = std::vector<double>;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(std::string_view text) = 0;
  virtual std::string descriptor() const = 0;
};

// dot(a,b)/(|a||b|), clamped to [-1, 1]. Throws on dimension mismatch or a
// zero vector.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct RetryPolicy {
  int max_attempts = 5;
  double base_delay_s = 1.0;
  double factor = 2.0;
};

using Sleeper = std::function<void(std::chrono::duration<double>)>;

struct GatewayOptions {
  RetryPolicy retry;
  double requests_per_second = 1.0;  // 0 disables rate limiting
  std::size_t max_in_flight = 4;
  std::string cache_dir;  // empty disables the on-disk cache; only temperature-0 calls are cached
  std::chrono::duration<double> deadline{120.0};
  Sleeper sleeper;  // defaults to std::this_thread::sleep_for
};

class TokenBucket {
 public:
  TokenBucket(double rate_per_second, double burst, Sleeper sleeper);
  void acquire();

 private:
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mutex_;
  Sleeper sleeper_;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options = {});

  ChatResponse complete(const ChatRequest& request);

  // Cache key: sha256 over system prompt, user prompt, image digests, temperature.
  static std::string request_digest(const ChatRequest& request);

  std::string descriptor() const { return backend_->descriptor(); }
  long backend_calls() const { return backend_calls_.load(); }
  long cache_hits() const { return cache_hits_.load(); }
  const GatewayOptions& options() const { return options_; }

 private:
  ChatResponse attempt(const ChatRequest& request, std::chrono::duration<double> budget);
  bool read_cache(const std::string& digest, ChatResponse& out) const;
  void write_cache(const std::string& digest, const ChatResponse& response) const;

  std::shared_ptr<ChatBackend> backend_;
  GatewayOptions options_;
  TokenBucket bucket_;
  std::mutex slots_mutex_;
  std::condition_variable slots_cv_;
  std::size_t in_flight_ = 0;
  std::atomic<long> backend_calls_{0};
  std::atomic<long> cache_hits_{0};
};

// OpenAI-compatible chat-completions endpoint. Images travel as base64
// data URLs; the bearer token comes from the named environment variable.
struct HttpBackendOptions {
  std::string endpoint;  // e.g. https://api.example.com/v1/chat/completions
  std::string model;
  std::string api_key_env = "DPGUARD_API_KEY";
  std::chrono::duration<double> timeout{120.0};
};

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpBackendOptions options);
  ChatResponse send(const ChatRequest& request) override;
  std::string descriptor() const override { return "http:" + options_.model; }

  static std::string request_body(const ChatRequest& request, const std::string& model);

 private:
  HttpBackendOptions options_;
  std::string api_key_;
};

// OpenAI-compatible /embeddings endpoint.
class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(HttpBackendOptions options);
  EmbeddingVector embed(std::string_view text) override;
  std::string descriptor() const override { return "http-embed:" + options_.model; }

 private:
  HttpBackendOptions options_;
  std::string api_key_;
};

// Splits "https://host:port/path" into a scheme+authority and a path.
struct ParsedUrl {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string path;  // starts with '/', includes query
  std::string origin() const;
};
ParsedUrl parse_url(const std::string& url);

// ----- offline backends -----

// Replies from a table keyed by the digest of the first attached image, then
// by an optional callback, then the default reply. Faults can be queued.
class ScriptedChat final : public ChatBackend {
 public:
  using Handler = std::function<std::string(const ChatRequest&)>;

  explicit ScriptedChat(std::string default_reply = "No DP") : default_(std::move(default_reply)) {}

  void script(const std::string& image_digest, std::string reply);
  void set_handler(Handler handler) { handler_ = std::move(handler); }
  // The next `count` calls fail with `status` (0 = connection error).
  void inject_failures(int count, int status = 503);
  // Calls whose first image has this digest always fail with `status`.
  void fail_digest(const std::string& image_digest, int status = 503);

  // Loads {"default": str, "by_digest": {sha: reply}, "by_file": {path: reply},
  //        "mutations": [str, ...]} ; by_file paths resolve against base_dir.
  static std::shared_ptr<ScriptedChat> from_json(std::string_view text, const std::string& base_dir);

  ChatResponse send(const ChatRequest& request) override;
  std::string descriptor() const override { return "scripted-chat"; }
  long calls() const { return calls_.load(); }

 private:
  std::mutex mutex_;
  std::string default_;
  std::unordered_map<std::string, std::string> by_digest_;
  std::unordered_map<std::string, int> failing_digests_;
  std::vector<std::string> mutations_;
  std::size_t next_mutation_ = 0;
  Handler handler_;
  int pending_failures_ = 0;
  int failure_status_ = 503;
  std::atomic<long> calls_{0};
};

// Word-count vector over a vocabulary interned on first sight. Cosine between
// texts does not depend on interning order; texts with disjoint vocabularies
// are orthogonal.
class BagOfWordsEmbedder final : public Embedder {
 public:
  explicit BagOfWordsEmbedder(std::size_t capacity = 16384) : capacity_(capacity) {}
  EmbeddingVector embed(std::string_view text) override;
  std::string descriptor() const override { return "bag-of-words"; }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::size_t> vocab_;
};

// Signed feature hashing of word unigrams (FNV-1a) into a fixed dimension.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 512) : dimension_(dimension) {}
  EmbeddingVector embed(std::string_view text) override;
  std::string descriptor() const override { return "hashing-" + std::to_string(dimension_); }

 private:
  std::size_t dimension_;
};

// Lowercased alphanumeric word tokens.
std::vector<std::string> tokenize_words(std::string_view text);

}  // namespace dpguard::gateway
