#include "dpguard/gateway.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <thread>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "dpguard/digest.hpp"
#include "dpguard/simd/kernels.hpp"

namespace dpguard::gateway {

using json = nlohmann::json;
using Seconds = std::chrono::duration<double>;

ImagePayload make_payload(std::vector<std::uint8_t> bytes) {
  ImagePayload p;
  switch (sniff_format(bytes)) {
    case ImageFormat::kPng: p.mime = "image/png"; break;
    case ImageFormat::kJpeg: p.mime = "image/jpeg"; break;
    default: throw Error(ErrorKind::kDecode, "image payload is neither PNG nor JPEG");
  }
  p.digest = sha256_hex(bytes);
  p.bytes = std::move(bytes);
  return p;
}

ImagePayload make_payload(const Image& image) { return make_payload(encode_png(image)); }

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kValidation, "embedding dimensions differ: " + std::to_string(a.size()) +
                                            " vs " + std::to_string(b.size()));
  }
  const double na = simd::dot(a, a);
  const double nb = simd::dot(b, b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::kValidation, "cosine similarity of a zero vector");
  const double c = simd::dot(a, b) / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

namespace {

Sleeper default_sleeper() {
  return [](Seconds d) { std::this_thread::sleep_for(d); };
}

}  // namespace

TokenBucket::TokenBucket(double rate_per_second, double burst, Sleeper sleeper)
    : rate_(rate_per_second),
      burst_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()),
      sleeper_(sleeper ? std::move(sleeper) : default_sleeper()) {}

void TokenBucket::acquire() {
  if (rate_ <= 0.0) return;
  std::unique_lock lock(mutex_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    tokens_ = std::min(burst_, tokens_ + Seconds(now - last_).count() * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const Seconds wait((1.0 - tokens_) / rate_);
    lock.unlock();
    sleeper_(wait);
    lock.lock();
  }
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      bucket_(options_.requests_per_second, 1.0, nullptr) {
  if (!backend_) throw Error(ErrorKind::kConfig, "gateway needs a chat backend");
  if (!options_.sleeper) options_.sleeper = default_sleeper();
  if (options_.max_in_flight == 0) options_.max_in_flight = 1;
  if (options_.retry.max_attempts < 1) options_.retry.max_attempts = 1;
}

std::string Gateway::request_digest(const ChatRequest& request) {
  json key = json::array();
  key.push_back(request.system_prompt);
  key.push_back(request.user_prompt);
  json digests = json::array();
  for (const auto& img : request.images) digests.push_back(img.digest);
  key.push_back(digests);
  char temp[32];
  std::snprintf(temp, sizeof temp, "%.17g", request.temperature);
  key.push_back(temp);
  return sha256_hex(key.dump());
}

bool Gateway::read_cache(const std::string& digest, ChatResponse& out) const {
  if (options_.cache_dir.empty()) return false;
  const auto path = std::filesystem::path(options_.cache_dir) / (digest + ".json");
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return false;
  try {
    const json j = json::parse(read_text_file(path.string()));
    out.text = j.at("text").get<std::string>();
    out.backend = j.value("backend", "");
    out.usage.prompt_tokens = j.value("prompt_tokens", 0L);
    out.usage.completion_tokens = j.value("completion_tokens", 0L);
    out.cached = true;
    return true;
  } catch (const std::exception& e) {
    spdlog::warn("ignoring unreadable cache entry {}: {}", path.string(), e.what());
    return false;
  }
}

void Gateway::write_cache(const std::string& digest, const ChatResponse& response) const {
  if (options_.cache_dir.empty()) return;
  const json j = {{"text", response.text},
                  {"backend", response.backend},
                  {"prompt_tokens", response.usage.prompt_tokens},
                  {"completion_tokens", response.usage.completion_tokens}};
  write_file_atomic((std::filesystem::path(options_.cache_dir) / (digest + ".json")).string(), j.dump());
}

namespace {

struct CallState {
  std::mutex mutex;
  std::condition_variable cv;
  bool done = false;
  std::optional<ChatResponse> response;
  std::exception_ptr error;
};

}  // namespace

// Runs one backend call on its own thread so a hung backend cannot hold the
// caller past the deadline; an abandoned call finishes in the background.
ChatResponse Gateway::attempt(const ChatRequest& request, Seconds budget) {
  auto state = std::make_shared<CallState>();
  std::thread([state, backend = backend_, request] {
    std::optional<ChatResponse> response;
    std::exception_ptr error;
    try {
      response = backend->send(request);
    } catch (...) {
      error = std::current_exception();
    }
    std::lock_guard lock(state->mutex);
    state->response = std::move(response);
    state->error = error;
    state->done = true;
    state->cv.notify_all();
  }).detach();

  std::unique_lock lock(state->mutex);
  if (!state->cv.wait_for(lock, budget, [&] { return state->done; })) {
    throw TransportError("request deadline exceeded", 0, false);
  }
  if (state->error) std::rethrow_exception(state->error);
  return std::move(*state->response);
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  if (request.user_prompt.empty()) throw Error(ErrorKind::kValidation, "chat request needs a user prompt");
  if (request.temperature < 0.0) throw Error(ErrorKind::kValidation, "temperature must be >= 0");

  // Sampled completions are meant to vary between calls, so only greedy ones are cached.
  const bool cacheable = request.temperature == 0.0;
  const std::string digest = request_digest(request);
  ChatResponse cached;
  if (cacheable && read_cache(digest, cached)) {
    ++cache_hits_;
    return cached;
  }

  {
    std::unique_lock lock(slots_mutex_);
    slots_cv_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
    ++in_flight_;
  }
  struct SlotRelease {
    Gateway* g;
    ~SlotRelease() {
      {
        std::lock_guard lock(g->slots_mutex_);
        --g->in_flight_;
      }
      g->slots_cv_.notify_one();
    }
  } release{this};

  const auto start = std::chrono::steady_clock::now();
  const RetryPolicy& retry = options_.retry;
  double delay = retry.base_delay_s;
  for (int attempt_no = 1;; ++attempt_no) {
    const Seconds remaining = options_.deadline - Seconds(std::chrono::steady_clock::now() - start);
    if (remaining <= Seconds::zero()) throw TransportError("request deadline exceeded", 0, false);
    bucket_.acquire();
    ++backend_calls_;
    try {
      ChatResponse response = attempt(request, remaining);
      if (response.backend.empty()) response.backend = backend_->descriptor();
      if (cacheable) write_cache(digest, response);
      return response;
    } catch (const TransportError& e) {
      if (e.kind() == ErrorKind::kAuth || !e.retryable()) throw;
      if (attempt_no >= retry.max_attempts) {
        throw TransportError("giving up after " + std::to_string(attempt_no) +
                                 " attempts, last status " + std::to_string(e.status()) + ": " + e.what(),
                             e.status(), false);
      }
      spdlog::debug("attempt {} failed ({}); retrying in {:.2f}s", attempt_no, e.what(), delay);
      options_.sleeper(Seconds(delay));
      delay *= retry.factor;
    }
  }
}

}  // namespace dpguard::gateway
