#include <cctype>
#include <cmath>
#include <filesystem>

#include "json.hpp"

#include "dpguard/digest.hpp"
#include "dpguard/gateway.hpp"

namespace dpguard::gateway {

using json = nlohmann::json;

void ScriptedChat::script(const std::string& image_digest, std::string reply) {
  std::lock_guard lock(mutex_);
  by_digest_[image_digest] = std::move(reply);
}

void ScriptedChat::inject_failures(int count, int status) {
  std::lock_guard lock(mutex_);
  pending_failures_ = count;
  failure_status_ = status;
}

void ScriptedChat::fail_digest(const std::string& image_digest, int status) {
  std::lock_guard lock(mutex_);
  failing_digests_[image_digest] = status;
}

namespace {

[[noreturn]] void fail_with(int status) {
  if (status == 0) throw TransportError("connection refused (injected)", 0, true);
  const bool retryable = status == 429 || status >= 500;
  throw TransportError("HTTP " + std::to_string(status) + " (injected)", status, retryable);
}

}  // namespace

ChatResponse ScriptedChat::send(const ChatRequest& request) {
  ++calls_;
  Handler handler;
  std::string reply;
  bool have_reply = false;
  {
    std::lock_guard lock(mutex_);
    if (pending_failures_ > 0) {
      --pending_failures_;
      fail_with(failure_status_);
    }
    if (!request.images.empty()) {
      const std::string& d = request.images.front().digest;
      if (auto it = failing_digests_.find(d); it != failing_digests_.end()) fail_with(it->second);
      if (auto it = by_digest_.find(d); it != by_digest_.end()) {
        reply = it->second;
        have_reply = true;
      }
    } else if (!mutations_.empty() && !handler_) {
      reply = mutations_[next_mutation_++ % mutations_.size()];
      have_reply = true;
    }
    handler = handler_;
  }
  if (!have_reply) reply = handler ? handler(request) : default_;
  ChatResponse r;
  r.text = std::move(reply);
  r.backend = descriptor();
  r.usage.prompt_tokens = static_cast<long>(request.system_prompt.size() + request.user_prompt.size()) / 4;
  r.usage.completion_tokens = static_cast<long>(r.text.size()) / 4;
  return r;
}

std::shared_ptr<ScriptedChat> ScriptedChat::from_json(std::string_view text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, std::string("mock script: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "mock script must be a JSON object");
  auto chat = std::make_shared<ScriptedChat>(j.value("default", std::string("No DP")));
  try {
    if (j.contains("by_digest")) {
      for (const auto& [digest, reply] : j.at("by_digest").items()) chat->script(digest, reply.get<std::string>());
    }
    if (j.contains("by_file")) {
      for (const auto& [file, reply] : j.at("by_file").items()) {
        std::filesystem::path p(file);
        if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
        chat->script(sha256_hex(read_file_bytes(p.string())), reply.get<std::string>());
      }
    }
    if (j.contains("mutations")) chat->mutations_ = j.at("mutations").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("mock script: ") + e.what());
  }
  return chat;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

EmbeddingVector BagOfWordsEmbedder::embed(std::string_view text) {
  const auto words = tokenize_words(text);
  if (words.empty()) throw Error(ErrorKind::kValidation, "cannot embed text without words");
  EmbeddingVector v(capacity_, 0.0);
  std::lock_guard lock(mutex_);
  for (const auto& w : words) {
    auto it = vocab_.find(w);
    if (it == vocab_.end()) {
      if (vocab_.size() >= capacity_) {
        throw Error(ErrorKind::kRuntime, "bag-of-words vocabulary full (" + std::to_string(capacity_) + ")");
      }
      it = vocab_.emplace(w, vocab_.size()).first;
    }
    v[it->second] += 1.0;
  }
  return v;
}

EmbeddingVector HashingEmbedder::embed(std::string_view text) {
  const auto words = tokenize_words(text);
  if (words.empty()) throw Error(ErrorKind::kValidation, "cannot embed text without words");
  EmbeddingVector v(dimension_, 0.0);
  for (const auto& w : words) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : w) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
  }
  bool nonzero = false;
  for (double x : v) nonzero |= x != 0.0;
  // Opposite-signed collisions can cancel out completely; keep the vector usable.
  if (!nonzero) v[0] = 1.0;
  return v;
}

}  // namespace dpguard::gateway
