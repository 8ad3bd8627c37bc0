#include "dpguard/prompt_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "dpguard/digest.hpp"
#include "dpguard/parallel.hpp"

namespace dpguard::optimizer {

using json = nlohmann::json;

void PromptQueue::sort_and_truncate() {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const QueueEntry& a, const QueueEntry& b) { return a.last_loss < b.last_loss; });
  if (entries.size() > capacity) entries.resize(capacity);
}

void OptimizerConfig::validate() const {
  const auto bad = [](const std::string& m) { throw Error(ErrorKind::kConfig, "optimizer: " + m); };
  if (queue_size < 1) bad("queue_size must be >= 1");
  if (new_per_round < 1) bad("new_per_round must be >= 1");
  if (rounds < 1) bad("rounds must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(similarity_threshold >= 0.0 && similarity_threshold < 1.0)) bad("similarity_threshold must lie in [0, 1)");
  if (!(epsilon > 0.0 && epsilon < 0.5)) bad("epsilon must lie in (0, 0.5)");
  if (stagnation_limit < 1) bad("stagnation_limit must be >= 1");
  if (mutation_temperature < 0.0 || detection_temperature < 0.0) bad("temperatures must be >= 0");
  if (!(max_flagged_fraction >= 0.0 && max_flagged_fraction <= 1.0)) bad("max_flagged_fraction must lie in [0, 1]");
}

const char* to_string(MutationAction a) {
  switch (a) {
    case MutationAction::kParaphrase: return "paraphrase";
    case MutationAction::kAddAction: return "add-action";
    case MutationAction::kDeleteAction: return "delete-action";
  }
  return "?";
}

MutationAction draw_action(Rng& rng) { return static_cast<MutationAction>(uniform_below(rng, 3)); }

gateway::ChatRequest mutation_request(const std::string& Pm, const std::string& Ps, const std::string& current,
                                      MutationAction action, double temperature) {
  gateway::ChatRequest req;
  req.system_prompt = Pm;
  req.user_prompt = std::string("Action: ") + to_string(action) + "\n\nContext given to the detection model:\n" + Ps +
                    "\n\nCurrent prompt:\n" + current;
  req.temperature = temperature;
  return req;
}

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

Prompt mutate(gateway::Gateway& gw, const std::string& Pm, const std::string& Ps, const Prompt& pb, Rng& rng,
              int new_id, int round, double temperature) {
  const MutationAction action = draw_action(rng);
  const auto response = gw.complete(mutation_request(Pm, Ps, pb.text, action, temperature));
  std::string text = trim(response.text);
  if (text.empty()) throw Error(ErrorKind::kMutation, std::string("empty model output for ") + to_string(action));
  return Prompt{new_id, std::move(text), pb.id, round};
}

double similarity(const std::string& candidate, const std::string& P0, gateway::Embedder& embedder) {
  return gateway::cosine_similarity(embedder.embed(candidate), embedder.embed(P0));
}

bool accept_similarity(double cosine, double s) { return cosine > s; }

bool accept_candidate(const std::string& candidate, const std::string& P0, gateway::Embedder& embedder, double s) {
  return accept_similarity(similarity(candidate, P0, embedder), s);
}

std::vector<int> label_vector(const CategorySet& labels, const std::vector<int>& classes) {
  std::vector<int> v(classes.size(), 0);
  for (std::size_t i = 0; i < classes.size(); ++i) v[i] = labels.count(classes[i]) ? 1 : 0;
  return v;
}

double bce_loss(std::span<const int> pred, std::span<const int> truth, double epsilon) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorKind::kValidation, "label vectors differ in length: " + std::to_string(pred.size()) + " vs " +
                                            std::to_string(truth.size()));
  }
  if (pred.empty()) throw Error(ErrorKind::kValidation, "empty label vectors");
  const double log_hit = std::log(1.0 - epsilon);
  const double log_miss = std::log(epsilon);
  double sum = 0.0;
  for (std::size_t c = 0; c < pred.size(); ++c) {
    const double log_p = pred[c] ? log_hit : log_miss;
    const double log_1mp = pred[c] ? log_miss : log_hit;
    sum += truth[c] ? log_p : log_1mp;
  }
  return -sum / static_cast<double>(pred.size());
}

CategorySet prediction_from_output(std::string_view text, const Taxonomy& taxonomy, const std::vector<int>& classes) {
  const CategorySet mentioned = parse_category_mentions(text, taxonomy);
  CategorySet kept;
  for (int c : classes) {
    if (mentioned.count(c)) kept.insert(c);
  }
  if (kept.empty() || kept.count(kNoDp)) return {kNoDp};
  return kept;
}

PromptScore score_prompt(gateway::Gateway& gw, const std::string& Ps, const std::string& prompt,
                         std::span<const BatchItem> batch, const Taxonomy& taxonomy, const OptimizerConfig& config) {
  if (batch.empty()) throw Error(ErrorKind::kValidation, "cannot score a prompt on an empty batch");
  const auto classes = taxonomy.detection_classes();
  PromptScore score;
  score.losses.assign(batch.size(), 0.0);
  std::vector<char> flagged(batch.size(), 0);

  parallel_for(batch.size(), config.parallelism, [&](std::size_t i) {
    const auto truth = label_vector(batch[i].truth, classes);
    gateway::ChatRequest req;
    req.system_prompt = Ps;
    req.user_prompt = prompt;
    req.images = {batch[i].image};
    req.temperature = config.detection_temperature;
    std::vector<int> pred;
    try {
      pred = label_vector(prediction_from_output(gw.complete(req).text, taxonomy, classes), classes);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kTransport) throw;
      spdlog::warn("scoring image {} failed: {}", batch[i].image.digest.substr(0, 12), e.what());
      flagged[i] = 1;
      pred = truth;
      for (int& v : pred) v = 1 - v;
    }
    score.losses[i] = bce_loss(pred, truth, config.epsilon);
  });

  score.flagged = static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), 1));
  if (static_cast<double>(score.flagged) > config.max_flagged_fraction * static_cast<double>(batch.size())) {
    throw Error(ErrorKind::kRound, std::to_string(score.flagged) + " of " + std::to_string(batch.size()) +
                                       " images failed while scoring a prompt");
  }
  double sum = 0.0;
  for (double l : score.losses) sum += l;
  score.mean_loss = sum / static_cast<double>(batch.size());
  return score;
}

std::string history_to_json(const std::vector<RoundRecord>& history, int indent) {
  json out = json::array();
  for (const auto& r : history) {
    json queue = json::array();
    for (const auto& q : r.queue) queue.push_back({{"id", q.id}, {"loss", q.loss}, {"sha256", q.digest}});
    out.push_back({{"round", r.round},
                   {"best_loss", r.best_loss},
                   {"best_id", r.best_id},
                   {"generated", r.generated},
                   {"attempts", r.attempts},
                   {"batch", r.batch},
                   {"queue", queue}});
  }
  return out.dump(indent);
}

OptimizeResult optimize(const OptimizerConfig& config, const Corpus& corpus, const Taxonomy& taxonomy,
                        gateway::Gateway& gw, gateway::Embedder& embedder, const PromptAssets& assets,
                        PayloadLoader loader) {
  config.validate();
  if (assets.initial_prompt.empty()) throw Error(ErrorKind::kValidation, "initial prompt is empty");
  const std::vector<UIRecord> train = corpus.in_split(Split::kTrain);
  if (train.empty()) throw Error(ErrorKind::kValidation, "optimizer needs a nonempty train split");
  if (!loader) {
    loader = [&corpus](const UIRecord& r) { return gateway::make_payload(read_file_bytes(corpus.resolve(r))); };
  }

  const auto classes = taxonomy.detection_classes();
  Rng rng = make_rng(config.seed);
  std::unordered_map<std::string, gateway::ImagePayload> payloads;

  OptimizeResult result;
  result.queue.capacity = config.queue_size;
  result.queue.entries.push_back({Prompt{0, assets.initial_prompt, std::nullopt, 0}, {}});
  Prompt pb = result.queue.best();
  int next_id = 1;
  const auto p0_embedding = embedder.embed(assets.initial_prompt);

  int stagnant = 0;
  int previous_best = -1;
  for (int round = 1; round <= config.rounds; ++round) {
    RoundRecord record;
    record.round = round;
    try {
      const std::size_t target = config.queue_size + config.new_per_round - result.queue.entries.size();
      const std::size_t cap = 10 * target;
      while (record.generated < target) {
        if (record.attempts >= cap) {
          throw Error(ErrorKind::kRound, "only " + std::to_string(record.generated) + " of " +
                                             std::to_string(target) + " candidates passed the similarity gate in " +
                                             std::to_string(cap) + " attempts");
        }
        ++record.attempts;
        Prompt candidate = mutate(gw, assets.mutation_instructions, assets.system_prompt, pb, rng, next_id, round,
                                  config.mutation_temperature);
        const double cos = gateway::cosine_similarity(embedder.embed(candidate.text), p0_embedding);
        if (!accept_similarity(cos, config.similarity_threshold)) continue;
        ++next_id;
        ++record.generated;
        result.accepted.push_back(candidate);
        result.queue.entries.push_back({std::move(candidate), {}});
      }

      const auto sample = balanced_sample(train, classes, {config.batch_size, config.min_per_category}, rng);
      std::vector<BatchItem> batch;
      batch.reserve(sample.size());
      for (const auto& r : sample) {
        auto it = payloads.find(r.image_ref);
        if (it == payloads.end()) it = payloads.emplace(r.image_ref, loader(r)).first;
        batch.push_back({it->second, r.labels});
        record.batch.push_back(r.image_ref);
      }

      for (auto& entry : result.queue.entries) {
        entry.last_loss = score_prompt(gw, assets.system_prompt, entry.prompt.text, batch, taxonomy, config).mean_loss;
      }
    } catch (const Error& e) {
      throw OptimizeError(e.kind(), "round " + std::to_string(round) + ": " + e.what(), result.history);
    }

    result.queue.sort_and_truncate();
    pb = result.queue.best();
    record.best_loss = result.queue.entries.front().last_loss;
    record.best_id = pb.id;
    for (const auto& e : result.queue.entries) {
      record.queue.push_back({e.prompt.id, e.last_loss, sha256_hex(e.prompt.text)});
    }
    result.history.push_back(std::move(record));
    spdlog::info("round {}: best prompt #{} loss {:.6f}", round, pb.id, result.history.back().best_loss);

    stagnant = (round > 1 && pb.id == previous_best) ? stagnant + 1 : 0;
    previous_best = pb.id;
    if (stagnant >= config.stagnation_limit) {
      result.early_stopped = true;
      break;
    }
  }
  result.best = pb;
  return result;
}

}  // namespace dpguard::optimizer
