#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpguard/corpus.hpp"
#include "dpguard/gateway.hpp"
#include "dpguard/rng.hpp"
#include "dpguard/taxonomy.hpp"

namespace dpguard::optimizer {

struct Prompt {
  int id = 0;
  std::string text;
  std::optional<int> parent_id;
  int round_created = 0;
};

struct QueueEntry {
  Prompt prompt;
  double last_loss = std::numeric_limits<double>::infinity();
};

struct PromptQueue {
  std::vector<QueueEntry> entries;
  std::size_t capacity = 15;

  const Prompt& best() const { return entries.front().prompt; }
  // Stable ascending sort by loss, then truncation to capacity.
  void sort_and_truncate();
};

struct OptimizerConfig {
  std::size_t queue_size = 15;      // n
  std::size_t new_per_round = 10;   // m
  int rounds = 25;                  // T
  std::size_t batch_size = 100;     // b
  std::size_t min_per_category = 5;
  double similarity_threshold = 0.2;
  int stagnation_limit = 3;
  double epsilon = 1e-7;
  std::uint32_t seed = 42;
  double mutation_temperature = 1.0;
  double detection_temperature = 0.0;
  double max_flagged_fraction = 0.2;
  std::size_t parallelism = 4;

  // Throws Error(kConfig) naming the first violated bound.
  void validate() const;
};

struct PromptAssets {
  std::string system_prompt;   // Ps
  std::string initial_prompt;  // P0
  std::string mutation_instructions;  // Pm
};

enum class MutationAction { kParaphrase, kAddAction, kDeleteAction };
const char* to_string(MutationAction a);

MutationAction draw_action(Rng& rng);
gateway::ChatRequest mutation_request(const std::string& Pm, const std::string& Ps, const std::string& current,
                                      MutationAction action, double temperature);

// One candidate derived from pb. Throws Error(kMutation) on empty model output.
Prompt mutate(gateway::Gateway& gw, const std::string& Pm, const std::string& Ps, const Prompt& pb, Rng& rng,
              int new_id, int round, double temperature = 1.0);

double similarity(const std::string& candidate, const std::string& P0, gateway::Embedder& embedder);
// True iff cosine(embed(candidate), embed(P0)) > s.
bool accept_candidate(const std::string& candidate, const std::string& P0, gateway::Embedder& embedder, double s);
bool accept_similarity(double cosine, double s);

// Indicator vector over `classes`.
std::vector<int> label_vector(const CategorySet& labels, const std::vector<int>& classes);

// -(1/C) sum_c [y ln p + (1-y) ln(1-p)] with p = 1-eps where pred is 1 and eps where 0.
double bce_loss(std::span<const int> pred, std::span<const int> truth, double epsilon = 1e-7);

// Model output -> predicted ids restricted to `classes`; nothing usable means {No DP}.
CategorySet prediction_from_output(std::string_view text, const Taxonomy& taxonomy, const std::vector<int>& classes);

struct BatchItem {
  gateway::ImagePayload image;
  CategorySet truth;
};

struct PromptScore {
  double mean_loss = 0.0;
  std::vector<double> losses;
  std::size_t flagged = 0;
};

// Throws Error(kRound) when more than max_flagged_fraction of the images fail.
PromptScore score_prompt(gateway::Gateway& gw, const std::string& Ps, const std::string& prompt,
                         std::span<const BatchItem> batch, const Taxonomy& taxonomy, const OptimizerConfig& config);

struct QueueSnapshot {
  int id = 0;
  double loss = 0.0;
  std::string digest;  // sha256 of the prompt text
};

struct RoundRecord {
  int round = 0;
  double best_loss = 0.0;
  int best_id = 0;
  std::size_t generated = 0;
  std::size_t attempts = 0;
  std::vector<std::string> batch;  // image refs of the round's batch
  std::vector<QueueSnapshot> queue;
};

struct OptimizeResult {
  Prompt best;
  PromptQueue queue;
  std::vector<RoundRecord> history;
  std::vector<Prompt> accepted;  // every candidate admitted to the queue, in order
  bool early_stopped = false;
};

std::string history_to_json(const std::vector<RoundRecord>& history, int indent = -1);

class OptimizeError : public Error {
 public:
  OptimizeError(ErrorKind kind, const std::string& message, std::vector<RoundRecord> partial)
      : Error(kind, message), history_(std::move(partial)) {}
  const std::vector<RoundRecord>& history() const { return history_; }

 private:
  std::vector<RoundRecord> history_;
};

// Turns a corpus record into the bytes sent to the model.
using PayloadLoader = std::function<gateway::ImagePayload(const UIRecord&)>;

OptimizeResult optimize(const OptimizerConfig& config, const Corpus& corpus, const Taxonomy& taxonomy,
                        gateway::Gateway& gw, gateway::Embedder& embedder, const PromptAssets& assets,
                        PayloadLoader loader = {});

}  // namespace dpguard::optimizer
