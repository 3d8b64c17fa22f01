#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "json.hpp"
#include "rankvqa/rng.hpp"
#include "rankvqa/tensor.hpp"

namespace rankvqa {

struct RankingConfig {
  enum class Negatives { kAll, kSampled };

  double margin_alpha = 0.2;
  Negatives negatives = Negatives::kAll;
  std::size_t sample_k = 4;  // negatives per sample in kSampled mode
};

struct HybridConfig {
  enum class Schedule { kConstant, kLinearRamp };

  double lambda_rank = 1.0;
  Schedule schedule = Schedule::kConstant;
  std::size_t ramp_epochs = 10;

  // Ranking-loss weight at a 0-based epoch index; the linear ramp reaches
  // lambda_rank at epoch ramp_epochs and stays there.
  double lambda_at(std::size_t epoch) const;
};

// Eq-by-eq decomposition of one batch loss. total backpropagates into both
// terms; total_value equals cls + lambda_used * rank in the same arithmetic.
struct LossBreakdown {
  Tensor total;
  double cls = 0.0;
  double rank = 0.0;
  double total_value = 0.0;
  double lambda_used = 0.0;
};

// Mean over the batch of -log softmax(logits_b)[target_b], log-sum-exp form.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Mean over samples of sum_{negatives} max(0, alpha - (s_pos - s_neg)).
// The negative set is every wrong answer, or sample_k of them drawn without
// replacement from rng.
Tensor ranking_loss(const Tensor& scores, const std::vector<int>& targets,
                    const RankingConfig& cfg, Rng& rng);

LossBreakdown hybrid_loss(const Tensor& logits, const std::vector<int>& targets,
                          const RankingConfig& rcfg, const HybridConfig& hcfg,
                          std::size_t epoch, Rng& rng);

// 1-based position of the target once answers are sorted by descending score,
// ties broken by ascending answer index.
int rank_of_correct(std::span<const double> scores, int target);

struct EvalReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double mrr = 0.0;
  std::vector<int> ranks;
  std::map<int, double> per_class_accuracy;
  nlohmann::json config;  // run metadata supplied by the caller

  nlohmann::json to_json() const;
};

// Accuracy and MRR over a score matrix [B x A]. The prediction for a row is
// the lowest-index answer among the maxima (the same tie policy as ranks).
EvalReport evaluate(const Tensor& scores, const std::vector<int>& targets);

}  // namespace rankvqa
