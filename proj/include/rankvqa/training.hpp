#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "json.hpp"
#include "rankvqa/data.hpp"
#include "rankvqa/losses.hpp"
#include "rankvqa/model.hpp"

namespace rankvqa {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0001;
  std::size_t patience = 5;
  std::uint64_t seed = 42;
  RankingConfig ranking;
  HybridConfig hybrid;

  void validate() const;
};

// Per-parameter Adam moments, index-aligned with the model's parameters().
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step_count = 0;

  static AdamState init(const std::vector<NamedParam>& params);
};

// One Adam update with classic L2 weight decay folded into the gradient:
// g' = g + weight_decay * theta. Every parameter must have a gradient;
// gradients are cleared afterwards.
void adam_step(std::vector<NamedParam>& params, AdamState& state,
               const TrainConfig& cfg);

// Stops once the monitored loss has gone `patience` consecutive observations
// without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  // Returns true when val_loss strictly improved on the best seen.
  bool observe(double val_loss);
  bool should_stop() const { return since_improvement_ >= patience_; }
  double best() const { return best_; }
  std::size_t epochs_since_improvement() const { return since_improvement_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t since_improvement_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_cls = 0.0, train_rank = 0.0, train_total = 0.0;
  double val_cls = 0.0, val_rank = 0.0, val_total = 0.0;
  double val_accuracy = 0.0, val_mrr = 0.0;
  double lambda_used = 0.0;
  double wall_time_sec = 0.0;

  // wall_time_sec is the one field that varies between otherwise identical
  // runs; drop it when comparing logs for determinism.
  nlohmann::json to_json(bool include_wall_time = true) const;
};

// Seed-derived random streams used inside the training loop; one instance
// lives for the whole fit() so streams advance across epochs.
struct TrainStreams {
  Rng dropout;
  Rng shuffle;
  Rng negatives;

  static TrainStreams derive(std::uint64_t seed);
};

struct EpochFragment {
  double cls = 0.0, rank = 0.0, total = 0.0;  // sample-weighted means
  double lambda_used = 0.0;
  std::optional<EvalReport> eval;  // evaluation mode only
};

// Training mode shuffles seeded batches and applies one adam_step per batch;
// evaluation mode computes losses and metrics without touching parameters.
EpochFragment run_epoch(RankVqaModel& model, const Dataset& split,
                        const TrainConfig& cfg, std::size_t epoch,
                        TrainStreams& streams, AdamState* adam, Mode mode);

// Evaluation-mode scores of a whole dataset, batched in dataset order.
EvalReport evaluate_model(const RankVqaModel& model, const Dataset& dataset,
                          std::size_t batch_size);

using EpochCallback = std::function<void(const EpochLog&, const RankVqaModel&)>;

struct FitResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

// Epoch loop with early stopping on validation total loss (strict
// improvement); on return the model holds the weights of the best epoch.
FitResult fit(RankVqaModel& model, const Dataset& train_split,
              const Dataset& val_split, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

}  // namespace rankvqa
