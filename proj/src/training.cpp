#include "rankvqa/training.hpp"

#include <chrono>
#include <cmath>
#include <set>

#include "rankvqa/errors.hpp"

namespace rankvqa {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (patience == 0) throw ConfigError("train: patience must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
}

AdamState AdamState::init(const std::vector<NamedParam>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(p.tensor.numel(), 0.0);
    state.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return state;
}

void adam_step(std::vector<NamedParam>& params, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                        " parameters, model has " + std::to_string(params.size()));
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.tensor.has_grad()) {
      throw ContractError("adam_step: parameter " + p.name + " has no gradient");
    }
    auto grad = p.tensor.grad();
    auto theta = params[i].tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad[j] + cfg.weight_decay * theta[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      theta[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    params[i].tensor.zero_grad();
  }
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ConfigError("early stopper: patience must be >= 1");
}

bool EarlyStopper::observe(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    since_improvement_ = 0;
    return true;
  }
  since_improvement_ += 1;
  return false;
}

nlohmann::json EpochLog::to_json(bool include_wall_time) const {
  nlohmann::json j{{"epoch", epoch},
                   {"train_cls", train_cls},
                   {"train_rank", train_rank},
                   {"train_total", train_total},
                   {"val_cls", val_cls},
                   {"val_rank", val_rank},
                   {"val_total", val_total},
                   {"val_accuracy", val_accuracy},
                   {"val_mrr", val_mrr},
                   {"lambda", lambda_used}};
  if (include_wall_time) j["wall_time_sec"] = wall_time_sec;
  return j;
}

TrainStreams TrainStreams::derive(std::uint64_t seed) {
  // per-purpose streams: seed+3 dropout, seed+4 shuffle, seed+5 negatives
  return TrainStreams{Rng(seed + 3), Rng(seed + 4), Rng(seed + 5)};
}

namespace {

std::vector<int> batch_targets(const Dataset& dataset,
                               std::span<const std::size_t> indices) {
  std::vector<int> targets;
  targets.reserve(indices.size());
  for (std::size_t idx : indices) targets.push_back(dataset.samples[idx].answer);
  return targets;
}

}  // namespace

EpochFragment run_epoch(RankVqaModel& model, const Dataset& split,
                        const TrainConfig& cfg, std::size_t epoch,
                        TrainStreams& streams, AdamState* adam, Mode mode) {
  if (split.size() == 0) throw ContractError("run_epoch: empty split");
  if (mode == Mode::kTraining && adam == nullptr) {
    throw ContractError("run_epoch: training mode needs optimizer state");
  }
  const std::size_t epoch_index = epoch == 0 ? 0 : epoch - 1;  // ramp is 0-based

  EpochFragment fragment;
  const auto batches =
      batch_indices(split.size(), cfg.batch_size,
                    mode == Mode::kTraining ? &streams.shuffle : nullptr);

  auto params = model.parameters();
  std::vector<double> all_scores;
  std::vector<int> all_targets;
  if (mode == Mode::kEvaluation) {
    all_scores.reserve(split.size() * model.config().n_answers);
    all_targets.reserve(split.size());
  }

  for (const auto& batch : batches) {
    Tensor logits = model.forward_batch(split, batch, mode, streams.dropout);
    const auto targets = batch_targets(split, batch);
    LossBreakdown lb = hybrid_loss(logits, targets, cfg.ranking, cfg.hybrid,
                                   epoch_index, streams.negatives);
    fragment.lambda_used = lb.lambda_used;
    const double w = static_cast<double>(batch.size());
    fragment.cls += lb.cls * w;
    fragment.rank += lb.rank * w;
    fragment.total += lb.total_value * w;

    if (mode == Mode::kTraining) {
      model.zero_grad();
      lb.total.backward();
      adam_step(params, *adam, cfg);
    } else {
      auto row = logits.data();
      all_scores.insert(all_scores.end(), row.begin(), row.end());
      all_targets.insert(all_targets.end(), targets.begin(), targets.end());
    }
  }

  const double n = static_cast<double>(split.size());
  fragment.cls /= n;
  fragment.rank /= n;
  fragment.total /= n;

  if (mode == Mode::kEvaluation) {
    fragment.eval = evaluate(
        Tensor::from_data({split.size(), model.config().n_answers},
                          std::move(all_scores)),
        all_targets);
  }
  return fragment;
}

EvalReport evaluate_model(const RankVqaModel& model, const Dataset& dataset,
                          std::size_t batch_size) {
  if (dataset.size() == 0) throw ContractError("evaluate_model: empty dataset");
  std::vector<double> scores;
  scores.reserve(dataset.size() * model.config().n_answers);
  std::vector<int> targets;
  targets.reserve(dataset.size());
  Rng unused(0);
  for (const auto& batch : batch_indices(dataset.size(), batch_size, nullptr)) {
    Tensor logits =
        model.forward_batch(dataset, batch, Mode::kEvaluation, unused);
    auto row = logits.data();
    scores.insert(scores.end(), row.begin(), row.end());
    for (std::size_t idx : batch) targets.push_back(dataset.samples[idx].answer);
  }
  return evaluate(Tensor::from_data({dataset.size(), model.config().n_answers},
                                    std::move(scores)),
                  targets);
}

FitResult fit(RankVqaModel& model, const Dataset& train_split,
              const Dataset& val_split, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_split.size() == 0 || val_split.size() == 0) {
    throw ContractError("fit: empty split");
  }
  {
    std::set<std::string> train_ids;
    for (const auto& s : train_split.samples) train_ids.insert(s.id);
    for (const auto& s : val_split.samples) {
      if (train_ids.count(s.id)) {
        throw ContractError("fit: sample " + s.id + " appears in both splits");
      }
    }
  }

  TrainStreams streams = TrainStreams::derive(cfg.seed);
  auto adam = AdamState::init(model.parameters());
  EarlyStopper stopper(cfg.patience);

  FitResult result;
  std::vector<std::vector<double>> best_snapshot = model.snapshot();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochFragment train_frag = run_epoch(model, train_split, cfg, epoch, streams,
                                         &adam, Mode::kTraining);
    EpochFragment val_frag = run_epoch(model, val_split, cfg, epoch, streams,
                                       nullptr, Mode::kEvaluation);
    const auto end = std::chrono::steady_clock::now();

    EpochLog log;
    log.epoch = epoch;
    log.train_cls = train_frag.cls;
    log.train_rank = train_frag.rank;
    log.train_total = train_frag.total;
    log.val_cls = val_frag.cls;
    log.val_rank = val_frag.rank;
    log.val_total = val_frag.total;
    log.val_accuracy = val_frag.eval->accuracy;
    log.val_mrr = val_frag.eval->mrr;
    log.lambda_used = train_frag.lambda_used;
    log.wall_time_sec = std::chrono::duration<double>(end - start).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, model);

    if (stopper.observe(val_frag.total)) {
      result.best_epoch = epoch;
      result.best_val_loss = val_frag.total;
      best_snapshot = model.snapshot();
    }
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }

  model.restore(best_snapshot);
  return result;
}

}  // namespace rankvqa
