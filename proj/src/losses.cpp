#include "rankvqa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rankvqa/errors.hpp"

namespace rankvqa {

namespace {

void check_targets(std::size_t batch, std::size_t n_answers,
                   const std::vector<int>& targets, const char* op) {
  if (batch == 0) throw ContractError(std::string(op) + ": empty batch");
  if (targets.size() != batch) {
    throw ContractError(std::string(op) + ": " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(batch) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= n_answers) {
      throw ContractError(std::string(op) + ": target " + std::to_string(t) +
                          " out of range [0, " + std::to_string(n_answers) + ")");
    }
  }
}

}  // namespace

double HybridConfig::lambda_at(std::size_t epoch) const {
  if (schedule == Schedule::kConstant || ramp_epochs == 0) return lambda_rank;
  if (epoch >= ramp_epochs) return lambda_rank;
  return lambda_rank * static_cast<double>(epoch) / static_cast<double>(ramp_epochs);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be 2-d, got " +
                     shape_str(logits.shape()));
  }
  const std::size_t batch = logits.rows(), n_answers = logits.cols();
  check_targets(batch, n_answers, targets, "cross_entropy");

  auto px = logits.data();
  std::vector<double> probs(batch * n_answers);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = &px[b * n_answers];
    double mx = row[0];
    for (std::size_t j = 1; j < n_answers; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n_answers; ++j) {
      probs[b * n_answers + j] = std::exp(row[j] - mx);
      z += probs[b * n_answers + j];
    }
    for (std::size_t j = 0; j < n_answers; ++j) probs[b * n_answers + j] /= z;
    loss -= row[static_cast<std::size_t>(targets[b])] - mx - std::log(z);
  }
  loss /= static_cast<double>(batch);

  const double inv_batch = 1.0 / static_cast<double>(batch);
  return Tensor::make_op(
      "cross_entropy", {}, {loss}, {logits},
      [n_answers, targets, inv_batch, probs = std::move(probs)](
          std::span<const double> g, Tensor::GradSink& sink) {
        auto dl = sink.parent_grad(0);
        if (dl.empty()) return;
        const double scale = g[0] * inv_batch;
        for (std::size_t b = 0; b < targets.size(); ++b) {
          for (std::size_t j = 0; j < n_answers; ++j) {
            const double delta = j == static_cast<std::size_t>(targets[b]) ? 1.0 : 0.0;
            dl[b * n_answers + j] += scale * (probs[b * n_answers + j] - delta);
          }
        }
      });
}

Tensor ranking_loss(const Tensor& scores, const std::vector<int>& targets,
                    const RankingConfig& cfg, Rng& rng) {
  if (scores.rank() != 2) {
    throw ShapeError("ranking_loss: scores must be 2-d, got " +
                     shape_str(scores.shape()));
  }
  const std::size_t batch = scores.rows(), n_answers = scores.cols();
  if (n_answers < 2) {
    throw ContractError("ranking_loss: need at least 2 answers, got " +
                        std::to_string(n_answers));
  }
  if (cfg.margin_alpha < 0.0) {
    throw ConfigError("ranking_loss: margin must be >= 0");
  }
  if (cfg.negatives == RankingConfig::Negatives::kSampled && cfg.sample_k == 0) {
    throw ConfigError("ranking_loss: sampled mode needs sample_k >= 1");
  }
  check_targets(batch, n_answers, targets, "ranking_loss");

  auto px = scores.data();
  // Hinges still active at the forward point; backward only touches these.
  struct ActivePair {
    std::size_t sample;
    std::size_t negative;
  };
  std::vector<ActivePair> active;
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t pos = static_cast<std::size_t>(targets[b]);
    const double s_pos = px[b * n_answers + pos];

    std::vector<std::size_t> negatives;
    negatives.reserve(n_answers - 1);
    for (std::size_t j = 0; j < n_answers; ++j)
      if (j != pos) negatives.push_back(j);
    if (cfg.negatives == RankingConfig::Negatives::kSampled &&
        cfg.sample_k < negatives.size()) {
      // partial Fisher-Yates: the first sample_k entries are a uniform draw
      // without replacement
      for (std::size_t i = 0; i < cfg.sample_k; ++i) {
        const std::size_t j = i + rng.below(negatives.size() - i);
        std::swap(negatives[i], negatives[j]);
      }
      negatives.resize(cfg.sample_k);
    }

    for (std::size_t j : negatives) {
      const double arg = cfg.margin_alpha - (s_pos - px[b * n_answers + j]);
      if (arg > 0.0) {
        loss += arg;
        active.push_back({b, j});
      }
    }
  }
  loss /= static_cast<double>(batch);

  const double inv_batch = 1.0 / static_cast<double>(batch);
  return Tensor::make_op(
      "ranking_loss", {}, {loss}, {scores},
      [n_answers, targets, inv_batch, active = std::move(active)](
          std::span<const double> g, Tensor::GradSink& sink) {
        auto ds = sink.parent_grad(0);
        if (ds.empty()) return;
        const double scale = g[0] * inv_batch;
        for (const auto& pair : active) {
          const std::size_t pos = static_cast<std::size_t>(targets[pair.sample]);
          ds[pair.sample * n_answers + pair.negative] += scale;
          ds[pair.sample * n_answers + pos] -= scale;
        }
      });
}

LossBreakdown hybrid_loss(const Tensor& logits, const std::vector<int>& targets,
                          const RankingConfig& rcfg, const HybridConfig& hcfg,
                          std::size_t epoch, Rng& rng) {
  LossBreakdown out;
  Tensor cls = cross_entropy(logits, targets);
  Tensor rank = ranking_loss(logits, targets, rcfg, rng);
  out.lambda_used = hcfg.lambda_at(epoch);
  out.total = add(cls, scale(rank, out.lambda_used));
  out.cls = cls.value();
  out.rank = rank.value();
  out.total_value = out.total.value();
  return out;
}

int rank_of_correct(std::span<const double> scores, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= scores.size()) {
    throw ContractError("rank_of_correct: target " + std::to_string(target) +
                        " out of range [0, " + std::to_string(scores.size()) + ")");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  const auto it = std::find(order.begin(), order.end(),
                            static_cast<std::size_t>(target));
  return static_cast<int>(it - order.begin()) + 1;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [answer, acc] : per_class_accuracy) {
    per_class[std::to_string(answer)] = acc;
  }
  return nlohmann::json{{"n", n},
                        {"accuracy", accuracy},
                        {"mrr", mrr},
                        {"ranks", ranks},
                        {"per_class_accuracy", per_class},
                        {"config", config}};
}

EvalReport evaluate(const Tensor& scores, const std::vector<int>& targets) {
  if (scores.rank() != 2) {
    throw ShapeError("evaluate: scores must be 2-d, got " +
                     shape_str(scores.shape()));
  }
  const std::size_t batch = scores.rows(), n_answers = scores.cols();
  check_targets(batch, n_answers, targets, "evaluate");

  auto px = scores.data();
  EvalReport report;
  report.n = batch;
  report.ranks.reserve(batch);
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // correct, total
  double rank_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    std::span<const double> row(&px[b * n_answers], n_answers);
    std::size_t pred = 0;
    for (std::size_t j = 1; j < n_answers; ++j) {
      if (row[j] > row[pred]) pred = j;  // first maximum wins ties
    }
    const int rank = rank_of_correct(row, targets[b]);
    report.ranks.push_back(rank);
    rank_sum += 1.0 / static_cast<double>(rank);
    const bool hit = pred == static_cast<std::size_t>(targets[b]);
    correct += hit ? 1 : 0;
    auto& bucket = per_class[targets[b]];
    bucket.first += hit ? 1 : 0;
    bucket.second += 1;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(batch);
  report.mrr = rank_sum / static_cast<double>(batch);
  for (const auto& [answer, counts] : per_class) {
    report.per_class_accuracy[answer] =
        static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return report;
}

}  // namespace rankvqa
