#include "rankvqa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "rankvqa/rng.hpp"

using namespace rankvqa;

namespace {

Tensor random_scores(std::size_t batch, std::size_t answers, Rng& rng) {
  std::vector<double> data(batch * answers);
  for (double& v : data) v = rng.normal();
  return Tensor::from_data({batch, answers}, std::move(data));
}

// Pairwise-comparison oracle for the rank of the target: one plus the number
// of answers strictly better, plus earlier-indexed ties.
int rank_by_pairwise_count(std::span<const double> scores, int target) {
  int rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (static_cast<int>(j) == target) continue;
    if (scores[j] > scores[static_cast<std::size_t>(target)]) ++rank;
    if (scores[j] == scores[static_cast<std::size_t>(target)] &&
        static_cast<int>(j) < target) {
      ++rank;
    }
  }
  return rank;
}

}  // namespace

TEST_CASE("cross_entropy hand cases") {
  Tensor uniform = Tensor::from_rows({{0, 0}});
  CHECK(std::abs(cross_entropy(uniform, {0}).value() - std::numbers::ln2) <= 1e-12);

  Tensor saturated = Tensor::from_rows({{30, -30}});
  CHECK(cross_entropy(saturated, {0}).value() < 1e-12);
  CHECK(cross_entropy(saturated, {0}).value() >= 0.0);
}

TEST_CASE("cross_entropy rejects bad targets and empty batches") {
  Tensor logits = Tensor::from_rows({{0, 0}});
  CHECK_THROWS_AS(cross_entropy(logits, {2}), ContractError);
  CHECK_THROWS_AS(cross_entropy(logits, {-1}), ContractError);
  CHECK_THROWS_AS(cross_entropy(logits, {0, 1}), ContractError);
}

TEST_CASE("cross_entropy gradient matches finite differences") {
  Rng rng(31);
  Tensor logits = random_scores(4, 5, rng);
  const std::vector<int> targets{1, 0, 4, 2};
  logits.set_requires_grad(true);
  cross_entropy(logits, targets).backward();
  Tensor fd = finite_diff_grad(
      [&](const Tensor& t) { return cross_entropy(t, targets).value(); }, logits,
      1e-5);
  CHECK(max_relative_error(logits.grad(), fd.data(), 1e-3) <= 1e-6);
}

TEST_CASE("ranking_loss reproduces the hand case") {
  // alpha=0.5, s_pos=2.0, negatives 1.0/1.9/2.2: hinges 0, 0.4, 0.7
  Tensor scores = Tensor::from_rows({{2.0, 1.0, 1.9, 2.2}});
  RankingConfig cfg;
  cfg.margin_alpha = 0.5;
  Rng rng(32);
  const double loss = ranking_loss(scores, {0}, cfg, rng).value();
  const double expected = std::max(0.0, 0.5 - (2.0 - 1.0)) +
                          std::max(0.0, 0.5 - (2.0 - 1.9)) +
                          std::max(0.0, 0.5 - (2.0 - 2.2));
  CHECK(loss == expected);
  CHECK(std::abs(loss - 1.1) <= 1e-12);
}

TEST_CASE("ranking_loss is zero exactly when every margin is satisfied") {
  RankingConfig cfg;
  cfg.margin_alpha = 0.3;
  Rng rng(33);
  Tensor satisfied = Tensor::from_rows({{2.0, 1.7, 0.0, -3.0}});
  CHECK(ranking_loss(satisfied, {0}, cfg, rng).value() == 0.0);

  // one margin violated by a hair
  Tensor violated = Tensor::from_rows({{2.0, 1.71, 0.0, -3.0}});
  CHECK(ranking_loss(violated, {0}, cfg, rng).value() > 0.0);
}

TEST_CASE("ranking_loss is invariant to a per-sample score shift") {
  Rng rng(34);
  RankingConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor scores = random_scores(3, 5, rng);
    const std::vector<int> targets{0, 3, 2};
    const double base = ranking_loss(scores, targets, cfg, rng).value();

    std::vector<double> shifted(scores.data().begin(), scores.data().end());
    const double shift = rng.normal() * 10.0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t j = 0; j < 5; ++j) shifted[b * 5 + j] += shift;
    const double after =
        ranking_loss(Tensor::from_data({3, 5}, std::move(shifted)), targets, cfg,
                     rng)
            .value();
    CHECK(std::abs(base - after) <= 1e-9);
  }
}

TEST_CASE("ranking_loss subgradient matches finite differences off the hinge") {
  Rng rng(35);
  RankingConfig cfg;
  cfg.margin_alpha = 0.2;
  // resample until every hinge argument is at least 1e-3 from the kink
  Tensor scores;
  std::vector<int> targets{1, 0};
  for (;;) {
    scores = random_scores(2, 4, rng);
    bool safe = true;
    auto px = scores.data();
    for (std::size_t b = 0; b < 2; ++b) {
      const double pos = px[b * 4 + static_cast<std::size_t>(targets[b])];
      for (std::size_t j = 0; j < 4; ++j) {
        if (static_cast<int>(j) == targets[b]) continue;
        safe = safe && std::abs(cfg.margin_alpha - (pos - px[b * 4 + j])) >= 1e-3;
      }
    }
    if (safe) break;
  }
  scores.set_requires_grad(true);
  ranking_loss(scores, targets, cfg, rng).backward();
  Tensor fd = finite_diff_grad(
      [&](const Tensor& t) {
        Rng fresh(0);
        return ranking_loss(t, targets, cfg, fresh).value();
      },
      scores, 1e-5);
  CHECK(max_relative_error(scores.grad(), fd.data(), 1e-3) <= 1e-5);
}

TEST_CASE("ranking_loss sampled negatives are seeded and bounded") {
  Tensor scores = Tensor::from_rows({{1.0, 0.2, 0.4, 0.6, 0.8}});
  RankingConfig sampled;
  sampled.margin_alpha = 2.0;  // every hinge active
  sampled.negatives = RankingConfig::Negatives::kSampled;
  sampled.sample_k = 2;

  Rng rng_a(36), rng_b(36);
  const double a = ranking_loss(scores, {0}, sampled, rng_a).value();
  const double b = ranking_loss(scores, {0}, sampled, rng_b).value();
  CHECK(a == b);

  RankingConfig all;
  all.margin_alpha = 2.0;
  Rng rng_c(36);
  const double everything = ranking_loss(scores, {0}, all, rng_c).value();
  CHECK(a < everything);  // two hinges instead of four

  // K >= A-1 falls back to the full negative set
  sampled.sample_k = 10;
  Rng rng_d(36);
  CHECK(ranking_loss(scores, {0}, sampled, rng_d).value() == everything);
}

TEST_CASE("ranking_loss contract errors") {
  Rng rng(37);
  RankingConfig cfg;
  CHECK_THROWS_AS(ranking_loss(Tensor::from_rows({{1.0}}), {0}, cfg, rng),
                  ContractError);
  CHECK_THROWS_AS(ranking_loss(Tensor::from_rows({{1, 2}}), {5}, cfg, rng),
                  ContractError);
}

TEST_CASE("hybrid loss arithmetic is exact") {
  Rng rng(38);
  RankingConfig rcfg;
  HybridConfig hcfg;

  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = random_scores(4, 6, rng);
    logits.set_requires_grad(true);
    const std::vector<int> targets{0, 5, 2, 2};
    LossBreakdown lb = hybrid_loss(logits, targets, rcfg, hcfg, 0, rng);
    CHECK(lb.total_value == lb.cls + lb.lambda_used * lb.rank);
    CHECK(lb.total.value() == lb.total_value);

    // the total backpropagates into both terms
    lb.total.backward();
    CHECK(logits.has_grad());
  }

  HybridConfig off;
  off.lambda_rank = 0.0;
  Tensor logits = random_scores(3, 4, rng);
  LossBreakdown lb = hybrid_loss(logits, {0, 1, 2}, rcfg, off, 0, rng);
  CHECK(lb.total_value == lb.cls);
  CHECK(lb.rank >= 0.0);  // still computed, weighted by zero
}

TEST_CASE("lambda ramp hits the documented waypoints") {
  HybridConfig ramp;
  ramp.lambda_rank = 1.0;
  ramp.schedule = HybridConfig::Schedule::kLinearRamp;
  ramp.ramp_epochs = 10;
  CHECK(ramp.lambda_at(0) == 0.0);
  CHECK(ramp.lambda_at(5) == 0.5);
  CHECK(ramp.lambda_at(10) == 1.0);
  CHECK(ramp.lambda_at(25) == 1.0);

  HybridConfig constant;
  constant.lambda_rank = 0.7;
  CHECK(constant.lambda_at(0) == 0.7);
  CHECK(constant.lambda_at(100) == 0.7);
}

TEST_CASE("rank_of_correct hand cases and tie policy") {
  const double a[] = {0.1, 0.9, 0.5};
  CHECK(rank_of_correct(a, 1) == 1);
  const double ties[] = {0.3, 0.3, 0.3, 0.3};
  CHECK(rank_of_correct(ties, 2) == 3);
  CHECK_THROWS_AS(rank_of_correct(ties, 4), ContractError);
}

TEST_CASE("rank_of_correct agrees with the pairwise oracle on 1000 vectors") {
  Rng rng(39);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(8);
    std::vector<double> scores(n);
    // quantized draws force plenty of ties
    for (double& v : scores) v = static_cast<double>(rng.below(4)) * 0.25;
    const int target = static_cast<int>(rng.below(n));
    CHECK(rank_of_correct(scores, target) == rank_by_pairwise_count(scores, target));
  }
}

TEST_CASE("rank_of_correct is invariant under strictly increasing transforms") {
  Rng rng(40);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(6);
    for (double& v : scores) v = rng.normal();
    const int target = static_cast<int>(rng.below(6));
    const int base = rank_of_correct(scores, target);

    std::vector<double> mapped(6);
    for (std::size_t j = 0; j < 6; ++j) mapped[j] = std::exp(2.0 * scores[j]) + 1.0;
    CHECK(rank_of_correct(mapped, target) == base);
  }
}

TEST_CASE("evaluate reproduces the metric hand cases") {
  // targets hit at ranks 1, 2, 4
  Tensor scores = Tensor::from_rows({
      {5, 1, 2, 3},   // target 0, rank 1
      {9, 5, 1, 2},   // target 1, rank 2
      {4, 3, 2, 1},   // target 3, rank 4
  });
  EvalReport report = evaluate(scores, {0, 1, 3});
  CHECK(report.n == 3);
  CHECK(report.ranks == std::vector<int>{1, 2, 4});
  CHECK(report.accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(report.mrr == (1.0 + 1.0 / 2.0 + 1.0 / 4.0) / 3.0);
  CHECK(report.mrr == 7.0 / 12.0);

  Tensor simple = Tensor::from_rows({{1, 0}, {1, 0}, {0, 1}, {1, 0}});
  EvalReport basic = evaluate(simple, {0, 0, 1, 1});
  CHECK(basic.accuracy == 0.75);
}

TEST_CASE("evaluate matches a per-sample oracle on random matrices") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t batch = 1 + rng.below(6), answers = 2 + rng.below(5);
    Tensor scores = random_scores(batch, answers, rng);
    std::vector<int> targets(batch);
    for (int& t : targets) t = static_cast<int>(rng.below(answers));
    EvalReport report = evaluate(scores, targets);

    double acc = 0.0, mrr = 0.0;
    std::size_t rank1 = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      std::span<const double> row(&scores.data()[b * answers], answers);
      std::size_t best = 0;
      for (std::size_t j = 1; j < answers; ++j)
        if (row[j] > row[best]) best = j;
      acc += best == static_cast<std::size_t>(targets[b]) ? 1.0 : 0.0;
      const int rank = rank_by_pairwise_count(row, targets[b]);
      mrr += 1.0 / rank;
      rank1 += rank == 1 ? 1 : 0;
    }
    acc /= static_cast<double>(batch);
    mrr /= static_cast<double>(batch);
    CHECK(report.accuracy == doctest::Approx(acc).epsilon(1e-15));
    CHECK(report.mrr == doctest::Approx(mrr).epsilon(1e-12));
    // every rank-1 sample contributes fully to both sums
    CHECK(report.mrr >= static_cast<double>(rank1) / static_cast<double>(batch));
    CHECK(report.accuracy >= 0.0);
    CHECK(report.accuracy <= 1.0);
    CHECK(report.mrr <= 1.0);
  }
}

TEST_CASE("evaluate rejects an empty batch") {
  CHECK_THROWS_AS(evaluate(Tensor::zeros({1, 2}), {}), ContractError);
}

TEST_CASE("EvalReport serializes with the exact field set") {
  Tensor scores = Tensor::from_rows({{1, 0}, {0, 1}});
  EvalReport report = evaluate(scores, {0, 0});
  report.config = nlohmann::json{{"note", "unit"}};
  const nlohmann::json j = report.to_json();
  CHECK(j.size() == 6);
  for (const char* key :
       {"n", "accuracy", "mrr", "ranks", "per_class_accuracy", "config"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["per_class_accuracy"]["0"] == 0.5);
}
