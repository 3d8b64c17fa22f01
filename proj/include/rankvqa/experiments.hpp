#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankvqa/data.hpp"
#include "rankvqa/model.hpp"
#include "rankvqa/training.hpp"

namespace rankvqa {

// The ablation grid: each variant is a transform of the reference model and
// loss configuration.
//   full        - reference configuration
//   no_ranking  - lambda = 0, classification loss only
//   no_fusion   - projections + concatenation + MLP, attention bypassed
//   single_head - heads = 1
//   baseline    - no_fusion wiring and lambda = 0
enum class AblationVariant { kFull, kNoRanking, kNoFusion, kSingleHead, kBaseline };

std::string to_string(AblationVariant variant);
AblationVariant ablation_variant_from_string(const std::string& name);
std::vector<AblationVariant> all_ablation_variants();

// Applies a variant to the reference configs. The concatenating variants
// need d_model == 2 * d_proj, which the reference configuration satisfies.
ModelConfig apply_variant(const ModelConfig& reference, AblationVariant variant);
HybridConfig apply_variant(const HybridConfig& reference, AblationVariant variant);

struct AblationRunResult {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_ran = 0;
  double val_accuracy = 0.0;  // at the best epoch
  double val_mrr = 0.0;
  double test_accuracy = 0.0;
  double test_mrr = 0.0;
};

struct AblationRow {
  AblationVariant variant = AblationVariant::kFull;
  std::vector<AblationRunResult> runs;
  double test_accuracy_mean = 0.0, test_accuracy_std = 0.0;
  double test_mrr_mean = 0.0, test_mrr_std = 0.0;
  double val_accuracy_mean = 0.0, val_accuracy_std = 0.0;
  double val_mrr_mean = 0.0, val_mrr_std = 0.0;
};

struct AblationVerdict {
  std::string name;  // e.g. "full>=single_head"
  double lhs = 0.0;
  double rhs = 0.0;
  double required_margin = 0.0;
  bool pass = false;
};

struct AblationReport {
  std::string note;
  std::string split_checksum;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
  std::vector<AblationVerdict> verdicts;

  bool all_pass() const;
  nlohmann::json to_json() const;
  std::string to_table() const;  // aligned plain-text comparison
};

struct AblationSetup {
  ModelConfig model;  // reference (full) configuration
  TrainConfig train;
  SplitFractions split;
  std::uint64_t base_seed = 42;
  std::size_t n_seeds = 5;
};

// Trains every (variant, seed) pair on identical splits and per-seed data
// order, evaluates on the held-out test split, and compares variant means.
AblationReport run_ablation(const Dataset& dataset, const AblationSetup& setup,
                            const std::vector<AblationVariant>& variants);

// --- gradient checking ------------------------------------------------------

struct GradCheckLayer {
  std::string param;
  double max_rel_err = 0.0;       // worst over seeds and coordinates
  double max_abs_analytic = 0.0;  // scale witness; exactly 0 for dead inputs
  bool pass = false;
};

struct GradCheckConfigReport {
  std::string name;
  ModelConfig config;
  std::vector<GradCheckLayer> layers;
  double worst = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::vector<std::uint64_t> seeds;
  std::vector<GradCheckConfigReport> configs;

  bool all_pass() const;
  nlohmann::json to_json() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t batch = 3;
  RankingConfig ranking;
  HybridConfig hybrid;
  // Test fixture simulating a corrupted backward rule: adds `delta` to every
  // analytic gradient entry of parameters whose name contains `param_substring`.
  struct Tamper {
    std::string param_substring;
    double delta = 0.0;
  };
  std::optional<Tamper> tamper;
};

// For every parameter of every config, compares backward() on the full hybrid
// loss (training-mode forward with a replayed dropout stream) against
// finite_diff_grad. Failures are report entries, not exceptions.
GradCheckReport run_gradcheck(
    const std::vector<std::pair<std::string, ModelConfig>>& configs,
    const std::vector<std::uint64_t>& seeds, const GradCheckOptions& opts = {});

// Small enough for finite differences over every parameter.
ModelConfig tiny_reference_config(FusionMode mode = FusionMode::kTokenSequence);

}  // namespace rankvqa
