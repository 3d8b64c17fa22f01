#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "rankvqa/data.hpp"
#include "rankvqa/experiments.hpp"
#include "rankvqa/model.hpp"
#include "rankvqa/training.hpp"

namespace rankvqa {

// Everything a run needs, with the reference desk-scale defaults. A config
// file is a single JSON object of flat namespaced keys ("train.learning_rate");
// unknown keys are rejected. An empty file is the reference run.
//
// All randomness flows from `seed` through fixed per-purpose offsets:
// seed+1 data (generation and splitting), seed+2 parameter init, seed+3
// dropout, seed+4 batch shuffling, seed+5 negative sampling.
struct RunConfig {
  std::uint64_t seed = 42;

  SyntheticSpec data;  // data.*; its seed is derived, not configurable

  struct ModelSection {
    FusionMode fusion_mode = FusionMode::kTokenSequence;
    std::size_t d_proj = 32;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t d_ff = 0;  // 0 means d_model
    std::vector<std::size_t> mlp_hidden{64, 32};
    double dropout_rate = 0.5;
    bool mean_pool = false;
  } model;

  TrainConfig train;  // train.*, rank.*, hybrid.*

  SplitFractions split;  // split.*

  struct AblationSection {
    std::vector<AblationVariant> variants = all_ablation_variants();
    std::size_t n_seeds = 5;
  } ablation;

  struct GradcheckSection {
    std::size_t n_seeds = 20;
    double tolerance = 1e-4;
    double step = 1e-5;
  } gradcheck;

  // Merges flat keys over the current values; rejects unknown keys.
  void apply(const nlohmann::json& flat);

  static RunConfig from_json(const nlohmann::json& flat);
  static RunConfig from_file(const std::filesystem::path& path);

  // Flat echo of every settable key with its final value; feeding this back
  // in as a config file reproduces the run.
  nlohmann::json resolved() const;

  // Assembled sub-configurations with derived seeds applied.
  SyntheticSpec synthetic_spec() const;
  ModelConfig model_config(const DatasetMeta& meta) const;
  TrainConfig train_config() const;
};

}  // namespace rankvqa
