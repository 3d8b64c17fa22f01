#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankvqa/rng.hpp"

namespace rankvqa {

// One multimodal example: per-region visual features, a text feature vector,
// and the index of the correct answer.
struct Sample {
  std::string id;
  std::vector<std::vector<double>> visual;  // regions x d_visual
  std::vector<double> text;                 // d_text
  int answer = 0;
};

struct DatasetMeta {
  std::size_t d_visual = 0;
  std::size_t d_text = 0;
  std::size_t regions = 0;
  std::size_t n_answers = 0;
  std::string source;
  nlohmann::json generator;  // provenance; null when unknown

  nlohmann::json to_json() const;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

// Parameters of the synthetic cross-modal task. Each sample draws a concept c
// and a question type t; the answer is a lookup g(c, t), so neither modality
// alone determines it. Exactly one of the R visual regions carries the
// concept prototype (plus noise); the rest are standard-normal distractors.
struct SyntheticSpec {
  std::size_t n_concepts = 4;
  std::size_t n_question_types = 4;
  std::size_t n_answers = 8;
  std::size_t regions = 3;
  double noise_sigma = 0.25;
  std::size_t d_visual = 32;
  std::size_t d_text = 16;
  std::size_t n_samples = 4000;
  std::uint64_t seed = 43;

  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

// Generated dataset together with its ground truth, so tests can decode
// samples by nearest prototype without training anything.
struct SyntheticTask {
  Dataset dataset;
  std::vector<std::vector<double>> concept_prototypes;  // C x d_visual
  std::vector<std::vector<double>> type_prototypes;     // T x d_text
  std::vector<std::vector<int>> answer_table;           // C x T -> answer
};

// Deterministic in spec.seed. The answer table is a surjection onto
// [0, n_answers) with no constant row or column; prototypes are rejected
// until pairwise distances reach 4 * noise_sigma.
SyntheticTask generate_synthetic(const SyntheticSpec& spec);

// JSON-lines file: line 1 is the meta object, every further line one sample.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Seeded shuffle then contiguous partition; val and test sizes round down,
// the remainder goes to train. Every split must be non-empty.
Splits split_dataset(const Dataset& dataset, const SplitFractions& fractions,
                     std::uint64_t seed);

// Index batches over [0, n); shuffled when an rng is supplied, the final
// partial batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    Rng* shuffle_rng);

}  // namespace rankvqa
