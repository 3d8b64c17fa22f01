#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rankvqa/data.hpp"
#include "rankvqa/layers.hpp"
#include "rankvqa/rng.hpp"
#include "rankvqa/tensor.hpp"

namespace rankvqa {

// How the two modalities are combined before the answer head.
//   paper_literal  - both projections concatenated into one d_model vector,
//                    self-attention over that single position (degenerate by
//                    construction: w_q and w_k receive zero gradient).
//   token_sequence - each visual region and the text vector become d_model
//                    tokens; attention plus a feed-forward block fuse them and
//                    the text-token row is pooled.
//   concat_only    - projections concatenated and fed straight to the head;
//                    the wiring used by the fusion-ablation variants.
enum class FusionMode { kPaperLiteral, kTokenSequence, kConcatOnly };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& name);

struct ModelConfig {
  std::size_t d_visual = 2048;
  std::size_t d_text = 768;
  std::size_t d_proj = 1024;   // per-modality width in concatenating modes
  std::size_t d_model = 2048;  // fusion width
  std::size_t heads = 8;
  std::size_t d_ff = 0;  // 0 means d_model
  std::vector<std::size_t> mlp_hidden{1024, 512, 256};
  std::size_t n_answers = 2;
  FusionMode fusion_mode = FusionMode::kTokenSequence;
  std::size_t regions = 1;
  double dropout_rate = 0.5;
  bool mean_pool = false;  // token_sequence: pool the mean row instead of the text row

  std::size_t ff_width() const { return d_ff == 0 ? d_model : d_ff; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Answer-scoring network: modality projectors, fusion, pooled representation,
// and an MLP head whose logit i is the score of candidate answer i.
class RankVqaModel {
 public:
  RankVqaModel(const ModelConfig& config, Rng& init_rng);

  const ModelConfig& config() const { return config_; }

  // visual [R x d_visual], text [d_text] -> candidate scores [n_answers].
  Tensor forward(const Tensor& visual, const Tensor& text, Mode mode,
                 Rng& dropout_rng) const;
  Tensor forward_eval(const Tensor& visual, const Tensor& text) const;

  // Row b holds the scores of batch sample b; dropout masks are drawn
  // independently per sample in batch order.
  Tensor forward_batch(const Dataset& dataset, std::span<const std::size_t> indices,
                       Mode mode, Rng& dropout_rng) const;

  std::vector<NamedParam> parameters() const;
  std::size_t count_params() const;
  void zero_grad();

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

  // Wiring pieces, exposed for inspection and tests.
  const Linear& visual_proj() const { return visual_proj_; }
  const Linear& text_proj() const { return text_proj_; }
  const std::optional<MultiHeadAttention>& fusion() const { return fusion_; }
  const std::optional<FeedForward>& ffn() const { return ffn_; }
  const Mlp& head() const { return head_; }

 private:
  Tensor score_row(const Tensor& visual, const Tensor& text, Mode mode,
                   Rng& dropout_rng) const;  // [1 x n_answers]

  ModelConfig config_;
  Linear visual_proj_;
  Linear text_proj_;
  std::optional<MultiHeadAttention> fusion_;
  std::optional<FeedForward> ffn_;
  Mlp head_;
};

// Checkpoint file: one JSON header line (format version, config, ordered
// parameter names and shapes), a newline, then the concatenated raw
// little-endian float64 parameter data in header order.
void save_checkpoint(const RankVqaModel& model, const std::filesystem::path& path);
RankVqaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace rankvqa
