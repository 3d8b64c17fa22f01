#include "rankvqa/model.hpp"

#include <cstring>
#include <fstream>

#include "rankvqa/errors.hpp"

namespace rankvqa {

namespace {

using nlohmann::json;

Tensor mean_rows(const Tensor& m) {
  const double inv = 1.0 / static_cast<double>(m.rows());
  return matmul(Tensor::constant({1, m.rows()}, inv), m);
}

}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kPaperLiteral: return "paper_literal";
    case FusionMode::kTokenSequence: return "token_sequence";
    case FusionMode::kConcatOnly: return "concat_only";
  }
  throw ConfigError("unknown fusion mode");
}

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "paper_literal") return FusionMode::kPaperLiteral;
  if (name == "token_sequence") return FusionMode::kTokenSequence;
  if (name == "concat_only") return FusionMode::kConcatOnly;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

void ModelConfig::validate() const {
  if (d_visual == 0 || d_text == 0 || d_proj == 0 || d_model == 0 ||
      n_answers == 0 || regions == 0) {
    throw ConfigError("model config: zero-sized dimension");
  }
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (fusion_mode != FusionMode::kTokenSequence && d_model != 2 * d_proj) {
    throw ConfigError("model config: concatenating modes need d_model = 2*d_proj, got " +
                      std::to_string(d_model) + " vs 2*" + std::to_string(d_proj));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("model config: dropout rate must lie in [0, 1)");
  }
  for (std::size_t h : mlp_hidden) {
    if (h == 0) throw ConfigError("model config: zero-width mlp hidden layer");
  }
}

json ModelConfig::to_json() const {
  return json{{"d_visual", d_visual},
              {"d_text", d_text},
              {"d_proj", d_proj},
              {"d_model", d_model},
              {"heads", heads},
              {"d_ff", d_ff},
              {"mlp_hidden", mlp_hidden},
              {"n_answers", n_answers},
              {"fusion_mode", to_string(fusion_mode)},
              {"regions", regions},
              {"dropout_rate", dropout_rate},
              {"mean_pool", mean_pool}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig config;
  config.d_visual = j.at("d_visual").get<std::size_t>();
  config.d_text = j.at("d_text").get<std::size_t>();
  config.d_proj = j.at("d_proj").get<std::size_t>();
  config.d_model = j.at("d_model").get<std::size_t>();
  config.heads = j.at("heads").get<std::size_t>();
  config.d_ff = j.at("d_ff").get<std::size_t>();
  config.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
  config.n_answers = j.at("n_answers").get<std::size_t>();
  config.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
  config.regions = j.at("regions").get<std::size_t>();
  config.dropout_rate = j.at("dropout_rate").get<double>();
  config.mean_pool = j.at("mean_pool").get<bool>();
  config.validate();
  return config;
}

RankVqaModel::RankVqaModel(const ModelConfig& config, Rng& init_rng)
    : config_(config) {
  config_.validate();
  const bool token_seq = config_.fusion_mode == FusionMode::kTokenSequence;
  const std::size_t proj_out = token_seq ? config_.d_model : config_.d_proj;
  visual_proj_ = make_linear(config_.d_visual, proj_out, init_rng);
  text_proj_ = make_linear(config_.d_text, proj_out, init_rng);
  if (config_.fusion_mode != FusionMode::kConcatOnly) {
    fusion_ = make_multi_head_attention(config_.d_model, config_.heads, init_rng);
  }
  if (token_seq) {
    ffn_ = make_feed_forward(config_.d_model, config_.ff_width(), init_rng);
  }
  head_ = make_mlp(config_.d_model, config_.mlp_hidden, config_.n_answers,
                   config_.dropout_rate, init_rng);
}

Tensor RankVqaModel::score_row(const Tensor& visual, const Tensor& text,
                               Mode mode, Rng& dropout_rng) const {
  if (visual.rank() != 2 || visual.cols() != config_.d_visual) {
    throw ShapeError("forward: visual " + shape_str(visual.shape()) +
                     " does not match d_visual " + std::to_string(config_.d_visual));
  }
  if (text.rank() != 1 || text.shape()[0] != config_.d_text) {
    throw ShapeError("forward: text " + shape_str(text.shape()) +
                     " does not match d_text " + std::to_string(config_.d_text));
  }
  Tensor text_row = reshape(text, {1, config_.d_text});

  Tensor pooled;
  if (config_.fusion_mode == FusionMode::kTokenSequence) {
    if (visual.rows() != config_.regions) {
      throw ShapeError("forward: expected " + std::to_string(config_.regions) +
                       " regions, got " + std::to_string(visual.rows()));
    }
    Tensor sequence = concat(visual_proj_.forward(visual),
                             text_proj_.forward(text_row), 0);
    Tensor fused = ffn_->forward(fusion_->forward(sequence));
    pooled = config_.mean_pool ? mean_rows(fused)
                               : slice(fused, 0, config_.regions, 1);
  } else {
    Tensor joined = concat(visual_proj_.forward(mean_rows(visual)),
                           text_proj_.forward(text_row), 1);
    pooled = config_.fusion_mode == FusionMode::kPaperLiteral
                 ? fusion_->forward(joined)
                 : joined;
  }
  return head_.forward(pooled, mode, dropout_rng);
}

Tensor RankVqaModel::forward(const Tensor& visual, const Tensor& text,
                             Mode mode, Rng& dropout_rng) const {
  return reshape(score_row(visual, text, mode, dropout_rng), {config_.n_answers});
}

Tensor RankVqaModel::forward_eval(const Tensor& visual, const Tensor& text) const {
  Rng unused(0);
  return forward(visual, text, Mode::kEvaluation, unused);
}

Tensor RankVqaModel::forward_batch(const Dataset& dataset,
                                   std::span<const std::size_t> indices,
                                   Mode mode, Rng& dropout_rng) const {
  if (indices.empty()) throw ContractError("forward_batch: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(indices.size());
  for (std::size_t idx : indices) {
    const Sample& s = dataset.samples.at(idx);
    rows.push_back(score_row(Tensor::from_rows(s.visual),
                             Tensor::from_data({s.text.size()}, s.text), mode,
                             dropout_rng));
  }
  if (rows.size() == 1) return rows[0];
  return concat(std::span<const Tensor>(rows), 0);
}

std::vector<NamedParam> RankVqaModel::parameters() const {
  std::vector<NamedParam> params;
  auto push_linear = [&](const std::string& name, const Linear& layer) {
    params.push_back({name + ".weight", layer.weight});
    params.push_back({name + ".bias", layer.bias});
  };
  push_linear("visual_proj", visual_proj_);
  push_linear("text_proj", text_proj_);
  if (fusion_) {
    push_linear("fusion.w_q", fusion_->w_q);
    push_linear("fusion.w_k", fusion_->w_k);
    push_linear("fusion.w_v", fusion_->w_v);
    push_linear("fusion.w_o", fusion_->w_o);
  }
  if (ffn_) {
    push_linear("ffn.w1", ffn_->w1);
    push_linear("ffn.w2", ffn_->w2);
  }
  for (std::size_t i = 0; i < head_.layers.size(); ++i) {
    push_linear("head.layer" + std::to_string(i), head_.layers[i]);
  }
  return params;
}

std::size_t RankVqaModel::count_params() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

void RankVqaModel::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

std::vector<std::vector<double>> RankVqaModel::snapshot() const {
  std::vector<std::vector<double>> snap;
  for (const auto& p : parameters()) {
    snap.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
  return snap;
}

void RankVqaModel::restore(const std::vector<std::vector<double>>& snap) {
  auto params = parameters();
  if (snap.size() != params.size()) {
    throw ContractError("restore: snapshot has " + std::to_string(snap.size()) +
                        " entries, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    if (snap[i].size() != dst.size()) {
      throw ContractError("restore: parameter " + params[i].name + " size mismatch");
    }
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

void save_checkpoint(const RankVqaModel& model, const std::filesystem::path& path) {
  const auto params = model.parameters();
  json header{{"format", "rankvqa-checkpoint"},
              {"version", 1},
              {"config", model.config().to_json()}};
  json param_list = json::array();
  for (const auto& p : params) {
    param_list.push_back(json{{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  header["params"] = param_list;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header.dump() << "\n";
  for (const auto& p : params) {
    // doubles are written little-endian; this build targets little-endian hosts
    static_assert(sizeof(double) == 8);
    auto span = p.tensor.data();
    out.write(reinterpret_cast<const char*>(span.data()),
              static_cast<std::streamsize>(span.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed while writing " + path.string());
}

RankVqaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw ParseError(path.string() + ":1: missing checkpoint header");
  }
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ":1: bad header JSON: " + e.what());
  }
  ModelConfig config;
  std::vector<std::pair<std::string, Shape>> listed;
  try {
    if (header.at("format").get<std::string>() != "rankvqa-checkpoint") {
      throw ParseError(path.string() + ": not a rankvqa checkpoint");
    }
    config = ModelConfig::from_json(header.at("config"));
    for (const auto& entry : header.at("params")) {
      listed.emplace_back(entry.at("name").get<std::string>(),
                          entry.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ":1: bad header fields: " + e.what());
  }

  Rng init_rng(0);
  RankVqaModel model(config, init_rng);
  auto params = model.parameters();
  if (params.size() != listed.size()) {
    throw ParseError(path.string() + ": header lists " +
                     std::to_string(listed.size()) + " parameters, config builds " +
                     std::to_string(params.size()));
  }
  std::size_t total_values = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != listed[i].first ||
        params[i].tensor.shape() != listed[i].second) {
      throw ParseError(path.string() + ": parameter " + std::to_string(i) +
                       " mismatch: header has " + listed[i].first + " " +
                       shape_str(listed[i].second));
    }
    total_values += params[i].tensor.numel();
  }

  const std::streampos data_start = in.tellg();
  in.seekg(0, std::ios::end);
  const std::streampos file_end = in.tellg();
  const auto payload = static_cast<std::size_t>(file_end - data_start);
  if (payload != total_values * sizeof(double)) {
    throw ParseError(path.string() + ": parameter payload is " +
                     std::to_string(payload) + " bytes, header implies " +
                     std::to_string(total_values * sizeof(double)));
  }
  in.seekg(data_start);
  for (auto& p : params) {
    auto dst = p.tensor.mutable_data();
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
  }
  if (!in) throw IoError("failed while reading " + path.string());
  return model;
}

}  // namespace rankvqa
