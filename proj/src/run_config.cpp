#include "rankvqa/run_config.hpp"

#include <fstream>

#include "rankvqa/errors.hpp"

namespace rankvqa {

namespace {

using nlohmann::json;

std::string negatives_name(RankingConfig::Negatives negatives) {
  return negatives == RankingConfig::Negatives::kAll ? "all" : "sampled";
}

RankingConfig::Negatives negatives_from_string(const std::string& name) {
  if (name == "all") return RankingConfig::Negatives::kAll;
  if (name == "sampled") return RankingConfig::Negatives::kSampled;
  throw ConfigError("rank.negatives must be 'all' or 'sampled', got '" + name + "'");
}

std::string schedule_name(HybridConfig::Schedule schedule) {
  return schedule == HybridConfig::Schedule::kConstant ? "constant" : "linear_ramp";
}

HybridConfig::Schedule schedule_from_string(const std::string& name) {
  if (name == "constant") return HybridConfig::Schedule::kConstant;
  if (name == "linear_ramp") return HybridConfig::Schedule::kLinearRamp;
  throw ConfigError("hybrid.schedule must be 'constant' or 'linear_ramp', got '" +
                    name + "'");
}

}  // namespace

void RunConfig::apply(const json& flat) {
  if (!flat.is_object()) {
    throw ConfigError("config must be a single JSON object of flat keys");
  }
  for (const auto& [key, value] : flat.items()) {
    try {
      if (key == "seed") {
        seed = value.get<std::uint64_t>();
      } else if (key == "data.n_concepts") {
        data.n_concepts = value.get<std::size_t>();
      } else if (key == "data.n_question_types") {
        data.n_question_types = value.get<std::size_t>();
      } else if (key == "data.n_answers") {
        data.n_answers = value.get<std::size_t>();
      } else if (key == "data.regions") {
        data.regions = value.get<std::size_t>();
      } else if (key == "data.noise_sigma") {
        data.noise_sigma = value.get<double>();
      } else if (key == "data.d_visual") {
        data.d_visual = value.get<std::size_t>();
      } else if (key == "data.d_text") {
        data.d_text = value.get<std::size_t>();
      } else if (key == "data.n_samples") {
        data.n_samples = value.get<std::size_t>();
      } else if (key == "model.fusion_mode") {
        model.fusion_mode = fusion_mode_from_string(value.get<std::string>());
      } else if (key == "model.d_proj") {
        model.d_proj = value.get<std::size_t>();
      } else if (key == "model.d_model") {
        model.d_model = value.get<std::size_t>();
      } else if (key == "model.heads") {
        model.heads = value.get<std::size_t>();
      } else if (key == "model.d_ff") {
        model.d_ff = value.get<std::size_t>();
      } else if (key == "model.mlp_hidden") {
        model.mlp_hidden = value.get<std::vector<std::size_t>>();
      } else if (key == "model.dropout_rate") {
        model.dropout_rate = value.get<double>();
      } else if (key == "model.mean_pool") {
        model.mean_pool = value.get<bool>();
      } else if (key == "train.learning_rate") {
        train.learning_rate = value.get<double>();
      } else if (key == "train.batch_size") {
        train.batch_size = value.get<std::size_t>();
      } else if (key == "train.max_epochs") {
        train.max_epochs = value.get<std::size_t>();
      } else if (key == "train.beta1") {
        train.beta1 = value.get<double>();
      } else if (key == "train.beta2") {
        train.beta2 = value.get<double>();
      } else if (key == "train.epsilon") {
        train.epsilon = value.get<double>();
      } else if (key == "train.weight_decay") {
        train.weight_decay = value.get<double>();
      } else if (key == "train.patience") {
        train.patience = value.get<std::size_t>();
      } else if (key == "rank.margin_alpha") {
        train.ranking.margin_alpha = value.get<double>();
      } else if (key == "rank.negatives") {
        train.ranking.negatives = negatives_from_string(value.get<std::string>());
      } else if (key == "rank.sample_k") {
        train.ranking.sample_k = value.get<std::size_t>();
      } else if (key == "hybrid.lambda_rank") {
        train.hybrid.lambda_rank = value.get<double>();
      } else if (key == "hybrid.schedule") {
        train.hybrid.schedule = schedule_from_string(value.get<std::string>());
      } else if (key == "hybrid.ramp_epochs") {
        train.hybrid.ramp_epochs = value.get<std::size_t>();
      } else if (key == "split.train") {
        split.train = value.get<double>();
      } else if (key == "split.val") {
        split.val = value.get<double>();
      } else if (key == "split.test") {
        split.test = value.get<double>();
      } else if (key == "ablation.variants") {
        std::vector<AblationVariant> variants;
        for (const auto& name : value.get<std::vector<std::string>>()) {
          variants.push_back(ablation_variant_from_string(name));
        }
        ablation.variants = std::move(variants);
      } else if (key == "ablation.n_seeds") {
        ablation.n_seeds = value.get<std::size_t>();
      } else if (key == "gradcheck.n_seeds") {
        gradcheck.n_seeds = value.get<std::size_t>();
      } else if (key == "gradcheck.tolerance") {
        gradcheck.tolerance = value.get<double>();
      } else if (key == "gradcheck.step") {
        gradcheck.step = value.get<double>();
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

RunConfig RunConfig::from_json(const json& flat) {
  RunConfig config;
  config.apply(flat);
  return config;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json flat;
  try {
    in >> flat;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return from_json(flat);
}

json RunConfig::resolved() const {
  json variants = json::array();
  for (AblationVariant v : ablation.variants) variants.push_back(to_string(v));
  return json{
      {"seed", seed},
      {"data.n_concepts", data.n_concepts},
      {"data.n_question_types", data.n_question_types},
      {"data.n_answers", data.n_answers},
      {"data.regions", data.regions},
      {"data.noise_sigma", data.noise_sigma},
      {"data.d_visual", data.d_visual},
      {"data.d_text", data.d_text},
      {"data.n_samples", data.n_samples},
      {"model.fusion_mode", to_string(model.fusion_mode)},
      {"model.d_proj", model.d_proj},
      {"model.d_model", model.d_model},
      {"model.heads", model.heads},
      {"model.d_ff", model.d_ff},
      {"model.mlp_hidden", model.mlp_hidden},
      {"model.dropout_rate", model.dropout_rate},
      {"model.mean_pool", model.mean_pool},
      {"train.learning_rate", train.learning_rate},
      {"train.batch_size", train.batch_size},
      {"train.max_epochs", train.max_epochs},
      {"train.beta1", train.beta1},
      {"train.beta2", train.beta2},
      {"train.epsilon", train.epsilon},
      {"train.weight_decay", train.weight_decay},
      {"train.patience", train.patience},
      {"rank.margin_alpha", train.ranking.margin_alpha},
      {"rank.negatives", negatives_name(train.ranking.negatives)},
      {"rank.sample_k", train.ranking.sample_k},
      {"hybrid.lambda_rank", train.hybrid.lambda_rank},
      {"hybrid.schedule", schedule_name(train.hybrid.schedule)},
      {"hybrid.ramp_epochs", train.hybrid.ramp_epochs},
      {"split.train", split.train},
      {"split.val", split.val},
      {"split.test", split.test},
      {"ablation.variants", variants},
      {"ablation.n_seeds", ablation.n_seeds},
      {"gradcheck.n_seeds", gradcheck.n_seeds},
      {"gradcheck.tolerance", gradcheck.tolerance},
      {"gradcheck.step", gradcheck.step}};
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec spec = data;
  spec.seed = seed + 1;  // data stream
  return spec;
}

ModelConfig RunConfig::model_config(const DatasetMeta& meta) const {
  ModelConfig config;
  config.d_visual = meta.d_visual;
  config.d_text = meta.d_text;
  config.regions = meta.regions;
  config.n_answers = meta.n_answers;
  config.fusion_mode = model.fusion_mode;
  config.d_proj = model.d_proj;
  config.d_model = model.d_model;
  config.heads = model.heads;
  config.d_ff = model.d_ff;
  config.mlp_hidden = model.mlp_hidden;
  config.dropout_rate = model.dropout_rate;
  config.mean_pool = model.mean_pool;
  config.validate();
  return config;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig config = train;
  config.seed = seed;
  config.validate();
  return config;
}

}  // namespace rankvqa
