#include "rankvqa/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rankvqa/errors.hpp"

namespace rankvqa {

namespace {

using nlohmann::json;

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

// Sample standard deviation; 0 for a single run.
double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

// FNV-1a over the string plus a terminating NUL, so id boundaries hash.
std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  for (std::size_t i = 0; i <= s.size(); ++i) {
    h ^= i < s.size() ? static_cast<unsigned char>(s[i]) : 0u;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string split_checksum(const Splits& splits) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Dataset* split : {&splits.train, &splits.val, &splits.test}) {
    for (const Sample& s : split->samples) h = fnv1a(h, s.id);
    h = fnv1a(h, "|");
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string to_string(AblationVariant variant) {
  switch (variant) {
    case AblationVariant::kFull: return "full";
    case AblationVariant::kNoRanking: return "no_ranking";
    case AblationVariant::kNoFusion: return "no_fusion";
    case AblationVariant::kSingleHead: return "single_head";
    case AblationVariant::kBaseline: return "baseline";
  }
  throw ConfigError("unknown ablation variant");
}

AblationVariant ablation_variant_from_string(const std::string& name) {
  if (name == "full") return AblationVariant::kFull;
  if (name == "no_ranking") return AblationVariant::kNoRanking;
  if (name == "no_fusion") return AblationVariant::kNoFusion;
  if (name == "single_head") return AblationVariant::kSingleHead;
  if (name == "baseline") return AblationVariant::kBaseline;
  throw ConfigError("unknown ablation variant '" + name + "'");
}

std::vector<AblationVariant> all_ablation_variants() {
  return {AblationVariant::kFull, AblationVariant::kNoRanking,
          AblationVariant::kNoFusion, AblationVariant::kSingleHead,
          AblationVariant::kBaseline};
}

ModelConfig apply_variant(const ModelConfig& reference, AblationVariant variant) {
  ModelConfig config = reference;
  switch (variant) {
    case AblationVariant::kFull:
    case AblationVariant::kNoRanking:
      break;
    case AblationVariant::kNoFusion:
    case AblationVariant::kBaseline:
      config.fusion_mode = FusionMode::kConcatOnly;
      break;
    case AblationVariant::kSingleHead:
      config.heads = 1;
      break;
  }
  config.validate();
  return config;
}

HybridConfig apply_variant(const HybridConfig& reference, AblationVariant variant) {
  HybridConfig config = reference;
  if (variant == AblationVariant::kNoRanking ||
      variant == AblationVariant::kBaseline) {
    config.lambda_rank = 0.0;
  }
  return config;
}

bool AblationReport::all_pass() const {
  for (const auto& v : verdicts)
    if (!v.pass) return false;
  return true;
}

json AblationReport::to_json() const {
  json rows_json = json::array();
  for (const auto& row : rows) {
    json runs = json::array();
    for (const auto& run : row.runs) {
      runs.push_back(json{{"seed", run.seed},
                          {"best_epoch", run.best_epoch},
                          {"epochs_ran", run.epochs_ran},
                          {"val_accuracy", run.val_accuracy},
                          {"val_mrr", run.val_mrr},
                          {"test_accuracy", run.test_accuracy},
                          {"test_mrr", run.test_mrr}});
    }
    rows_json.push_back(json{{"variant", to_string(row.variant)},
                             {"test_accuracy_mean", row.test_accuracy_mean},
                             {"test_accuracy_std", row.test_accuracy_std},
                             {"test_mrr_mean", row.test_mrr_mean},
                             {"test_mrr_std", row.test_mrr_std},
                             {"val_accuracy_mean", row.val_accuracy_mean},
                             {"val_accuracy_std", row.val_accuracy_std},
                             {"val_mrr_mean", row.val_mrr_mean},
                             {"val_mrr_std", row.val_mrr_std},
                             {"runs", runs}});
  }
  json verdicts_json = json::array();
  for (const auto& v : verdicts) {
    verdicts_json.push_back(json{{"name", v.name},
                                 {"lhs", v.lhs},
                                 {"rhs", v.rhs},
                                 {"required_margin", v.required_margin},
                                 {"pass", v.pass}});
  }
  return json{{"note", note},
              {"split_checksum", split_checksum},
              {"seeds", seeds},
              {"rows", rows_json},
              {"verdicts", verdicts_json},
              {"all_pass", all_pass()}};
}

std::string AblationReport::to_table() const {
  std::string table;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %-19s %-19s\n", "variant",
                "test accuracy", "test MRR");
  table += line;
  table += std::string(52, '-') + "\n";
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-14s %.4f +/- %.4f  %.4f +/- %.4f\n",
                  to_string(row.variant).c_str(), row.test_accuracy_mean,
                  row.test_accuracy_std, row.test_mrr_mean, row.test_mrr_std);
    table += line;
  }
  table += "\n";
  for (const auto& v : verdicts) {
    std::snprintf(line, sizeof(line), "%-5s %-24s %.4f vs %.4f\n",
                  v.pass ? "PASS" : "FAIL", v.name.c_str(), v.lhs, v.rhs);
    table += line;
  }
  return table;
}

AblationReport run_ablation(const Dataset& dataset, const AblationSetup& setup,
                            const std::vector<AblationVariant>& variants) {
  if (variants.empty()) throw ContractError("run_ablation: no variants");
  if (setup.n_seeds == 0) throw ContractError("run_ablation: need at least one seed");
  setup.model.validate();
  setup.train.validate();

  // Identical splits for every variant and seed.
  const Splits splits = split_dataset(dataset, setup.split, setup.base_seed + 1);

  AblationReport report;
  report.note =
      "single_head realizes the attention ablation as one attention head; "
      "no_fusion and baseline bypass attention with projection concatenation";
  report.split_checksum = split_checksum(splits);
  for (std::size_t i = 0; i < setup.n_seeds; ++i) {
    // spaced so per-purpose derived streams of different runs never collide
    report.seeds.push_back(setup.base_seed + 1000 * (i + 1));
  }

  for (AblationVariant variant : variants) {
    AblationRow row;
    row.variant = variant;
    const ModelConfig model_config = apply_variant(setup.model, variant);
    const HybridConfig hybrid = apply_variant(setup.train.hybrid, variant);
    for (std::uint64_t seed : report.seeds) {
      TrainConfig train_config = setup.train;
      train_config.hybrid = hybrid;
      train_config.seed = seed;
      Rng init_rng(seed + 2);
      RankVqaModel model(model_config, init_rng);
      const FitResult fit_result = fit(model, splits.train, splits.val, train_config);
      const EvalReport test_report =
          evaluate_model(model, splits.test, train_config.batch_size);

      AblationRunResult run;
      run.seed = seed;
      run.best_epoch = fit_result.best_epoch;
      run.epochs_ran = fit_result.log.size();
      const EpochLog& best_log = fit_result.log.at(fit_result.best_epoch - 1);
      run.val_accuracy = best_log.val_accuracy;
      run.val_mrr = best_log.val_mrr;
      run.test_accuracy = test_report.accuracy;
      run.test_mrr = test_report.mrr;
      row.runs.push_back(run);
    }
    auto collect = [&](auto field) {
      std::vector<double> xs;
      for (const auto& run : row.runs) xs.push_back(run.*field);
      return xs;
    };
    const auto test_acc = collect(&AblationRunResult::test_accuracy);
    const auto test_mrr = collect(&AblationRunResult::test_mrr);
    const auto val_acc = collect(&AblationRunResult::val_accuracy);
    const auto val_mrr = collect(&AblationRunResult::val_mrr);
    row.test_accuracy_mean = mean_of(test_acc);
    row.test_accuracy_std = std_of(test_acc);
    row.test_mrr_mean = mean_of(test_mrr);
    row.test_mrr_std = std_of(test_mrr);
    row.val_accuracy_mean = mean_of(val_acc);
    row.val_accuracy_std = std_of(val_acc);
    row.val_mrr_mean = mean_of(val_mrr);
    row.val_mrr_std = std_of(val_mrr);
    report.rows.push_back(std::move(row));
  }

  // Ordering verdicts on mean test accuracy.
  auto find_row = [&](AblationVariant v) -> const AblationRow* {
    for (const auto& row : report.rows)
      if (row.variant == v) return &row;
    return nullptr;
  };
  const AblationRow* full = find_row(AblationVariant::kFull);
  const AblationRow* baseline = find_row(AblationVariant::kBaseline);
  for (const auto& row : report.rows) {
    if (row.variant == AblationVariant::kFull ||
        row.variant == AblationVariant::kBaseline) {
      continue;
    }
    if (full) {
      report.verdicts.push_back(
          {"full>=" + to_string(row.variant), full->test_accuracy_mean,
           row.test_accuracy_mean, 0.0,
           full->test_accuracy_mean >= row.test_accuracy_mean});
    }
    if (baseline) {
      report.verdicts.push_back(
          {to_string(row.variant) + ">=baseline", row.test_accuracy_mean,
           baseline->test_accuracy_mean, 0.0,
           row.test_accuracy_mean >= baseline->test_accuracy_mean});
    }
  }
  if (full && baseline) {
    const double margin = 0.03;
    report.verdicts.push_back(
        {"full>=baseline+0.03", full->test_accuracy_mean,
         baseline->test_accuracy_mean, margin,
         full->test_accuracy_mean >= baseline->test_accuracy_mean + margin});
  }
  return report;
}

// --- gradient checking ------------------------------------------------------

bool GradCheckReport::all_pass() const {
  for (const auto& c : configs)
    if (!c.pass) return false;
  return true;
}

json GradCheckReport::to_json() const {
  json configs_json = json::array();
  for (const auto& c : configs) {
    json layers = json::array();
    for (const auto& layer : c.layers) {
      layers.push_back(json{{"param", layer.param},
                            {"max_rel_err", layer.max_rel_err},
                            {"max_abs_analytic", layer.max_abs_analytic},
                            {"pass", layer.pass}});
    }
    configs_json.push_back(json{{"name", c.name},
                                {"config", c.config.to_json()},
                                {"worst", c.worst},
                                {"pass", c.pass},
                                {"layers", layers}});
  }
  return json{{"tolerance", tolerance},
              {"step", step},
              {"seeds", seeds},
              {"configs", configs_json},
              {"all_pass", all_pass()}};
}

namespace {

// Random batch with the widths the config expects; one in-memory dataset per
// (config, seed).
Dataset gradcheck_batch(const ModelConfig& config, std::size_t batch, Rng& rng) {
  Dataset ds;
  ds.meta.d_visual = config.d_visual;
  ds.meta.d_text = config.d_text;
  ds.meta.regions = config.regions;
  ds.meta.n_answers = config.n_answers;
  ds.meta.source = "gradcheck";
  for (std::size_t b = 0; b < batch; ++b) {
    Sample s;
    s.id = "g" + std::to_string(b);
    s.visual.resize(config.regions);
    for (auto& region : s.visual) {
      region.resize(config.d_visual);
      for (double& v : region) v = rng.normal();
    }
    s.text.resize(config.d_text);
    for (double& v : s.text) v = rng.normal();
    s.answer = static_cast<int>(rng.below(config.n_answers));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// Distance of the forward pass from the nearest non-differentiable point:
// the smallest |input| over every relu in the graph and the smallest
// |alpha - (s_pos - s_neg)| over every candidate hinge. Central differences
// straddling one of these kinks measure the wrong slope, so probe batches
// are resampled until the margin clears the step size comfortably.
double kink_margin(const Tensor& loss, const Tensor& logits,
                   const std::vector<int>& targets, double alpha) {
  double margin = std::numeric_limits<double>::infinity();
  for_each_node(loss, [&](const Tensor& node, const std::vector<Tensor>& parents) {
    if (node.op() == "relu" && !parents.empty()) {
      for (double v : parents[0].data()) margin = std::min(margin, std::abs(v));
    }
  });
  auto px = logits.data();
  const std::size_t n_answers = logits.cols();
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const double pos = px[b * n_answers + static_cast<std::size_t>(targets[b])];
    for (std::size_t j = 0; j < n_answers; ++j) {
      if (j == static_cast<std::size_t>(targets[b])) continue;
      margin = std::min(margin, std::abs(alpha - (pos - px[b * n_answers + j])));
    }
  }
  return margin;
}

}  // namespace

GradCheckReport run_gradcheck(
    const std::vector<std::pair<std::string, ModelConfig>>& configs,
    const std::vector<std::uint64_t>& seeds, const GradCheckOptions& opts) {
  if (configs.empty() || seeds.empty()) {
    throw ContractError("run_gradcheck: need at least one config and seed");
  }
  GradCheckReport report;
  report.tolerance = opts.tolerance;
  report.step = opts.step;
  report.seeds = seeds;

  constexpr int kMaxProbeAttempts = 64;
  const double required_margin = std::max(1e-3, 100.0 * opts.step);

  for (const auto& [name, config] : configs) {
    GradCheckConfigReport config_report;
    config_report.name = name;
    config_report.config = config;

    for (std::uint64_t seed : seeds) {
      Rng init_rng(seed + 2);
      const Rng negatives_base(seed + 5);
      RankVqaModel model(config, init_rng);

      Dataset batch;
      Rng dropout_base(seed + 3);
      double best_margin = -1.0;
      for (int attempt = 0; attempt < kMaxProbeAttempts; ++attempt) {
        Rng data_rng(seed + 1 + 7919ull * static_cast<std::uint64_t>(attempt));
        Dataset candidate = gradcheck_batch(config, opts.batch, data_rng);
        Rng dropout_candidate(seed + 3 + 7919ull * static_cast<std::uint64_t>(attempt));
        std::vector<std::size_t> probe_indices(candidate.size());
        for (std::size_t i = 0; i < probe_indices.size(); ++i) probe_indices[i] = i;
        std::vector<int> probe_targets;
        for (const auto& s : candidate.samples) probe_targets.push_back(s.answer);

        Rng dropout = dropout_candidate;
        Rng negatives = negatives_base;
        Tensor logits =
            model.forward_batch(candidate, probe_indices, Mode::kTraining, dropout);
        LossBreakdown lb = hybrid_loss(logits, probe_targets, opts.ranking,
                                       opts.hybrid, 0, negatives);
        const double margin =
            kink_margin(lb.total, logits, probe_targets, opts.ranking.margin_alpha);
        if (margin > best_margin) {
          best_margin = margin;
          batch = std::move(candidate);
          dropout_base = dropout_candidate;
        }
        if (best_margin >= required_margin) break;
      }

      std::vector<std::size_t> indices(batch.size());
      for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
      std::vector<int> targets;
      for (const auto& s : batch.samples) targets.push_back(s.answer);

      // The dropout and negative-sampling streams are replayed from the same
      // point for every evaluation, so the loss is a deterministic function
      // of the parameters.
      auto loss_breakdown = [&]() {
        Rng dropout = dropout_base;
        Rng negatives = negatives_base;
        Tensor logits =
            model.forward_batch(batch, indices, Mode::kTraining, dropout);
        return hybrid_loss(logits, targets, opts.ranking, opts.hybrid, 0,
                           negatives);
      };

      model.zero_grad();
      loss_breakdown().total.backward();

      auto params = model.parameters();
      if (config_report.layers.empty()) {
        config_report.layers.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
          config_report.layers[i].param = params[i].name;
        }
      }

      for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double> analytic(params[i].tensor.grad().begin(),
                                     params[i].tensor.grad().end());
        if (opts.tamper &&
            params[i].name.find(opts.tamper->param_substring) != std::string::npos) {
          for (double& g : analytic) g += opts.tamper->delta;
        }

        const std::vector<double> original(params[i].tensor.data().begin(),
                                           params[i].tensor.data().end());
        Tensor probe = Tensor::from_data(params[i].tensor.shape(), original);
        Tensor fd = finite_diff_grad(
            [&](const Tensor& candidate) {
              auto dst = params[i].tensor.mutable_data();
              auto src = candidate.data();
              std::copy(src.begin(), src.end(), dst.begin());
              return loss_breakdown().total_value;
            },
            probe, opts.step);
        {
          auto dst = params[i].tensor.mutable_data();
          std::copy(original.begin(), original.end(), dst.begin());
        }

        auto& layer = config_report.layers[i];
        layer.max_rel_err = std::max(layer.max_rel_err,
                                     max_relative_error(analytic, fd.data()));
        for (double g : analytic) {
          layer.max_abs_analytic = std::max(layer.max_abs_analytic, std::abs(g));
        }
      }
      model.zero_grad();
    }

    config_report.worst = 0.0;
    config_report.pass = true;
    for (auto& layer : config_report.layers) {
      layer.pass = layer.max_rel_err <= opts.tolerance;
      config_report.worst = std::max(config_report.worst, layer.max_rel_err);
      config_report.pass = config_report.pass && layer.pass;
    }
    report.configs.push_back(std::move(config_report));
  }
  return report;
}

ModelConfig tiny_reference_config(FusionMode mode) {
  ModelConfig config;
  config.d_visual = 6;
  config.d_text = 4;
  config.d_proj = 4;
  config.d_model = 8;
  config.heads = 2;
  config.d_ff = 0;  // = d_model
  config.mlp_hidden = {8, 4};
  config.n_answers = 3;
  config.regions = 2;
  config.dropout_rate = 0.5;
  config.fusion_mode = mode;
  config.validate();
  return config;
}

}  // namespace rankvqa
