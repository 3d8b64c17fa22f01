#include "rankvqa/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "rankvqa/errors.hpp"
#include "rankvqa/experiments.hpp"
#include "rankvqa/run_config.hpp"

namespace rankvqa {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> parts;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed while writing " + path.string());
}

void echo_config(const RunConfig& config, std::ostream& err) {
  err << "resolved config: " << config.resolved().dump() << "\n";
}

int cmd_generate(const RunConfig& config, const std::string& out_path,
                 std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  const SyntheticTask task = generate_synthetic(config.synthetic_spec());
  save_dataset(task.dataset, out_path);
  out << "wrote " << out_path << "\n";
  out << "meta: " << task.dataset.meta.to_json().dump() << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, const std::string& data_path,
              const std::string& out_dir, bool save_epoch_checkpoints,
              std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  const Dataset dataset = load_dataset(data_path);
  const Splits splits = split_dataset(dataset, config.split, config.seed + 1);
  out << "splits: train=" << splits.train.size() << " val=" << splits.val.size()
      << " test=" << splits.test.size() << "\n";

  Rng init_rng(config.seed + 2);
  RankVqaModel model(config.model_config(dataset.meta), init_rng);
  out << "model: " << model.count_params() << " parameters, fusion "
      << to_string(model.config().fusion_mode) << "\n";

  fs::create_directories(out_dir);
  write_text_file(fs::path(out_dir) / "config.json",
                  config.resolved().dump(2) + "\n");

  std::ofstream log_file(fs::path(out_dir) / "log.jsonl");
  if (!log_file) throw IoError("cannot open " + out_dir + "/log.jsonl");
  const auto on_epoch = [&](const EpochLog& log, const RankVqaModel& m) {
    log_file << log.to_json().dump() << "\n";
    log_file.flush();
    out << "epoch " << log.epoch << ": train_total=" << log.train_total
        << " val_total=" << log.val_total << " val_acc=" << log.val_accuracy
        << " val_mrr=" << log.val_mrr << "\n";
    if (save_epoch_checkpoints) {
      save_checkpoint(m, fs::path(out_dir) /
                             ("epoch_" + std::to_string(log.epoch) + ".ckpt"));
    }
  };

  const FitResult result =
      fit(model, splits.train, splits.val, config.train_config(), on_epoch);
  save_checkpoint(model, fs::path(out_dir) / "best.ckpt");
  out << "best epoch " << result.best_epoch << " (val_total="
      << result.best_val_loss << "), "
      << (result.stopped_early ? "stopped early" : "ran to max_epochs") << "\n";
  out << "wrote " << out_dir << "/best.ckpt\n";
  return 0;
}

int cmd_eval(const RunConfig& config, const std::string& ckpt_path,
             const std::string& data_path, const std::string& split_name,
             std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  RankVqaModel model = load_checkpoint(ckpt_path);
  const Dataset dataset = load_dataset(data_path);

  const auto& mc = model.config();
  const auto& meta = dataset.meta;
  if (mc.d_visual != meta.d_visual || mc.d_text != meta.d_text ||
      mc.n_answers != meta.n_answers ||
      (mc.fusion_mode == FusionMode::kTokenSequence && mc.regions != meta.regions)) {
    throw ConfigError("checkpoint expects widths " + std::to_string(mc.d_visual) +
                      "/" + std::to_string(mc.d_text) + "/" +
                      std::to_string(mc.n_answers) + " answers, dataset has " +
                      std::to_string(meta.d_visual) + "/" +
                      std::to_string(meta.d_text) + "/" +
                      std::to_string(meta.n_answers));
  }

  const Dataset* chosen = &dataset;
  Splits splits;
  if (split_name != "all") {
    splits = split_dataset(dataset, config.split, config.seed + 1);
    if (split_name == "train") {
      chosen = &splits.train;
    } else if (split_name == "val") {
      chosen = &splits.val;
    } else if (split_name == "test") {
      chosen = &splits.test;
    } else {
      throw ConfigError("unknown split '" + split_name +
                        "' (expected all|train|val|test)");
    }
  }

  EvalReport report = evaluate_model(model, *chosen, config.train.batch_size);
  report.config = json{{"checkpoint", ckpt_path},
                       {"dataset", data_path},
                       {"split", split_name},
                       {"run_config", config.resolved()}};
  out << report.to_json().dump() << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& config, const std::string& out_dir,
                  std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  const std::vector<std::pair<std::string, ModelConfig>> configs = {
      {"tiny_token_sequence", tiny_reference_config(FusionMode::kTokenSequence)},
      {"tiny_paper_literal", tiny_reference_config(FusionMode::kPaperLiteral)},
  };
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < config.gradcheck.n_seeds; ++i) {
    seeds.push_back(config.seed + 1000 * (i + 1));
  }
  GradCheckOptions opts;
  opts.step = config.gradcheck.step;
  opts.tolerance = config.gradcheck.tolerance;
  opts.ranking = config.train.ranking;
  opts.hybrid = config.train.hybrid;

  const GradCheckReport report = run_gradcheck(configs, seeds, opts);
  for (const auto& c : report.configs) {
    out << c.name << ": worst rel err " << c.worst << " over " << seeds.size()
        << " seeds -> " << (c.pass ? "PASS" : "FAIL") << "\n";
    for (const auto& layer : c.layers) {
      out << "  " << (layer.pass ? "PASS" : "FAIL") << " " << layer.param
          << " rel_err=" << layer.max_rel_err
          << " max_abs_grad=" << layer.max_abs_analytic << "\n";
    }
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "gradcheck.json",
                    report.to_json().dump(2) + "\n");
    out << "wrote " << out_dir << "/gradcheck.json\n";
  }
  return report.all_pass() ? 0 : 1;
}

int cmd_ablate(const RunConfig& config, const std::string& data_path,
               const std::string& out_dir, std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  const Dataset dataset = load_dataset(data_path);

  AblationSetup setup;
  setup.model = config.model_config(dataset.meta);
  setup.train = config.train_config();
  setup.split = config.split;
  setup.base_seed = config.seed;
  setup.n_seeds = config.ablation.n_seeds;

  const AblationReport report =
      run_ablation(dataset, setup, config.ablation.variants);
  out << report.note << "\n";
  out << "split checksum " << report.split_checksum << "\n\n";
  out << report.to_table();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "ablation.json",
                    report.to_json().dump(2) + "\n");
    write_text_file(fs::path(out_dir) / "ablation.txt", report.to_table());
    out << "wrote " << out_dir << "/ablation.json\n";
  }
  return report.all_pass() ? 0 : 1;
}

}  // namespace

int cli_main(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"desk-scale multimodal answer-ranking trainer"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;

  // shared state filled by subcommand flags
  std::string out_path, data_path, ckpt_path, split_name = "all", variants_csv;
  std::size_t n_samples = 0, max_epochs = 0, batch_size = 0, patience = 0, n_seeds = 0;
  double sigma = 0.0, lambda_rank = 0.0, margin_alpha = 0.0, learning_rate = 0.0,
         tolerance = 0.0;
  bool save_epoch_checkpoints = false;

  auto add_shared = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file of flat keys");
    cmd->add_option("--seed", seed, "top-level seed")->each([&](const std::string&) {
      seed_given = true;
    });
  };

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_shared(generate);
  generate->add_option("--out", out_path, "output .jsonl path")->required();
  auto* opt_n_samples = generate->add_option("--n-samples", n_samples);
  auto* opt_sigma = generate->add_option("--sigma", sigma, "feature noise sigma");

  CLI::App* train = app.add_subcommand("train", "train on a dataset file");
  add_shared(train);
  train->add_option("--data", data_path, "dataset .jsonl path")->required();
  train->add_option("--out", out_path, "output directory")->required();
  auto* opt_max_epochs = train->add_option("--max-epochs", max_epochs);
  auto* opt_lambda = train->add_option("--lambda-rank", lambda_rank);
  auto* opt_margin = train->add_option("--margin-alpha", margin_alpha);
  auto* opt_lr = train->add_option("--learning-rate", learning_rate);
  auto* opt_batch = train->add_option("--batch-size", batch_size);
  auto* opt_patience = train->add_option("--patience", patience);
  train->add_flag("--save-epoch-checkpoints", save_epoch_checkpoints,
                  "write epoch_<n>.ckpt files");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_shared(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval_cmd->add_option("--data", data_path, "dataset .jsonl path")->required();
  eval_cmd->add_option("--split", split_name, "all|train|val|test");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit");
  add_shared(gradcheck);
  gradcheck->add_option("--out", out_path, "report directory (optional)");
  auto* opt_gc_seeds = gradcheck->add_option("--seeds", n_seeds, "number of seeds");
  auto* opt_tolerance = gradcheck->add_option("--tolerance", tolerance);

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation grid");
  add_shared(ablate);
  ablate->add_option("--data", data_path, "dataset .jsonl path")->required();
  ablate->add_option("--out", out_path, "report directory (optional)");
  ablate->add_option("--variants", variants_csv, "comma-separated variant names");
  auto* opt_ab_seeds = ablate->add_option("--seeds", n_seeds, "number of seeds");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    RunConfig config;
    if (!config_path.empty()) config = RunConfig::from_file(config_path);
    if (seed_given) config.seed = seed;

    if (generate->parsed()) {
      if (opt_n_samples->count()) config.data.n_samples = n_samples;
      if (opt_sigma->count()) config.data.noise_sigma = sigma;
      return cmd_generate(config, out_path, out, err);
    }
    if (train->parsed()) {
      if (opt_max_epochs->count()) config.train.max_epochs = max_epochs;
      if (opt_lambda->count()) config.train.hybrid.lambda_rank = lambda_rank;
      if (opt_margin->count()) config.train.ranking.margin_alpha = margin_alpha;
      if (opt_lr->count()) config.train.learning_rate = learning_rate;
      if (opt_batch->count()) config.train.batch_size = batch_size;
      if (opt_patience->count()) config.train.patience = patience;
      return cmd_train(config, data_path, out_path, save_epoch_checkpoints, out, err);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(config, ckpt_path, data_path, split_name, out, err);
    }
    if (gradcheck->parsed()) {
      if (opt_gc_seeds->count()) config.gradcheck.n_seeds = n_seeds;
      if (opt_tolerance->count()) config.gradcheck.tolerance = tolerance;
      return cmd_gradcheck(config, out_path, out, err);
    }
    if (ablate->parsed()) {
      if (opt_ab_seeds->count()) config.ablation.n_seeds = n_seeds;
      if (!variants_csv.empty()) {
        std::vector<AblationVariant> variants;
        for (const auto& name : split_csv(variants_csv)) {
          variants.push_back(ablation_variant_from_string(name));
        }
        config.ablation.variants = std::move(variants);
      }
      return cmd_ablate(config, data_path, out_path, out, err);
    }
    err << "error: no command given\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace rankvqa
