#include "rankvqa/experiments.hpp"

#include <algorithm>

#include "doctest.h"

using namespace rankvqa;

namespace {

std::vector<std::pair<std::string, ModelConfig>> tiny_configs() {
  return {{"token_sequence", tiny_reference_config(FusionMode::kTokenSequence)}};
}

}  // namespace

TEST_CASE("variant transforms match their definitions") {
  const ModelConfig reference = tiny_reference_config(FusionMode::kTokenSequence);
  HybridConfig hybrid;
  hybrid.lambda_rank = 1.0;

  CHECK(apply_variant(reference, AblationVariant::kFull).fusion_mode ==
        FusionMode::kTokenSequence);
  CHECK(apply_variant(hybrid, AblationVariant::kFull).lambda_rank == 1.0);

  CHECK(apply_variant(hybrid, AblationVariant::kNoRanking).lambda_rank == 0.0);
  CHECK(apply_variant(reference, AblationVariant::kNoRanking).fusion_mode ==
        FusionMode::kTokenSequence);

  CHECK(apply_variant(reference, AblationVariant::kNoFusion).fusion_mode ==
        FusionMode::kConcatOnly);
  CHECK(apply_variant(hybrid, AblationVariant::kNoFusion).lambda_rank == 1.0);

  CHECK(apply_variant(reference, AblationVariant::kSingleHead).heads == 1);

  const ModelConfig baseline = apply_variant(reference, AblationVariant::kBaseline);
  CHECK(baseline.fusion_mode == FusionMode::kConcatOnly);
  CHECK(apply_variant(hybrid, AblationVariant::kBaseline).lambda_rank == 0.0);
}

TEST_CASE("variant names round-trip and reject garbage") {
  for (AblationVariant v : all_ablation_variants()) {
    CHECK(ablation_variant_from_string(to_string(v)) == v);
  }
  CHECK_THROWS_AS(ablation_variant_from_string("attention_only"), ConfigError);
}

TEST_CASE("gradcheck passes on the tiny reference configs") {
  const std::vector<std::uint64_t> seeds{201, 202, 203};
  const GradCheckReport report = run_gradcheck(
      {{"token_sequence", tiny_reference_config(FusionMode::kTokenSequence)},
       {"paper_literal", tiny_reference_config(FusionMode::kPaperLiteral)}},
      seeds);
  CHECK(report.all_pass());
  for (const auto& config_report : report.configs) {
    CHECK(config_report.worst <= 1e-4);
    for (const auto& layer : config_report.layers) CHECK(layer.pass);
  }
}

TEST_CASE("gradcheck counts one entry per parameter") {
  const GradCheckReport report = run_gradcheck(tiny_configs(), {204});
  REQUIRE(report.configs.size() == 1);
  Rng init(205);
  RankVqaModel model(tiny_reference_config(FusionMode::kTokenSequence), init);
  CHECK(report.configs[0].layers.size() == model.parameters().size());
}

TEST_CASE("every token_sequence parameter participates in the loss gradient") {
  const GradCheckReport report = run_gradcheck(tiny_configs(), {211, 212, 213});
  for (const auto& layer : report.configs[0].layers) {
    INFO("layer ", layer.param);
    CHECK(layer.max_abs_analytic > 0.0);
  }
}

TEST_CASE("a corrupted backward rule is flagged on exactly that layer") {
  GradCheckOptions opts;
  opts.tamper = GradCheckOptions::Tamper{"ffn.w1", 0.05};
  const GradCheckReport report = run_gradcheck(tiny_configs(), {206}, opts);
  CHECK_FALSE(report.all_pass());
  for (const auto& layer : report.configs[0].layers) {
    const bool tampered = layer.param.find("ffn.w1") != std::string::npos;
    CHECK(layer.pass == !tampered);
  }
}

TEST_CASE("paper_literal gradcheck reports identically zero query/key gradients") {
  const GradCheckReport report = run_gradcheck(
      {{"paper_literal", tiny_reference_config(FusionMode::kPaperLiteral)}},
      {207, 208});
  REQUIRE(report.configs.size() == 1);
  bool saw_q = false, saw_k = false;
  for (const auto& layer : report.configs[0].layers) {
    if (layer.param.find("fusion.w_q") != std::string::npos) {
      saw_q = true;
      CHECK(layer.max_abs_analytic == 0.0);
      CHECK(layer.pass);
    }
    if (layer.param.find("fusion.w_k") != std::string::npos) {
      saw_k = true;
      CHECK(layer.max_abs_analytic == 0.0);
    }
  }
  CHECK(saw_q);
  CHECK(saw_k);
}

TEST_CASE("ablation over two variants yields two rows and one verdict") {
  SyntheticSpec spec;
  spec.n_concepts = 3;
  spec.n_question_types = 3;
  spec.n_answers = 4;
  spec.regions = 2;
  spec.noise_sigma = 0.1;
  spec.d_visual = 6;
  spec.d_text = 4;
  spec.n_samples = 60;
  spec.seed = 209;
  const Dataset dataset = generate_synthetic(spec).dataset;

  AblationSetup setup;
  setup.model = tiny_reference_config(FusionMode::kTokenSequence);
  setup.model.n_answers = 4;
  setup.train.batch_size = 16;
  setup.train.max_epochs = 2;
  setup.split = {0.7, 0.15, 0.15};
  setup.base_seed = 210;
  setup.n_seeds = 1;

  const AblationReport report = run_ablation(
      dataset, setup, {AblationVariant::kFull, AblationVariant::kBaseline});
  CHECK(report.rows.size() == 2);
  CHECK(report.verdicts.size() == 1);
  CHECK(report.verdicts[0].name == "full>=baseline+0.03");
  CHECK(report.seeds.size() == 1);
  CHECK(report.rows[0].runs.size() == 1);
  CHECK_FALSE(report.split_checksum.empty());

  // the report is a pure function of its inputs
  const AblationReport again = run_ablation(
      dataset, setup, {AblationVariant::kFull, AblationVariant::kBaseline});
  CHECK(report.to_json() == again.to_json());

  // and the table mentions every variant
  const std::string table = report.to_table();
  CHECK(table.find("full") != std::string::npos);
  CHECK(table.find("baseline") != std::string::npos);
}

TEST_CASE("ablation report json carries rows, verdicts, and the checksum") {
  AblationReport report;
  report.note = "n";
  report.split_checksum = "abc";
  report.seeds = {1, 2};
  AblationRow row;
  row.variant = AblationVariant::kFull;
  row.test_accuracy_mean = 0.9;
  report.rows.push_back(row);
  report.verdicts.push_back({"full>=baseline+0.03", 0.9, 0.5, 0.03, true});
  const auto j = report.to_json();
  CHECK(j["split_checksum"] == "abc");
  CHECK(j["rows"][0]["variant"] == "full");
  CHECK(j["verdicts"][0]["pass"] == true);
  CHECK(j["all_pass"] == true);
  CHECK(report.all_pass());

  report.verdicts.push_back({"full>=single_head", 0.8, 0.9, 0.0, false});
  CHECK_FALSE(report.all_pass());
}
