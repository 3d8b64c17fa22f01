#include "rankvqa/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "rankvqa/errors.hpp"

namespace rankvqa {

namespace {

using nlohmann::json;

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line,
                             const std::string& message) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + message);
}

void check_finite(const std::vector<double>& values,
                  const std::filesystem::path& path, std::size_t line) {
  for (double v : values) {
    if (!std::isfinite(v)) parse_fail(path, line, "non-finite feature value");
  }
}

double squared_distance(const std::vector<double>& a,
                        const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// Draws `count` vectors of N(0, scale^2) entries with pairwise distance at
// least min_dist, redrawing an offending vector up to a bounded number of
// times.
std::vector<std::vector<double>> draw_prototypes(std::size_t count,
                                                 std::size_t dim, double scale,
                                                 double min_dist, Rng& rng) {
  constexpr int kMaxRetries = 200;
  std::vector<std::vector<double>> prototypes;
  prototypes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      std::vector<double> candidate(dim);
      for (double& v : candidate) v = scale * rng.normal();
      placed = true;
      for (const auto& other : prototypes) {
        if (squared_distance(candidate, other) < min_dist * min_dist) {
          placed = false;
          break;
        }
      }
      if (placed) prototypes.push_back(std::move(candidate));
    }
    if (!placed) {
      throw GenerationError(
          "could not separate " + std::to_string(count) + " prototypes of width " +
          std::to_string(dim) + " by " + std::to_string(min_dist));
    }
  }
  return prototypes;
}

// Random surjection C x T -> [0, A) with no constant row or column, so the
// answer is never a function of the concept or the question type alone.
std::vector<std::vector<int>> draw_answer_table(std::size_t c_count,
                                                std::size_t t_count,
                                                std::size_t n_answers,
                                                Rng& rng) {
  constexpr int kMaxRetries = 1000;
  const std::size_t cells = c_count * t_count;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<std::size_t> order(cells);
    for (std::size_t i = 0; i < cells; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<int> flat(cells);
    for (std::size_t i = 0; i < cells; ++i) {
      flat[order[i]] = i < n_answers ? static_cast<int>(i)
                                     : static_cast<int>(rng.below(n_answers));
    }
    bool degenerate = false;
    for (std::size_t c = 0; c < c_count && !degenerate; ++c) {
      bool constant = true;
      for (std::size_t t = 1; t < t_count; ++t)
        constant = constant && flat[c * t_count + t] == flat[c * t_count];
      degenerate = constant;
    }
    for (std::size_t t = 0; t < t_count && !degenerate; ++t) {
      bool constant = true;
      for (std::size_t c = 1; c < c_count; ++c)
        constant = constant && flat[c * t_count + t] == flat[t];
      degenerate = constant;
    }
    if (degenerate) continue;
    std::vector<std::vector<int>> table(c_count, std::vector<int>(t_count));
    for (std::size_t c = 0; c < c_count; ++c)
      for (std::size_t t = 0; t < t_count; ++t) table[c][t] = flat[c * t_count + t];
    return table;
  }
  throw GenerationError("could not draw a cross-modal answer table for C=" +
                        std::to_string(c_count) + " T=" + std::to_string(t_count) +
                        " A=" + std::to_string(n_answers));
}

}  // namespace

json DatasetMeta::to_json() const {
  json j{{"d_visual", d_visual},
         {"d_text", d_text},
         {"regions", regions},
         {"n_answers", n_answers},
         {"source", source}};
  if (!generator.is_null()) j["generator"] = generator;
  return j;
}

json SyntheticSpec::to_json() const {
  return json{{"n_concepts", n_concepts},
              {"n_question_types", n_question_types},
              {"n_answers", n_answers},
              {"regions", regions},
              {"noise_sigma", noise_sigma},
              {"d_visual", d_visual},
              {"d_text", d_text},
              {"n_samples", n_samples},
              {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  SyntheticSpec spec;
  spec.n_concepts = j.at("n_concepts").get<std::size_t>();
  spec.n_question_types = j.at("n_question_types").get<std::size_t>();
  spec.n_answers = j.at("n_answers").get<std::size_t>();
  spec.regions = j.at("regions").get<std::size_t>();
  spec.noise_sigma = j.at("noise_sigma").get<double>();
  spec.d_visual = j.at("d_visual").get<std::size_t>();
  spec.d_text = j.at("d_text").get<std::size_t>();
  spec.n_samples = j.at("n_samples").get<std::size_t>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

SyntheticTask generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_answers < 2 ||
      spec.n_concepts * spec.n_question_types < spec.n_answers) {
    throw ContractError("generate_synthetic: need n_concepts*n_question_types >= n_answers >= 2");
  }
  if (spec.n_concepts < 2 || spec.n_question_types < 2) {
    throw GenerationError(
        "generate_synthetic: a cross-modal answer table needs n_concepts >= 2 "
        "and n_question_types >= 2");
  }
  if (spec.noise_sigma < 0.0) {
    throw ContractError("generate_synthetic: noise_sigma must be >= 0");
  }
  if (spec.regions == 0 || spec.d_visual == 0 || spec.d_text == 0 ||
      spec.n_samples == 0) {
    throw ContractError("generate_synthetic: zero-sized spec field");
  }

  Rng rng(spec.seed);
  // Separation floor keeps sigma=0 prototypes decodable as well.
  const double min_dist = std::max(4.0 * spec.noise_sigma, 1e-6);

  // Concept prototypes sit well below the unit-normal distractor regions:
  // averaging over regions buries most of the concept signal, while a
  // per-region nearest-prototype decode stays nearly exact. Type prototypes
  // face no distractors and keep unit scale.
  const double concept_scale = 0.75;

  SyntheticTask task;
  task.concept_prototypes =
      draw_prototypes(spec.n_concepts, spec.d_visual, concept_scale, min_dist, rng);
  task.type_prototypes =
      draw_prototypes(spec.n_question_types, spec.d_text, 1.0, min_dist, rng);
  task.answer_table = draw_answer_table(spec.n_concepts, spec.n_question_types,
                                        spec.n_answers, rng);

  Dataset& dataset = task.dataset;
  dataset.meta.d_visual = spec.d_visual;
  dataset.meta.d_text = spec.d_text;
  dataset.meta.regions = spec.regions;
  dataset.meta.n_answers = spec.n_answers;
  dataset.meta.source = "synthetic";
  dataset.meta.generator = spec.to_json();
  dataset.samples.reserve(spec.n_samples);

  char id_buf[32];
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::size_t c = rng.below(spec.n_concepts);
    const std::size_t t = rng.below(spec.n_question_types);
    const std::size_t signal_region = rng.below(spec.regions);

    Sample sample;
    std::snprintf(id_buf, sizeof(id_buf), "s%06zu", i);
    sample.id = id_buf;
    sample.visual.resize(spec.regions);
    for (std::size_t r = 0; r < spec.regions; ++r) {
      sample.visual[r].resize(spec.d_visual);
      for (std::size_t d = 0; d < spec.d_visual; ++d) {
        sample.visual[r][d] =
            r == signal_region
                ? task.concept_prototypes[c][d] + spec.noise_sigma * rng.normal()
                : rng.normal();
      }
    }
    sample.text.resize(spec.d_text);
    for (std::size_t d = 0; d < spec.d_text; ++d) {
      sample.text[d] = task.type_prototypes[t][d] + spec.noise_sigma * rng.normal();
    }
    sample.answer = task.answer_table[c][t];
    dataset.samples.push_back(std::move(sample));
  }
  return task;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << dataset.meta.to_json().dump() << "\n";
  for (const Sample& s : dataset.samples) {
    json j{{"id", s.id}, {"visual", s.visual}, {"text", s.text}, {"answer", s.answer}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed while writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");

  Dataset dataset;
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) parse_fail(path, 1, "missing meta line");
  ++line_no;
  json meta_json;
  try {
    meta_json = json::parse(line);
  } catch (const json::exception& e) {
    parse_fail(path, line_no, std::string("bad meta JSON: ") + e.what());
  }
  try {
    dataset.meta.d_visual = meta_json.at("d_visual").get<std::size_t>();
    dataset.meta.d_text = meta_json.at("d_text").get<std::size_t>();
    dataset.meta.regions = meta_json.at("regions").get<std::size_t>();
    dataset.meta.n_answers = meta_json.at("n_answers").get<std::size_t>();
    dataset.meta.source = meta_json.value("source", std::string());
    if (meta_json.contains("generator")) dataset.meta.generator = meta_json["generator"];
  } catch (const json::exception& e) {
    parse_fail(path, line_no, std::string("bad meta fields: ") + e.what());
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) parse_fail(path, line_no, "empty line");
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      parse_fail(path, line_no, std::string("bad sample JSON: ") + e.what());
    }
    Sample s;
    try {
      s.id = j.at("id").get<std::string>();
      s.visual = j.at("visual").get<std::vector<std::vector<double>>>();
      s.text = j.at("text").get<std::vector<double>>();
      s.answer = j.at("answer").get<int>();
    } catch (const json::exception& e) {
      parse_fail(path, line_no, std::string("bad sample fields: ") + e.what());
    }
    if (s.visual.size() != dataset.meta.regions) {
      parse_fail(path, line_no,
                 "expected " + std::to_string(dataset.meta.regions) +
                     " regions, got " + std::to_string(s.visual.size()));
    }
    for (const auto& region : s.visual) {
      if (region.size() != dataset.meta.d_visual) {
        parse_fail(path, line_no,
                   "expected visual width " + std::to_string(dataset.meta.d_visual) +
                       ", got " + std::to_string(region.size()));
      }
      check_finite(region, path, line_no);
    }
    if (s.text.size() != dataset.meta.d_text) {
      parse_fail(path, line_no,
                 "expected text width " + std::to_string(dataset.meta.d_text) +
                     ", got " + std::to_string(s.text.size()));
    }
    check_finite(s.text, path, line_no);
    if (s.answer < 0 || static_cast<std::size_t>(s.answer) >= dataset.meta.n_answers) {
      parse_fail(path, line_no, "answer " + std::to_string(s.answer) +
                                    " out of range [0, " +
                                    std::to_string(dataset.meta.n_answers) + ")");
    }
    dataset.samples.push_back(std::move(s));
  }

  // When the meta records how many samples were generated, hold the file to it.
  if (dataset.meta.generator.is_object() &&
      dataset.meta.generator.contains("n_samples")) {
    const auto expected = dataset.meta.generator["n_samples"].get<std::size_t>();
    if (dataset.samples.size() != expected) {
      parse_fail(path, line_no + 1,
                 "expected " + std::to_string(expected) + " samples, found " +
                     std::to_string(dataset.samples.size()));
    }
  }
  return dataset;
}

Splits split_dataset(const Dataset& dataset, const SplitFractions& fractions,
                     std::uint64_t seed) {
  if (fractions.train <= 0.0 || fractions.val <= 0.0 || fractions.test <= 0.0) {
    throw ContractError("split: fractions must be positive");
  }
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    throw ContractError("split: fractions must sum to 1");
  }
  const std::size_t n = dataset.size();
  const std::size_t n_val = static_cast<std::size_t>(fractions.val * static_cast<double>(n));
  const std::size_t n_test = static_cast<std::size_t>(fractions.test * static_cast<double>(n));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw ContractError("split: a split would be empty for n=" + std::to_string(n));
  }
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  Splits splits;
  splits.train.meta = splits.val.meta = splits.test.meta = dataset.meta;
  auto take = [&](Dataset& out, std::size_t begin, std::size_t count) {
    out.samples.reserve(count);
    for (std::size_t i = begin; i < begin + count; ++i)
      out.samples.push_back(dataset.samples[order[i]]);
  };
  take(splits.train, 0, n_train);
  take(splits.val, n_train, n_val);
  take(splits.test, n_train + n_val, n_test);
  return splits;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                    std::size_t batch_size,
                                                    Rng* shuffle_rng) {
  if (batch_size == 0) throw ContractError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle_rng) shuffle_rng->shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + count));
  }
  return batches;
}

}  // namespace rankvqa
