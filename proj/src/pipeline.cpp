#include "cfviz/pipeline.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "cfviz/errors.hpp"
#include "cfviz/log.hpp"
#include "cfviz/rng.hpp"
#include "cfviz/textio.hpp"

namespace cfviz {

namespace fs = std::filesystem;

std::uint64_t stage_seed(std::uint64_t master_seed, std::string_view stage) {
  return mix_seed(master_seed, stage);
}

TrainConfig PipelineConfig::train_config(std::uint64_t derived_seed) const {
  TrainConfig cfg;
  cfg.learning_rate = learning_rate;
  cfg.momentum = momentum;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.l2 = l2;
  cfg.seed = derived_seed;
  return cfg;
}

void PipelineConfig::validate() const {
  if (n_per_group < 1) throw ValidationError("config: n_per_group must be >= 1");
  if (epochs < 0) throw ValidationError("config: epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("config: learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("config: alpha must be in (0,1)");
  if (confounders.empty()) throw ValidationError("config: need at least one confounder column");
  if (out_dir.empty()) throw ValidationError("config: out_dir must be set");
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  PipelineConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "seed")
        cfg.seed = value.get<std::uint64_t>();
      else if (key == "n_per_group")
        cfg.n_per_group = value.get<int>();
      else if (key == "epochs")
        cfg.epochs = value.get<int>();
      else if (key == "learning_rate")
        cfg.learning_rate = value.get<double>();
      else if (key == "momentum")
        cfg.momentum = value.get<double>();
      else if (key == "batch_size")
        cfg.batch_size = value.get<int>();
      else if (key == "l2")
        cfg.l2 = value.get<double>();
      else if (key == "alpha")
        cfg.alpha = value.get<double>();
      else if (key == "bonferroni")
        cfg.bonferroni = value.get<bool>();
      else if (key == "confounders")
        cfg.confounders = value.get<std::vector<std::string>>();
      else if (key == "out_dir")
        cfg.out_dir = value.get<std::string>();
      else if (key == "per_subject_maps")
        cfg.per_subject_maps = value.get<bool>();
      else if (key == "per_group_maps")
        cfg.per_group_maps = value.get<bool>();
      else if (key == "gate")
        cfg.gate = value.get<bool>();
      else
        throw FormatError(path.string() + ": unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": invalid value: " + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

nlohmann::json ratio_to_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

double ratio_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw FormatError("run report: unexpected ratio string '" + j.get<std::string>() + "'");
  }
  return j.get<double>();
}

}  // namespace

void write_run_report(const RunReport& report, const fs::path& path) {
  nlohmann::json j;
  j["training_accuracy"] = report.training_accuracy;
  j["epoch_loss"] = report.epoch_loss;
  j["feature_dim"] = report.feature_dim;
  j["confounded_count"] = report.confounded_count;
  j["block_means_full"] = report.block_means_full;
  j["block_means_partial"] = report.block_means_partial;
  j["ratios"] = {{"bc_attenuation", ratio_to_json(report.bc_attenuation)},
                 {"ad_retention", ratio_to_json(report.ad_retention)},
                 {"confounded_fraction", report.confounded_fraction}};
  j["artifacts"] = report.artifacts;
  write_text_file(path, j.dump(2) + "\n");
}

RunReport read_run_report(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  RunReport report;
  try {
    report.training_accuracy = j.at("training_accuracy").get<double>();
    report.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    report.feature_dim = j.at("feature_dim").get<int>();
    report.confounded_count = j.at("confounded_count").get<int>();
    report.block_means_full = j.at("block_means_full").get<std::map<std::string, double>>();
    report.block_means_partial = j.at("block_means_partial").get<std::map<std::string, double>>();
    report.bc_attenuation = ratio_from_json(j.at("ratios").at("bc_attenuation"));
    report.ad_retention = ratio_from_json(j.at("ratios").at("ad_retention"));
    report.confounded_fraction = j.at("ratios").at("confounded_fraction").get<double>();
    report.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": missing or invalid field: " + e.what());
  }
  return report;
}

SynthResult cmd_synth(int n_per_group, std::uint64_t seed, const fs::path& out_dir) {
  if (n_per_group < 1) throw ValidationError("synth: n_per_group must be >= 1");
  const Dataset data = generate_dataset(n_per_group, stage_seed(seed, "synth"));
  save_dataset(data, out_dir);
  log_info("synth: wrote " + std::to_string(data.records.size()) + " records to " + out_dir.string());
  return SynthResult{out_dir, static_cast<int>(data.records.size())};
}

TrainCmdResult cmd_train(const fs::path& data_dir, const fs::path& out_model, const TrainParams& params) {
  const Dataset data = load_dataset(data_dir);
  const std::uint64_t seed = stage_seed(params.seed, "train");

  Model model = build_synthetic_model(seed);
  TrainConfig cfg;
  cfg.learning_rate = params.learning_rate;
  cfg.momentum = params.momentum;
  cfg.epochs = params.epochs;
  cfg.batch_size = params.batch_size;
  cfg.l2 = params.l2;
  cfg.seed = seed;

  TrainCmdResult res;
  res.epoch_loss = train(model, data, cfg);
  res.accuracy = training_accuracy(model, data);
  res.model_path = out_model;
  save_model(model, out_model);

  std::string csv = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
    csv += std::to_string(e) + "," + format_double(res.epoch_loss[e]) + "\n";
  }
  res.loss_history_path = out_model.parent_path().empty()
                              ? fs::path("loss_history.csv")
                              : out_model.parent_path() / "loss_history.csv";
  write_text_file(res.loss_history_path, csv);

  log_info("train: accuracy " + format_double(res.accuracy) + " after " +
           std::to_string(params.epochs) + " epochs");
  if (params.gate && res.accuracy < 0.95) {
    throw TrainingError("training accuracy " + format_double(res.accuracy) +
                        " is below the 0.95 gate (use --no-gate to keep the model)");
  }
  return res;
}

namespace {

struct ExtractedFeatures {
  FeatureMatrix features;
  std::vector<double> scores;
  std::vector<std::vector<double>> confounders;  // K columns
};

ExtractedFeatures extract_features(const Model& model, const Dataset& data,
                                   const std::vector<std::string>& confounder_names) {
  ExtractedFeatures ex;
  const std::size_t n = data.records.size();
  const std::size_t m = static_cast<std::size_t>(model.spec.feature_dim());
  ex.features.rows = n;
  ex.features.cols = m;
  ex.features.values.resize(n * m);
  ex.features.model_id = "seed-" + std::to_string(model.seed);
  ex.scores.resize(n);
  ex.confounders.assign(confounder_names.size(), std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const ForwardResult fr = forward(model, data.records[i].image);
    for (std::size_t j = 0; j < m; ++j) ex.features.at(i, j) = fr.features[j];
    ex.scores[i] = fr.score;
    for (std::size_t k = 0; k < confounder_names.size(); ++k) {
      ex.confounders[k][i] = sigma_of(data.records[i], confounder_names[k]);
    }
  }
  return ex;
}

void check_confounder_columns(const std::vector<std::string>& names) {
  for (const std::string& name : names) {
    bool known = false;
    for (const char* block : kBlockNames) {
      if (name == std::string("sigma_") + block) known = true;
    }
    if (!known) {
      throw ValidationError("unknown confounder column '" + name +
                            "' (dataset has sigma_A, sigma_B, sigma_C, sigma_D)");
    }
  }
}

}  // namespace

ConfoundCmdResult cmd_confound_test(const fs::path& data_dir, const fs::path& model_path,
                                    const std::vector<std::string>& confounder_names, double alpha,
                                    bool bonferroni, const fs::path& out_dir) {
  if (confounder_names.empty()) throw ValidationError("confound-test: need at least one confounder");
  const Dataset data = load_dataset(data_dir);
  check_confounder_columns(confounder_names);
  const Model model = load_model(model_path);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw FormatError("cannot create " + out_dir.string() + ": " + ec.message());

  const ExtractedFeatures ex = extract_features(model, data, confounder_names);

  ConfoundCmdResult res;
  res.report = build_confound_mask(ex.features, ex.scores, ex.confounders, alpha, bonferroni,
                                   confounder_names);
  res.features_path = out_dir / "features.csv";
  res.report_path = out_dir / "glm_report.json";
  write_feature_matrix_csv(ex.features, res.features_path);
  write_glm_report(res.report, res.report_path);
  log_info("confound-test: " + std::to_string(res.report.mask.confounded_count()) + " of " +
           std::to_string(res.report.m) + " features confounded at alpha " + format_double(alpha));
  return res;
}

namespace {

ConfoundMask resolve_mask(const std::string& source, int feature_dim) {
  ConfoundMask mask;
  const bool inline_bits = !source.empty() &&
                           source.find_first_not_of("01") == std::string::npos;
  if (inline_bits) {
    mask.bits = ConfoundMask::parse_bits(source);
  } else {
    const ConfoundReport report = read_glm_report(source);
    mask = report.mask;
  }
  if (mask.bits.size() != static_cast<std::size_t>(feature_dim)) {
    throw ValidationError("mask length " + std::to_string(mask.bits.size()) +
                          " does not match the model's feature dimension " +
                          std::to_string(feature_dim));
  }
  return mask;
}

}  // namespace

SaliencyCmdResult cmd_saliency(const fs::path& data_dir, const fs::path& model_path,
                               const std::optional<std::string>& mask_source, const fs::path& out_dir,
                               bool per_subject, bool per_group) {
  const Dataset data = load_dataset(data_dir);
  const Model model = load_model(model_path);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw FormatError("cannot create " + out_dir.string() + ": " + ec.message());

  std::optional<ConfoundMask> mask;
  if (mask_source) mask = resolve_mask(*mask_source, model.spec.feature_dim());
  const char* mode_name = mask ? "partial" : "full";

  std::vector<SaliencyMap> maps;
  maps.reserve(data.records.size());
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const Tensor& image = data.records[i].image;
    const int id = static_cast<int>(i);
    maps.push_back(mask ? partial_saliency_map(model, image, *mask, id)
                        : saliency_map(model, image, id));
  }

  if (per_subject) {
    const fs::path subject_dir = out_dir / "per_subject";
    fs::create_directories(subject_dir, ec);
    for (const SaliencyMap& map : maps) {
      write_map_csv(map, subject_dir / ("subject_" + std::to_string(map.subject_id) + "_" +
                                        mode_name + ".csv"));
    }
  }

  SaliencyCmdResult res;
  res.average = average_saliency(maps);
  res.csv_path = out_dir / ("average_" + std::string(mode_name) + ".csv");
  res.pgm_path = out_dir / ("average_" + std::string(mode_name) + ".pgm");
  write_map_csv(res.average, res.csv_path);
  write_map_pgm(res.average, res.pgm_path);

  if (per_group) {
    for (int group : {1, 2}) {
      std::vector<SaliencyMap> group_maps;
      for (std::size_t i = 0; i < maps.size(); ++i) {
        if (data.records[i].group == group) group_maps.push_back(maps[i]);
      }
      if (group_maps.empty()) continue;
      const SaliencyMap avg = average_saliency(group_maps);
      write_map_csv(avg, out_dir / ("average_group" + std::to_string(group) + "_" + mode_name + ".csv"));
      write_map_pgm(avg, out_dir / ("average_group" + std::to_string(group) + "_" + mode_name + ".pgm"));
    }
  }

  res.block_means = block_saliency_stats(
      res.average, {block_mask(Block::A), block_mask(Block::B), block_mask(Block::C), block_mask(Block::D)});
  log_info("saliency: wrote " + res.csv_path.string() + " (mode " + mode_name + ")");
  return res;
}

namespace {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError("stage " + std::string(stage) + ": " + e.what());
  } catch (const SingularityError& e) {
    throw SingularityError("stage " + std::string(stage) + ": " + e.what());
  } catch (const TrainingError& e) {
    throw TrainingError("stage " + std::string(stage) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("stage " + std::string(stage) + ": " + e.what());
  }
}

}  // namespace

RunReport cmd_pipeline(const PipelineConfig& config) {
  config.validate();
  const fs::path out(config.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw FormatError("cannot create " + out.string() + ": " + ec.message());

  RunReport report;

  const fs::path data_dir = out / "dataset";
  run_stage("synth", [&] { return cmd_synth(config.n_per_group, config.seed, data_dir); });

  const fs::path model_path = out / "model.txt";
  TrainParams tp;
  tp.epochs = config.epochs;
  tp.learning_rate = config.learning_rate;
  tp.momentum = config.momentum;
  tp.batch_size = config.batch_size;
  tp.l2 = config.l2;
  tp.seed = config.seed;
  tp.gate = config.gate;
  const TrainCmdResult trained = run_stage("train", [&] { return cmd_train(data_dir, model_path, tp); });
  report.training_accuracy = trained.accuracy;
  report.epoch_loss = trained.epoch_loss;

  const ConfoundCmdResult confound = run_stage("confound-test", [&] {
    return cmd_confound_test(data_dir, model_path, config.confounders, config.alpha, config.bonferroni, out);
  });
  report.feature_dim = static_cast<int>(confound.report.m);
  report.confounded_count = static_cast<int>(confound.report.mask.confounded_count());
  report.confounded_fraction =
      static_cast<double>(report.confounded_count) / static_cast<double>(confound.report.m);

  const SaliencyCmdResult full = run_stage("saliency", [&] {
    return cmd_saliency(data_dir, model_path, std::nullopt, out, config.per_subject_maps,
                        config.per_group_maps);
  });
  const SaliencyCmdResult partial = run_stage("saliency", [&] {
    return cmd_saliency(data_dir, model_path, confound.report_path.string(), out,
                        config.per_subject_maps, config.per_group_maps);
  });

  for (std::size_t b = 0; b < 4; ++b) {
    report.block_means_full[kBlockNames[b]] = full.block_means[b];
    report.block_means_partial[kBlockNames[b]] = partial.block_means[b];
  }
  const double full_bc = 0.5 * (full.block_means[1] + full.block_means[2]);
  const double partial_bc = 0.5 * (partial.block_means[1] + partial.block_means[2]);
  const double full_ad = 0.5 * (full.block_means[0] + full.block_means[3]);
  const double partial_ad = 0.5 * (partial.block_means[0] + partial.block_means[3]);
  report.bc_attenuation = partial_bc == 0.0 ? std::numeric_limits<double>::infinity()
                                            : full_bc / partial_bc;
  report.ad_retention = full_ad == 0.0 ? std::numeric_limits<double>::infinity()
                                       : partial_ad / full_ad;

  report.artifacts = {{"dataset_manifest", (data_dir / "manifest.json").string()},
                      {"dataset_csv", (data_dir / "data.csv").string()},
                      {"model", model_path.string()},
                      {"loss_history", trained.loss_history_path.string()},
                      {"features_csv", confound.features_path.string()},
                      {"glm_report", confound.report_path.string()},
                      {"average_full_csv", full.csv_path.string()},
                      {"average_full_pgm", full.pgm_path.string()},
                      {"average_partial_csv", partial.csv_path.string()},
                      {"average_partial_pgm", partial.pgm_path.string()},
                      {"run_report", (out / "run_report.json").string()}};

  write_run_report(report, out / "run_report.json");
  return report;
}

}  // namespace cfviz
