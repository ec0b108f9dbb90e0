#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfviz/errors.hpp"
#include "cfviz/log.hpp"
#include "cfviz/pipeline.hpp"
#include "cfviz/textio.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confounder-aware ConvNet saliency pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the two-group Gaussian-blob dataset");
  int synth_n = 512;
  std::uint64_t synth_seed = 7;
  std::string synth_out = "dataset";
  synth->add_option("--n-per-group", synth_n, "Images per group")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Master seed");
  synth->add_option("--out", synth_out, "Output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the classifier on a dataset");
  std::string train_data, train_out = "model.txt";
  cfviz::TrainParams train_params;
  bool no_gate = false;
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out-model", train_out, "Model file to write");
  train_cmd->add_option("--epochs", train_params.epochs, "Training epochs")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr", train_params.learning_rate, "Learning rate");
  train_cmd->add_option("--momentum", train_params.momentum, "Momentum coefficient");
  train_cmd->add_option("--batch", train_params.batch_size, "Mini-batch size")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--l2", train_params.l2, "L2 penalty coefficient");
  train_cmd->add_option("--seed", train_params.seed, "Master seed");
  train_cmd->add_flag("--no-gate", no_gate, "Do not require training accuracy >= 0.95");

  // confound-test
  auto* confound = app.add_subcommand("confound-test", "Per-feature GLM confounding tests");
  std::string ct_data, ct_model, ct_confounders = "sigma_B,sigma_C", ct_out = ".";
  double ct_alpha = 0.05;
  bool ct_bonferroni = false;
  confound->add_option("--data", ct_data, "Dataset directory")->required();
  confound->add_option("--model", ct_model, "Trained model file")->required();
  confound->add_option("--confounders", ct_confounders, "Comma-separated confounder columns");
  confound->add_option("--alpha", ct_alpha, "Significance threshold");
  confound->add_flag("--bonferroni", ct_bonferroni, "Divide alpha by M*K");
  confound->add_option("--out", ct_out, "Output directory");

  // saliency
  auto* sal = app.add_subcommand("saliency", "Average saliency map (full, or partial with --mask)");
  std::string sal_data, sal_model, sal_out = ".";
  std::string sal_mask;
  bool sal_per_subject = false, sal_per_group = false;
  sal->add_option("--data", sal_data, "Dataset directory")->required();
  sal->add_option("--model", sal_model, "Trained model file")->required();
  sal->add_option("--mask", sal_mask, "glm_report.json path or inline 0/1 string");
  sal->add_option("--out", sal_out, "Output directory");
  sal->add_flag("--per-subject", sal_per_subject, "Also write per-subject maps");
  sal->add_flag("--per-group", sal_per_group, "Also write per-group averages");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run generate -> train -> test -> visualize -> report");
  std::string pipe_config;
  std::optional<std::uint64_t> pipe_seed;
  std::optional<std::string> pipe_out;
  std::optional<double> pipe_alpha;
  std::optional<int> pipe_n, pipe_epochs;
  pipe->add_option("--config", pipe_config, "Pipeline config JSON")->required();
  pipe->add_option("--seed", pipe_seed, "Override config seed");
  pipe->add_option("--out", pipe_out, "Override config out_dir");
  pipe->add_option("--alpha", pipe_alpha, "Override config alpha");
  pipe->add_option("--n-per-group", pipe_n, "Override config n_per_group");
  pipe->add_option("--epochs", pipe_epochs, "Override config epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) {
      cfviz::cmd_synth(synth_n, synth_seed, synth_out);
    } else if (train_cmd->parsed()) {
      train_params.gate = !no_gate;
      const auto res = cfviz::cmd_train(train_data, train_out, train_params);
      std::printf("accuracy %s\n", cfviz::format_double(res.accuracy).c_str());
    } else if (confound->parsed()) {
      const auto res = cfviz::cmd_confound_test(ct_data, ct_model, split_csv(ct_confounders),
                                                ct_alpha, ct_bonferroni, ct_out);
      std::printf("confounded %zu of %zu\n", res.report.mask.confounded_count(), res.report.m);
    } else if (sal->parsed()) {
      std::optional<std::string> mask;
      if (!sal_mask.empty()) mask = sal_mask;
      const auto res = cfviz::cmd_saliency(sal_data, sal_model, mask, sal_out, sal_per_subject,
                                           sal_per_group);
      std::printf("block means A %s B %s C %s D %s\n",
                  cfviz::format_double(res.block_means[0]).c_str(),
                  cfviz::format_double(res.block_means[1]).c_str(),
                  cfviz::format_double(res.block_means[2]).c_str(),
                  cfviz::format_double(res.block_means[3]).c_str());
    } else if (pipe->parsed()) {
      cfviz::PipelineConfig config = cfviz::load_pipeline_config(pipe_config);
      if (pipe_seed) config.seed = *pipe_seed;
      if (pipe_out) config.out_dir = *pipe_out;
      if (pipe_alpha) config.alpha = *pipe_alpha;
      if (pipe_n) config.n_per_group = *pipe_n;
      if (pipe_epochs) config.epochs = *pipe_epochs;
      const cfviz::RunReport report = cfviz::cmd_pipeline(config);
      std::printf("accuracy %s confounded %d/%d bc_attenuation %s ad_retention %s\n",
                  cfviz::format_double(report.training_accuracy).c_str(), report.confounded_count,
                  report.feature_dim, cfviz::format_double(report.bc_attenuation).c_str(),
                  cfviz::format_double(report.ad_retention).c_str());
    }
  } catch (const cfviz::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const cfviz::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitOk;
}
