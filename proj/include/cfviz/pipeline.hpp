#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfviz/convnet.hpp"
#include "cfviz/glm.hpp"
#include "cfviz/saliency.hpp"

namespace cfviz {

// All stage randomness derives from the single config seed:
// stage_seed(seed, "synth") feeds dataset generation, stage_seed(seed,
// "train") feeds model init and shuffling. Standalone commands apply the
// same derivation, so stage-by-stage runs match a pipelined run exactly.
std::uint64_t stage_seed(std::uint64_t master_seed, std::string_view stage);

struct PipelineConfig {
  std::uint64_t seed = 7;
  int n_per_group = 512;
  int epochs = 50;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  double l2 = 0.0;
  double alpha = 0.05;
  bool bonferroni = false;
  std::vector<std::string> confounders = {"sigma_B", "sigma_C"};
  std::string out_dir = "cfviz_out";
  bool per_subject_maps = false;
  bool per_group_maps = false;
  bool gate = true;  // require training accuracy >= 0.95

  TrainConfig train_config(std::uint64_t derived_seed) const;
  void validate() const;
};

// Flat JSON file; unknown keys rejected so typos fail fast.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct RunReport {
  double training_accuracy = 0.0;
  std::vector<double> epoch_loss;
  int feature_dim = 0;
  int confounded_count = 0;
  std::map<std::string, double> block_means_full;     // keys A,B,C,D
  std::map<std::string, double> block_means_partial;  // keys A,B,C,D
  double bc_attenuation = 0.0;  // full(B∪C)/partial(B∪C); +inf when partial is 0
  double ad_retention = 0.0;    // partial(A∪D)/full(A∪D)
  double confounded_fraction = 0.0;
  std::map<std::string, std::string> artifacts;  // artifact name -> path
};

// Infinite ratios are serialized as the JSON string "inf"; everything else
// is plain JSON, so parse -> serialize is lossless.
void write_run_report(const RunReport& report, const std::filesystem::path& path);
RunReport read_run_report(const std::filesystem::path& path);

struct SynthResult {
  std::filesystem::path dir;
  int n_records = 0;
};
SynthResult cmd_synth(int n_per_group, std::uint64_t seed, const std::filesystem::path& out_dir);

struct TrainParams {
  int epochs = 50;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
  double l2 = 0.0;
  std::uint64_t seed = 7;  // master seed; the stage seed is derived inside
  bool gate = true;
};
struct TrainCmdResult {
  double accuracy = 0.0;
  std::vector<double> epoch_loss;
  std::filesystem::path model_path;
  std::filesystem::path loss_history_path;
};
TrainCmdResult cmd_train(const std::filesystem::path& data_dir, const std::filesystem::path& out_model,
                         const TrainParams& params);

struct ConfoundCmdResult {
  ConfoundReport report;
  std::filesystem::path report_path;
  std::filesystem::path features_path;
};
ConfoundCmdResult cmd_confound_test(const std::filesystem::path& data_dir,
                                    const std::filesystem::path& model_path,
                                    const std::vector<std::string>& confounder_names, double alpha,
                                    bool bonferroni, const std::filesystem::path& out_dir);

// mask_source: empty = full mode; otherwise an inline 0/1 string or the path
// of a glm_report.json.
struct SaliencyCmdResult {
  SaliencyMap average;
  std::filesystem::path csv_path;
  std::filesystem::path pgm_path;
  std::vector<double> block_means;  // A,B,C,D
};
SaliencyCmdResult cmd_saliency(const std::filesystem::path& data_dir,
                               const std::filesystem::path& model_path,
                               const std::optional<std::string>& mask_source,
                               const std::filesystem::path& out_dir, bool per_subject = false,
                               bool per_group = false);

RunReport cmd_pipeline(const PipelineConfig& config);

}  // namespace cfviz
