#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfviz/synthdata.hpp"
#include "cfviz/tape.hpp"

namespace cfviz {

struct ModelSpec {
  int input_channels = 1;
  int input_height = 32;
  int input_width = 32;
  std::vector<int> encoder_channels = {4, 8, 2};  // out-channels per conv/relu/pool stack
  std::vector<int> predictor_hidden = {16};

  int feature_dim() const;
  void validate() const;  // throws ShapeError

  bool operator==(const ModelSpec&) const = default;
};

// Encoder (conv stacks) + predictor (fully connected); the flatten between
// them is the feature vector f. The final affine output passes through a
// sigmoid, so the score is the predicted probability of group 2.
struct Model {
  ModelSpec spec;
  std::vector<Tensor> conv_kernels;  // [C_out,C_in,2,2] per stack
  std::vector<Tensor> conv_biases;   // [C_out] per stack
  std::vector<Tensor> fc_weights;    // [m,n] per predictor affine
  std::vector<Tensor> fc_biases;     // [m]
  std::uint64_t seed = 0;
  int epochs_run = 0;
  double final_loss = 0.0;
};

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 50;
  int batch_size = 32;
  double l2 = 0.0;  // weight decay; adds l2*w to the gradient, skipped entirely when 0
  std::uint64_t seed = 0;
};

struct ForwardResult {
  Tape tape;
  NodeId input_id = -1;
  NodeId feature_id = -1;  // the flatten output (or the dummy layer output)
  NodeId logit_id = -1;    // pre-sigmoid scalar
  NodeId score_id = -1;
  double score = 0.0;
  Tensor features;
};

// Parameter declaration order: conv0.kernel, conv0.bias, ..., fc0.weight,
// fc0.bias, ... Shared by init, training, and the model file.
std::vector<Tensor*> parameter_list(Model& model);
std::vector<const Tensor*> parameter_list(const Model& model);
std::vector<std::string> parameter_names(const ModelSpec& spec);

Model build_model(const ModelSpec& spec, std::uint64_t seed);
// 3 stacks 1->4->8->2 on 32x32 (M=32 features), predictor 32->16 tanh ->1.
Model build_synthetic_model(std::uint64_t seed);

// image is {H,W} (single channel). The returned tape keeps the feature node
// designated for gradient queries.
ForwardResult forward(const Model& model, const Tensor& image);

// Mini-batch gradient descent with momentum on mean binary cross-entropy,
// labels {1,2} -> targets {0,1}. Returns per-epoch mean loss and updates the
// model's training metadata. Throws TrainingError if the loss turns
// non-finite, naming the epoch.
std::vector<double> train(Model& model, const Dataset& data, const TrainConfig& config);

// Fraction of records with (score >= 0.5) matching target (group 2).
double training_accuracy(const Model& model, const Dataset& data);

// Versioned text file: magic+version line, spec/metadata JSON line, then one
// block per parameter in declaration order with full-precision values.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace cfviz
