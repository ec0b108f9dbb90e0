#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cfviz/convnet.hpp"
#include "cfviz/glm.hpp"

namespace cfviz {

struct SaliencyMap {
  enum class Mode { Full, Partial };

  Tensor values;  // {H,W}, non-negative
  int subject_id = -1;
  Mode mode = Mode::Full;
  std::string mask_id;  // nonempty for partial maps
};

// The trained model with the dummy layer between encoder and predictor:
// L(x) = x*b + (1-b)*y, y frozen from one forward pass on the defining
// image. Refactorization is per image.
struct RefactorizedModel {
  const Model* base = nullptr;
  Tensor frozen_features;  // y_i, length M
  std::vector<std::uint8_t> bits;
  int subject_id = -1;
};

std::string mask_id_of(const std::vector<std::uint8_t>& bits);

// Signed d(score)/d(image); one forward, one backward.
Tensor input_gradient(const Model& model, const Tensor& image);

// |d(score)/d(image)| per pixel.
SaliencyMap saliency_map(const Model& model, const Tensor& image, int subject_id = -1);

// Signed d(f_j)/d(image): backward seeded with e_j at the feature node.
Tensor feature_jacobian_row(const Model& model, const Tensor& image, int j);

// Signed masked chain-rule sum (the feature-node adjoint is zeroed at masked
// positions inside a single backward pass).
Tensor partial_input_gradient(const Model& model, const Tensor& image, const ConfoundMask& mask);

SaliencyMap partial_saliency_map(const Model& model, const Tensor& image, const ConfoundMask& mask,
                                 int subject_id = -1);

RefactorizedModel refactorize_model(const Model& model, const Tensor& image, const ConfoundMask& mask,
                                    int subject_id = -1);

// Ordinary forward through the dummy layer; on the defining image the score
// equals the base model's score exactly.
ForwardResult forward(const RefactorizedModel& refac, const Tensor& image);

// Full back-propagation through the refactorized model; equals the masked
// partial map.
SaliencyMap saliency_map(const RefactorizedModel& refac, const Tensor& image);

// Pointwise mean; inputs must be nonempty, same shape, same mode.
SaliencyMap average_saliency(const std::vector<SaliencyMap>& maps);

// Mean of map values over each block's pixels.
std::vector<double> block_saliency_stats(const SaliencyMap& map,
                                         const std::vector<std::vector<std::pair<int, int>>>& blocks);

// Full-precision CSV grid, one row per image row.
void write_map_csv(const SaliencyMap& map, const std::filesystem::path& path);
Tensor read_map_csv(const std::filesystem::path& path);

// P2 text PGM, 8-bit after dividing by the map maximum.
void write_map_pgm(const SaliencyMap& map, const std::filesystem::path& path);

}  // namespace cfviz
