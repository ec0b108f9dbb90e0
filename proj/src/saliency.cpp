#include "cfviz/saliency.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "cfviz/errors.hpp"
#include "cfviz/rng.hpp"
#include "cfviz/textio.hpp"

namespace cfviz {

namespace {

Tensor grad_to_image(const Tensor& grad_chw, const Model& model) {
  // single input channel: [1,H,W] -> {H,W}
  return Tensor({static_cast<std::size_t>(model.spec.input_height),
                 static_cast<std::size_t>(model.spec.input_width)},
                std::vector<double>(grad_chw.data(), grad_chw.data() + grad_chw.size()));
}

Tensor abs_map(Tensor signed_map) {
  for (std::size_t i = 0; i < signed_map.size(); ++i) signed_map[i] = std::fabs(signed_map[i]);
  return signed_map;
}

void check_mask(const ConfoundMask& mask, const Model& model) {
  if (mask.bits.size() != static_cast<std::size_t>(model.spec.feature_dim())) {
    throw ShapeError("mask length " + std::to_string(mask.bits.size()) +
                     " does not match feature dimension " + std::to_string(model.spec.feature_dim()));
  }
}

Tensor mask_as_tensor(const std::vector<std::uint8_t>& bits) {
  Tensor t({bits.size()});
  for (std::size_t i = 0; i < bits.size(); ++i) t[i] = bits[i] ? 1.0 : 0.0;
  return t;
}

}  // namespace

std::string mask_id_of(const std::vector<std::uint8_t>& bits) {
  std::string raw;
  raw.reserve(bits.size());
  for (std::uint8_t b : bits) raw += b ? '1' : '0';
  char buf[32];
  std::snprintf(buf, sizeof(buf), "mask-%016llx",
                static_cast<unsigned long long>(fnv1a64(raw)));
  return buf;
}

Tensor input_gradient(const Model& model, const Tensor& image) {
  ForwardResult fr = forward(model, image);
  GradientSet gs = fr.tape.backward(fr.score_id);
  return grad_to_image(gs.at(fr.input_id), model);
}

SaliencyMap saliency_map(const Model& model, const Tensor& image, int subject_id) {
  SaliencyMap map;
  map.values = abs_map(input_gradient(model, image));
  map.subject_id = subject_id;
  map.mode = SaliencyMap::Mode::Full;
  return map;
}

Tensor feature_jacobian_row(const Model& model, const Tensor& image, int j) {
  const int m = model.spec.feature_dim();
  if (j < 0 || j >= m) {
    throw ValidationError("feature index " + std::to_string(j) + " outside [0," + std::to_string(m) + ")");
  }
  ForwardResult fr = forward(model, image);
  Tensor seed({static_cast<std::size_t>(m)});
  seed[static_cast<std::size_t>(j)] = 1.0;
  GradientSet gs = fr.tape.backward(fr.feature_id, seed);
  return grad_to_image(gs.at(fr.input_id), model);
}

Tensor partial_input_gradient(const Model& model, const Tensor& image, const ConfoundMask& mask) {
  check_mask(mask, model);
  ForwardResult fr = forward(model, image);
  const Tensor seed({1}, {1.0});
  GradientSet gs = fr.tape.backward(fr.score_id, seed, fr.feature_id, mask_as_tensor(mask.bits));
  return grad_to_image(gs.at(fr.input_id), model);
}

SaliencyMap partial_saliency_map(const Model& model, const Tensor& image, const ConfoundMask& mask,
                                 int subject_id) {
  SaliencyMap map;
  map.values = abs_map(partial_input_gradient(model, image, mask));
  map.subject_id = subject_id;
  map.mode = SaliencyMap::Mode::Partial;
  map.mask_id = mask_id_of(mask.bits);
  return map;
}

RefactorizedModel refactorize_model(const Model& model, const Tensor& image, const ConfoundMask& mask,
                                    int subject_id) {
  check_mask(mask, model);
  RefactorizedModel refac;
  refac.base = &model;
  refac.bits = mask.bits;
  refac.subject_id = subject_id;
  refac.frozen_features = forward(model, image).features;
  return refac;
}

ForwardResult forward(const RefactorizedModel& refac, const Tensor& image) {
  const Model& model = *refac.base;
  if (refac.frozen_features.size() != static_cast<std::size_t>(model.spec.feature_dim())) {
    throw ShapeError("refactorized model: frozen feature length does not match the base model");
  }

  if (image.rank() != 2 || image.extent(0) != static_cast<std::size_t>(model.spec.input_height) ||
      image.extent(1) != static_cast<std::size_t>(model.spec.input_width)) {
    throw ShapeError("forward: image shape " + shape_str(image.shape()) + " does not match spec");
  }

  ForwardResult res;
  Tape& tape = res.tape;
  Tensor chw({static_cast<std::size_t>(model.spec.input_channels),
              static_cast<std::size_t>(model.spec.input_height),
              static_cast<std::size_t>(model.spec.input_width)},
             std::vector<double>(image.data(), image.data() + image.size()));
  res.input_id = tape.leaf(std::move(chw));

  NodeId cur = res.input_id;
  for (std::size_t s = 0; s < model.conv_kernels.size(); ++s) {
    const NodeId k = tape.leaf(model.conv_kernels[s]);
    const NodeId b = tape.leaf(model.conv_biases[s]);
    cur = tape.conv2d(cur, k, b);
    cur = tape.pointwise(cur, Activation::Relu);
    cur = tape.maxpool2(cur);
  }
  cur = tape.flatten(cur);

  // Dummy layer: x*b + (1-b)*y, constants on the tape.
  Tensor scale = mask_as_tensor(refac.bits);
  Tensor shift({refac.frozen_features.size()});
  for (std::size_t i = 0; i < shift.size(); ++i) {
    shift[i] = (1.0 - scale[i]) * refac.frozen_features[i];
  }
  res.feature_id = tape.scale_shift(cur, std::move(scale), std::move(shift));
  cur = res.feature_id;

  for (std::size_t l = 0; l < model.fc_weights.size(); ++l) {
    const NodeId w = tape.leaf(model.fc_weights[l]);
    const NodeId b = tape.leaf(model.fc_biases[l]);
    cur = tape.affine(cur, w, b);
    if (l + 1 < model.fc_weights.size()) cur = tape.pointwise(cur, Activation::Tanh);
  }
  res.logit_id = cur;
  res.score_id = tape.pointwise(cur, Activation::Sigmoid);
  res.score = tape.value(res.score_id)[0];
  res.features = tape.value(res.feature_id);
  return res;
}

SaliencyMap saliency_map(const RefactorizedModel& refac, const Tensor& image) {
  ForwardResult fr = forward(refac, image);
  GradientSet gs = fr.tape.backward(fr.score_id);
  SaliencyMap map;
  map.values = abs_map(grad_to_image(gs.at(fr.input_id), *refac.base));
  map.subject_id = refac.subject_id;
  map.mode = SaliencyMap::Mode::Partial;
  map.mask_id = mask_id_of(refac.bits);
  return map;
}

SaliencyMap average_saliency(const std::vector<SaliencyMap>& maps) {
  if (maps.empty()) throw ValidationError("average_saliency: empty map list");
  SaliencyMap avg;
  avg.values = Tensor(maps[0].values.shape());
  avg.mode = maps[0].mode;
  avg.mask_id = maps[0].mask_id;
  for (const SaliencyMap& map : maps) {
    if (!map.values.same_shape(avg.values)) throw ShapeError("average_saliency: shape mismatch");
    if (map.mode != avg.mode) throw ValidationError("average_saliency: mixed full/partial maps");
    for (std::size_t i = 0; i < avg.values.size(); ++i) avg.values[i] += map.values[i];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (std::size_t i = 0; i < avg.values.size(); ++i) avg.values[i] *= inv;
  return avg;
}

std::vector<double> block_saliency_stats(const SaliencyMap& map,
                                         const std::vector<std::vector<std::pair<int, int>>>& blocks) {
  const std::size_t h = map.values.extent(0), w = map.values.extent(1);
  std::vector<double> means;
  means.reserve(blocks.size());
  for (const auto& block : blocks) {
    if (block.empty()) throw ValidationError("block_saliency_stats: empty block");
    double acc = 0.0;
    for (const auto& [r, c] : block) {
      if (r < 0 || c < 0 || static_cast<std::size_t>(r) >= h || static_cast<std::size_t>(c) >= w) {
        throw ValidationError("block_saliency_stats: pixel outside the map");
      }
      acc += map.values[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
    }
    means.push_back(acc / static_cast<double>(block.size()));
  }
  return means;
}

void write_map_csv(const SaliencyMap& map, const std::filesystem::path& path) {
  const std::size_t h = map.values.extent(0), w = map.values.extent(1);
  std::string csv;
  csv.reserve(h * w * 20);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (c) csv += ",";
      csv += format_double(map.values[r * w + c]);
    }
    csv += "\n";
  }
  write_text_file(path, csv);
}

Tensor read_map_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<double> values;
  std::size_t w = 0, h = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::size_t row_w = 0;
    while (std::getline(ls, cell, ',')) {
      values.push_back(parse_double(cell, "map csv"));
      ++row_w;
    }
    if (w == 0)
      w = row_w;
    else if (row_w != w)
      throw FormatError(path.string() + ": ragged rows");
    ++h;
  }
  if (h == 0) throw FormatError(path.string() + ": empty map");
  return Tensor({h, w}, std::move(values));
}

void write_map_pgm(const SaliencyMap& map, const std::filesystem::path& path) {
  const std::size_t h = map.values.extent(0), w = map.values.extent(1);
  double peak = 0.0;
  for (std::size_t i = 0; i < map.values.size(); ++i) peak = std::max(peak, map.values[i]);
  std::string pgm = "P2\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = peak > 0.0 ? map.values[r * w + c] / peak : 0.0;
      const int g = static_cast<int>(std::lround(v * 255.0));
      if (c) pgm += " ";
      pgm += std::to_string(g);
    }
    pgm += "\n";
  }
  write_text_file(path, pgm);
}

}  // namespace cfviz
