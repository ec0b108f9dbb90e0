#include "cfviz/convnet.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "cfviz/errors.hpp"
#include "cfviz/rng.hpp"
#include "cfviz/textio.hpp"

namespace cfviz {

namespace {
constexpr char kModelMagic[] = "cfviz-model";
constexpr int kModelVersion = 1;
constexpr double kLossClamp = 1e-12;  // keeps log() finite for saturated scores
}  // namespace

int ModelSpec::feature_dim() const {
  const int stacks = static_cast<int>(encoder_channels.size());
  const int h = input_height >> stacks;
  const int w = input_width >> stacks;
  return encoder_channels.back() * h * w;
}

void ModelSpec::validate() const {
  if (input_channels < 1 || input_height < 1 || input_width < 1) {
    throw ShapeError("model spec: input extents must be >= 1");
  }
  if (encoder_channels.empty()) throw ShapeError("model spec: need at least one conv stack");
  const int stacks = static_cast<int>(encoder_channels.size());
  if (input_height % (1 << stacks) != 0 || input_width % (1 << stacks) != 0) {
    throw ShapeError("model spec: input extents must be divisible by 2^stacks");
  }
  for (int c : encoder_channels) {
    if (c < 1) throw ShapeError("model spec: channel counts must be >= 1");
  }
  for (int hdim : predictor_hidden) {
    if (hdim < 1) throw ShapeError("model spec: hidden widths must be >= 1");
  }
}

std::vector<Tensor*> parameter_list(Model& model) {
  std::vector<Tensor*> params;
  for (std::size_t s = 0; s < model.conv_kernels.size(); ++s) {
    params.push_back(&model.conv_kernels[s]);
    params.push_back(&model.conv_biases[s]);
  }
  for (std::size_t l = 0; l < model.fc_weights.size(); ++l) {
    params.push_back(&model.fc_weights[l]);
    params.push_back(&model.fc_biases[l]);
  }
  return params;
}

std::vector<const Tensor*> parameter_list(const Model& model) {
  std::vector<const Tensor*> params;
  for (Tensor* t : parameter_list(const_cast<Model&>(model))) params.push_back(t);
  return params;
}

std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (std::size_t s = 0; s < spec.encoder_channels.size(); ++s) {
    names.push_back("conv" + std::to_string(s) + ".kernel");
    names.push_back("conv" + std::to_string(s) + ".bias");
  }
  for (std::size_t l = 0; l < spec.predictor_hidden.size() + 1; ++l) {
    names.push_back("fc" + std::to_string(l) + ".weight");
    names.push_back("fc" + std::to_string(l) + ".bias");
  }
  return names;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model model;
  model.spec = spec;
  model.seed = seed;

  Rng rng(mix_seed(seed, "model-init"));
  auto init = [&rng](Tensor& t, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  };

  int c_in = spec.input_channels;
  for (int c_out : spec.encoder_channels) {
    Tensor kernel({static_cast<std::size_t>(c_out), static_cast<std::size_t>(c_in), 2, 2});
    Tensor bias({static_cast<std::size_t>(c_out)});
    init(kernel, c_in * 4);
    init(bias, c_in * 4);
    model.conv_kernels.push_back(std::move(kernel));
    model.conv_biases.push_back(std::move(bias));
    c_in = c_out;
  }

  int width_in = spec.feature_dim();
  std::vector<int> widths = spec.predictor_hidden;
  widths.push_back(1);
  for (int width_out : widths) {
    Tensor weight({static_cast<std::size_t>(width_out), static_cast<std::size_t>(width_in)});
    Tensor bias({static_cast<std::size_t>(width_out)});
    init(weight, width_in);
    init(bias, width_in);
    model.fc_weights.push_back(std::move(weight));
    model.fc_biases.push_back(std::move(bias));
    width_in = width_out;
  }
  return model;
}

Model build_synthetic_model(std::uint64_t seed) { return build_model(ModelSpec{}, seed); }

ForwardResult forward(const Model& model, const Tensor& image) {
  const ModelSpec& spec = model.spec;
  if (image.rank() != 2 || image.extent(0) != static_cast<std::size_t>(spec.input_height) ||
      image.extent(1) != static_cast<std::size_t>(spec.input_width)) {
    throw ShapeError("forward: image shape " + shape_str(image.shape()) + " does not match spec " +
                     std::to_string(spec.input_height) + "x" + std::to_string(spec.input_width));
  }

  ForwardResult res;
  Tape& tape = res.tape;
  Tensor chw({static_cast<std::size_t>(spec.input_channels), image.extent(0), image.extent(1)},
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
  res.feature_id = tape.flatten(cur);
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

namespace {

// Leaf ids of the parameters inside one forward tape, in declaration order.
// forward() records leaves as (input, k0, b0, k1, b1, ..., w0, b0, ...); the
// parameter leaves are ids 1,2,... interleaved exactly in declaration order.
std::vector<NodeId> tape_param_ids(const Model& model) {
  std::vector<NodeId> ids;
  NodeId next = 1;  // 0 is the image
  for (std::size_t s = 0; s < model.conv_kernels.size(); ++s) {
    ids.push_back(next++);  // kernel
    ids.push_back(next++);  // bias
    next += 3;              // conv out, relu out, pool out
  }
  next += 1;  // flatten
  for (std::size_t l = 0; l < model.fc_weights.size(); ++l) {
    ids.push_back(next++);  // weight
    ids.push_back(next++);  // bias
    next += 1;              // affine out
    if (l + 1 < model.fc_weights.size()) next += 1;  // tanh out
  }
  return ids;
}

}  // namespace

std::vector<double> train(Model& model, const Dataset& data, const TrainConfig& config) {
  if (data.records.empty()) throw ValidationError("train: dataset is empty");
  if (!(config.learning_rate > 0.0)) throw ValidationError("train: learning rate must be > 0");
  if (config.batch_size < 1) throw ValidationError("train: batch size must be >= 1");

  std::vector<Tensor*> params = parameter_list(model);
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (Tensor* p : params) velocity.emplace_back(p->shape());

  const std::vector<NodeId> param_ids = tape_param_ids(model);
  const std::size_t n = data.records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(config.epochs));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with a per-epoch derived stream; fixed shuffle stream in
    // the determinism contract.
    Rng rng(mix_seed(mix_seed(config.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    std::vector<Tensor> grad_acc;
    grad_acc.reserve(params.size());
    for (Tensor* p : params) grad_acc.emplace_back(p->shape());

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const double batch = static_cast<double>(end - start);
      for (Tensor& g : grad_acc)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.0;

      for (std::size_t bi = start; bi < end; ++bi) {
        const SyntheticRecord& rec = data.records[order[bi]];
        const double target = rec.group == 2 ? 1.0 : 0.0;
        ForwardResult fr = forward(model, rec.image);
        const double s = std::min(1.0 - kLossClamp, std::max(kLossClamp, fr.score));
        epoch_loss += -(target * std::log(s) + (1.0 - target) * std::log(1.0 - s));

        // d(mean BCE)/d(logit) = (s - y)/batch, seeded at the pre-sigmoid node.
        Tensor seed({1}, {(fr.score - target) / batch});
        GradientSet gs = fr.tape.backward(fr.logit_id, seed);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
          const Tensor& g = gs.at(param_ids[pi]);
          for (std::size_t i = 0; i < g.size(); ++i) grad_acc[pi][i] += g[i];
        }
      }

      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& w = *params[pi];
        Tensor& v = velocity[pi];
        for (std::size_t i = 0; i < w.size(); ++i) {
          double g = grad_acc[pi][i];
          if (config.l2 != 0.0) g += config.l2 * w[i];
          v[i] = config.momentum * v[i] + g;
          w[i] -= config.learning_rate * v[i];
        }
      }
    }

    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("training diverged at epoch " + std::to_string(epoch));
    }
    history.push_back(epoch_loss);
  }

  model.epochs_run += config.epochs;
  model.final_loss = history.empty() ? 0.0 : history.back();
  return history;
}

double training_accuracy(const Model& model, const Dataset& data) {
  if (data.records.empty()) return 0.0;
  std::size_t correct = 0;
  for (const SyntheticRecord& rec : data.records) {
    const ForwardResult fr = forward(model, rec.image);
    const int predicted = fr.score >= 0.5 ? 2 : 1;
    correct += (predicted == rec.group);
  }
  return static_cast<double>(correct) / static_cast<double>(data.records.size());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  nlohmann::json header;
  header["spec"] = {{"input_channels", model.spec.input_channels},
                    {"input_height", model.spec.input_height},
                    {"input_width", model.spec.input_width},
                    {"encoder_channels", model.spec.encoder_channels},
                    {"predictor_hidden", model.spec.predictor_hidden}};
  header["seed"] = model.seed;
  header["epochs_run"] = model.epochs_run;
  header["final_loss"] = model.final_loss;

  std::string out = std::string(kModelMagic) + " " + std::to_string(kModelVersion) + "\n";
  out += header.dump() + "\n";

  const std::vector<const Tensor*> params = parameter_list(model);
  const std::vector<std::string> names = parameter_names(model.spec);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& t = *params[pi];
    out += "param " + names[pi] + " " + std::to_string(t.rank());
    for (std::size_t a = 0; a < t.rank(); ++a) out += " " + std::to_string(t.extent(a));
    out += "\n";
    for (std::size_t i = 0; i < t.size(); ++i) out += format_double(t[i]) + "\n";
  }
  write_text_file(path, out);
}

Model load_model(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kModelMagic) {
    throw FormatError(path.string() + ": not a model file (bad magic line)");
  }
  if (version != kModelVersion) {
    throw FormatError(path.string() + ": unsupported model version " + std::to_string(version));
  }
  in >> std::ws;
  std::string header_line;
  std::getline(in, header_line);

  Model model;
  try {
    const nlohmann::json header = nlohmann::json::parse(header_line);
    const nlohmann::json& spec = header.at("spec");
    model.spec.input_channels = spec.at("input_channels").get<int>();
    model.spec.input_height = spec.at("input_height").get<int>();
    model.spec.input_width = spec.at("input_width").get<int>();
    model.spec.encoder_channels = spec.at("encoder_channels").get<std::vector<int>>();
    model.spec.predictor_hidden = spec.at("predictor_hidden").get<std::vector<int>>();
    model.seed = header.at("seed").get<std::uint64_t>();
    model.epochs_run = header.at("epochs_run").get<int>();
    model.final_loss = header.at("final_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header, " + e.what());
  }
  model.spec.validate();

  // Expected shapes derived from the spec; the file must agree.
  Model reference = build_model(model.spec, 0);
  model.conv_kernels = reference.conv_kernels;
  model.conv_biases = reference.conv_biases;
  model.fc_weights = reference.fc_weights;
  model.fc_biases = reference.fc_biases;

  const std::vector<Tensor*> params = parameter_list(model);
  const std::vector<std::string> names = parameter_names(model.spec);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::string tag, name;
    std::size_t rank = 0;
    if (!(in >> tag >> name >> rank) || tag != "param") {
      throw FormatError(path.string() + ": truncated file, expected parameter '" + names[pi] + "'");
    }
    if (name != names[pi]) {
      throw FormatError(path.string() + ": expected parameter '" + names[pi] + "', found '" + name + "'");
    }
    std::vector<std::size_t> extents(rank);
    for (std::size_t a = 0; a < rank; ++a) {
      if (!(in >> extents[a])) {
        throw FormatError(path.string() + ": truncated shape header for parameter '" + name + "'");
      }
    }
    Tensor& t = *params[pi];
    if (extents != t.shape()) {
      throw ShapeError(path.string() + ": parameter '" + name + "' has shape " + shape_str(extents) +
                       ", spec requires " + shape_str(t.shape()));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(in >> t[i])) {
        throw FormatError(path.string() + ": truncated values in parameter '" + name + "'");
      }
    }
  }
  return model;
}

}  // namespace cfviz
