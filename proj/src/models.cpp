#include "mma/models.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace mma {

namespace {

constexpr const char* kCheckpointFormat = "mma-classifier";
constexpr int kCheckpointVersion = 1;

std::string weight_name(std::size_t layer) { return "L" + std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return "L" + std::to_string(layer) + ".bias"; }

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

std::vector<Shape> ArchitectureSpec::validate() const {
  if (input_shape.empty() || shape_size(input_shape) == 0) throw std::invalid_argument("architecture: empty input shape");
  if (layers.empty()) throw std::invalid_argument("architecture: no layers");
  if (!std::holds_alternative<AffineLayer>(layers.back())) {
    throw std::invalid_argument("architecture: final layer must be affine");
  }
  std::vector<Shape> shapes;
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "architecture layer " + std::to_string(i) + ": ";
    std::visit(Overloaded{
                   [&](const AffineLayer& l) {
                     if (current.size() != 1) throw std::invalid_argument(where + "affine needs a flat input");
                     if (l.out == 0) throw std::invalid_argument(where + "affine width must be positive");
                     current = {l.out};
                   },
                   [&](const ConvLayer& l) {
                     if (current.size() != 3) throw std::invalid_argument(where + "conv needs a CHW input");
                     if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
                       throw std::invalid_argument(where + "conv extents must be positive");
                     }
                     if (current[1] + 2 * l.padding < l.kernel || current[2] + 2 * l.padding < l.kernel) {
                       throw std::invalid_argument(where + "conv kernel larger than padded input");
                     }
                     current = {l.out_channels, (current[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                                (current[2] + 2 * l.padding - l.kernel) / l.stride + 1};
                   },
                   [&](const ReluLayer&) {},
                   [&](const MaxPoolLayer& l) {
                     if (current.size() != 3) throw std::invalid_argument(where + "maxpool needs a CHW input");
                     if (l.kernel == 0 || l.stride == 0 || current[1] < l.kernel || current[2] < l.kernel) {
                       throw std::invalid_argument(where + "bad pooling window");
                     }
                     current = {current[0], (current[1] - l.kernel) / l.stride + 1,
                                (current[2] - l.kernel) / l.stride + 1};
                   },
                   [&](const FlattenLayer&) { current = {shape_size(current)}; },
               },
               layers[i]);
    shapes.push_back(current);
  }
  if (current[0] < 2) throw std::invalid_argument("architecture: need at least two classes");
  return shapes;
}

std::size_t ArchitectureSpec::num_classes() const { return std::get<AffineLayer>(layers.back()).out; }

NeuralClassifier::NeuralClassifier(ArchitectureSpec arch, std::uint64_t seed) : arch_(std::move(arch)) {
  const std::vector<Shape> shapes = arch_.validate();
  input_size_ = arch_.input_size();
  num_classes_ = arch_.num_classes();
  std::mt19937_64 rng(seed);
  Shape current = arch_.input_shape;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    Shape weight_shape;
    std::size_t fan_in = 0;
    std::size_t width = 0;
    if (const auto* a = std::get_if<AffineLayer>(&arch_.layers[i])) {
      fan_in = current[0];
      width = a->out;
      weight_shape = {a->out, fan_in};
    } else if (const auto* c = std::get_if<ConvLayer>(&arch_.layers[i])) {
      fan_in = current[0] * c->kernel * c->kernel;
      width = c->out_channels;
      weight_shape = {c->out_channels, current[0], c->kernel, c->kernel};
    }
    if (width > 0) {
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor weight(weight_shape);
      for (double& v : weight.data()) v = dist(rng);
      Tensor bias({width});
      for (double& v : bias.data()) v = dist(rng);
      params_.emplace(weight_name(i), std::move(weight));
      params_.emplace(bias_name(i), std::move(bias));
    }
    current = shapes[i];
  }
}

NeuralClassifier::NeuralClassifier(ArchitectureSpec arch, TensorMap parameters)
    : NeuralClassifier(std::move(arch), std::uint64_t{0}) {
  for (auto& [name, tensor] : params_) {
    auto it = parameters.find(name);
    if (it == parameters.end()) throw std::invalid_argument("classifier: missing parameter '" + name + "'");
    if (it->second.shape() != tensor.shape()) {
      throw std::invalid_argument("classifier: parameter '" + name + "' has shape " +
                                  shape_to_string(it->second.shape()) + ", expected " + shape_to_string(tensor.shape()));
    }
    tensor = std::move(it->second);
  }
  if (parameters.size() != params_.size()) throw std::invalid_argument("classifier: unexpected extra parameters");
}

std::size_t NeuralClassifier::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [name, tensor] : params_) count += tensor.size();
  return count;
}

NodeId NeuralClassifier::build_logits(ComputeGraph& graph, NodeId input) const {
  NodeId current = input;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    std::visit(Overloaded{
                   [&](const AffineLayer&) {
                     current = graph.affine(current, graph.leaf(weight_name(i)), graph.leaf(bias_name(i)));
                   },
                   [&](const ConvLayer& l) {
                     current = graph.conv2d(current, graph.leaf(weight_name(i)), graph.leaf(bias_name(i)), l.stride,
                                            l.padding);
                   },
                   [&](const ReluLayer&) { current = graph.relu(current); },
                   [&](const MaxPoolLayer& l) { current = graph.maxpool2d(current, l.kernel, l.stride); },
                   [&](const FlattenLayer&) { current = graph.flatten(current); },
               },
               arch_.layers[i]);
  }
  return current;
}

ClassifierGraph NeuralClassifier::make_graph() const {
  ClassifierGraph out;
  out.input = out.graph.leaf("x");
  out.logits = build_logits(out.graph, out.input);
  out.probs = out.graph.softmax(out.logits);
  return out;
}

Tensor NeuralClassifier::batch_tensor(std::span<const double> flat, std::size_t n) const {
  if (n == 0 || flat.size() != n * input_size_) {
    throw std::invalid_argument("classifier: batch of " + std::to_string(flat.size()) + " values is not " +
                                std::to_string(n) + " samples of dimension " + std::to_string(input_size_));
  }
  Shape shape{n};
  shape.insert(shape.end(), arch_.input_shape.begin(), arch_.input_shape.end());
  return Tensor(std::move(shape), std::vector<double>(flat.begin(), flat.end()));
}

void NeuralClassifier::check_input(std::size_t length) const {
  if (length != input_size_) {
    throw std::invalid_argument("classifier: input has " + std::to_string(length) + " features, expected " +
                                std::to_string(input_size_));
  }
}

std::vector<ProbVector> NeuralClassifier::predict_proba_batch(std::span<const double> flat, std::size_t n) const {
  ClassifierGraph g = make_graph();
  const Tensor& probs = g.graph.forward({{"x", batch_tensor(flat, n)}}, params_);
  std::vector<ProbVector> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = probs.data().subspan(r * num_classes_, num_classes_);
    out.emplace_back(std::vector<double>(row.begin(), row.end()));
  }
  return out;
}

ProbVector NeuralClassifier::predict_proba(std::span<const double> x) const {
  check_input(x.size());
  return std::move(predict_proba_batch(x, 1).front());
}

std::vector<double> NeuralClassifier::logits(std::span<const double> x) const {
  check_input(x.size());
  ClassifierGraph g = make_graph();
  g.graph.forward({{"x", batch_tensor(x, 1)}}, params_);
  return g.graph.value(g.logits).values();
}

ClassIndex NeuralClassifier::classify(std::span<const double> x) const { return predict_proba(x).argmax(); }

nlohmann::json NeuralClassifier::to_json() const {
  using nlohmann::json;
  json layers = json::array();
  for (const LayerSpec& layer : arch_.layers) {
    layers.push_back(std::visit(Overloaded{
                                    [](const AffineLayer& l) { return json{{"type", "affine"}, {"out", l.out}}; },
                                    [](const ConvLayer& l) {
                                      return json{{"type", "conv"},
                                                  {"out_channels", l.out_channels},
                                                  {"kernel", l.kernel},
                                                  {"stride", l.stride},
                                                  {"padding", l.padding}};
                                    },
                                    [](const ReluLayer&) { return json{{"type", "relu"}}; },
                                    [](const MaxPoolLayer& l) {
                                      return json{{"type", "maxpool"}, {"kernel", l.kernel}, {"stride", l.stride}};
                                    },
                                    [](const FlattenLayer&) { return json{{"type", "flatten"}}; },
                                },
                                layer));
  }
  json params = json::object();
  for (const auto& [name, tensor] : params_) {
    params[name] = {{"shape", tensor.shape()}, {"data", tensor.values()}};
  }
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"input_shape", arch_.input_shape},
          {"layers", layers},
          {"parameters", params}};
}

NeuralClassifier NeuralClassifier::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) throw std::runtime_error("unknown checkpoint format");
    if (doc.at("version").get<int>() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
    ArchitectureSpec arch;
    arch.input_shape = doc.at("input_shape").get<Shape>();
    for (const auto& layer : doc.at("layers")) {
      const std::string type = layer.at("type").get<std::string>();
      if (type == "affine") {
        arch.layers.emplace_back(AffineLayer{layer.at("out").get<std::size_t>()});
      } else if (type == "conv") {
        arch.layers.emplace_back(ConvLayer{layer.at("out_channels").get<std::size_t>(), layer.at("kernel").get<std::size_t>(),
                                           layer.at("stride").get<std::size_t>(), layer.at("padding").get<std::size_t>()});
      } else if (type == "relu") {
        arch.layers.emplace_back(ReluLayer{});
      } else if (type == "maxpool") {
        arch.layers.emplace_back(MaxPoolLayer{layer.at("kernel").get<std::size_t>(), layer.at("stride").get<std::size_t>()});
      } else if (type == "flatten") {
        arch.layers.emplace_back(FlattenLayer{});
      } else {
        throw std::runtime_error("unknown layer type '" + type + "'");
      }
    }
    TensorMap params;
    for (const auto& [name, entry] : doc.at("parameters").items()) {
      params.emplace(name, Tensor(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>()));
    }
    return NeuralClassifier(std::move(arch), std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  }
}

void NeuralClassifier::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << to_json().dump() << '\n';
}

NeuralClassifier NeuralClassifier::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

ArchitectureSpec mlp_architecture(const std::vector<std::size_t>& widths, std::size_t num_classes) {
  if (widths.empty()) throw std::invalid_argument("build_mlp: widths must not be empty");
  ArchitectureSpec arch;
  arch.input_shape = {widths.front()};
  for (std::size_t i = 1; i < widths.size(); ++i) {
    arch.layers.emplace_back(AffineLayer{widths[i]});
    arch.layers.emplace_back(ReluLayer{});
  }
  arch.layers.emplace_back(AffineLayer{num_classes});
  arch.validate();
  return arch;
}

NeuralClassifier build_mlp(const std::vector<std::size_t>& widths, std::size_t num_classes, std::uint64_t seed) {
  return NeuralClassifier(mlp_architecture(widths, num_classes), seed);
}

ArchitectureSpec small_cnn_analog_architecture(std::size_t channels, std::size_t height, std::size_t width,
                                               std::size_t num_classes) {
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) {
    throw std::invalid_argument("small CNN analog: image sides " + std::to_string(height) + "x" +
                                std::to_string(width) + " must be positive multiples of 4");
  }
  ArchitectureSpec arch;
  arch.input_shape = {channels, height, width};
  arch.layers = {ConvLayer{8, 3, 1, 1}, ReluLayer{}, MaxPoolLayer{2, 2}, ConvLayer{16, 3, 1, 1}, ReluLayer{},
                 MaxPoolLayer{2, 2},    FlattenLayer{}, AffineLayer{64}, ReluLayer{},        AffineLayer{num_classes}};
  arch.validate();
  return arch;
}

NeuralClassifier build_small_cnn_analog(std::size_t channels, std::size_t height, std::size_t width,
                                        std::size_t num_classes, std::uint64_t seed) {
  return NeuralClassifier(small_cnn_analog_architecture(channels, height, width, num_classes), seed);
}

ArchitectureSpec small_cnn_architecture(std::size_t channels, std::size_t height, std::size_t width,
                                        std::size_t num_classes) {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw std::invalid_argument("small CNN: image sides must be positive multiples of 8");
  }
  ArchitectureSpec arch;
  arch.input_shape = {channels, height, width};
  for (std::size_t out : {64, 128, 256}) {
    arch.layers.emplace_back(ConvLayer{out, 3, 1, 1});
    arch.layers.emplace_back(ReluLayer{});
    arch.layers.emplace_back(MaxPoolLayer{2, 2});
  }
  arch.layers.emplace_back(FlattenLayer{});
  arch.layers.emplace_back(AffineLayer{512});
  arch.layers.emplace_back(ReluLayer{});
  arch.layers.emplace_back(AffineLayer{num_classes});
  arch.validate();
  return arch;
}

}  // namespace mma
