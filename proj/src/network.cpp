#include "bplab/network.hpp"

#include <cmath>
#include <set>

#include "bplab/io.hpp"
#include "bplab/rng.hpp"

namespace bplab {
namespace {

using nlohmann::json;

const std::set<std::string>& known_types() {
  static const std::set<std::string> types = {
      "conv",      "relu",     "sigmoid",     "flatten",      "global_avg_pool", "max_dense",
      "subsample", "maxpool",  "avgpool",     "blurpool",     "maxblurpool",     "convblurpool",
      "blur_upsample", "linear"};
  return types;
}

LayerSpec layer_from_json(const json& j) {
  static const std::set<std::string> keys = {"type",   "out_channels", "kernel", "stride", "factor",
                                             "out_features", "filter", "pad",    "blur_first"};
  for (const auto& [key, _] : j.items()) {
    if (!keys.contains(key)) throw BuildError("unknown layer field: " + key);
  }
  LayerSpec l;
  l.type = j.at("type").get<std::string>();
  if (!known_types().contains(l.type)) throw BuildError("unknown layer type: " + l.type);
  l.out_channels = j.value("out_channels", l.out_channels);
  l.kernel = j.value("kernel", l.kernel);
  l.stride = j.value("stride", l.stride);
  l.factor = j.value("factor", l.factor);
  l.out_features = j.value("out_features", l.out_features);
  l.filter = j.value("filter", l.filter);
  l.pad = padding_from_string(j.value("pad", std::string("circular")));
  l.blur_first = j.value("blur_first", false);
  return l;
}

json layer_to_json(const LayerSpec& l) {
  json j;
  j["type"] = l.type;
  const auto& t = l.type;
  const bool padded = t == "conv" || t == "max_dense" || t == "subsample" || t == "maxpool" || t == "avgpool" ||
                      t == "blurpool" || t == "maxblurpool" || t == "convblurpool" || t == "blur_upsample";
  if (t == "conv" || t == "convblurpool") j["out_channels"] = l.out_channels;
  if (t == "conv" || t == "convblurpool" || t == "max_dense" || t == "maxpool" || t == "avgpool" ||
      t == "maxblurpool")
    j["kernel"] = l.kernel;
  if (t == "conv" || t == "convblurpool" || t == "subsample" || t == "maxpool" || t == "avgpool" ||
      t == "blurpool" || t == "maxblurpool")
    j["stride"] = l.stride;
  if (t == "blurpool" || t == "maxblurpool" || t == "convblurpool" || t == "blur_upsample") j["filter"] = l.filter;
  if (t == "blur_upsample") j["factor"] = l.factor;
  if (t == "linear") j["out_features"] = l.out_features;
  if (t == "maxblurpool" && l.blur_first) j["blur_first"] = true;
  if (padded) j["pad"] = to_string(l.pad);
  return j;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& l, const Shape& in) {
  const auto& t = l.type;
  if (t == "conv") {
    if (in.size() != 4) throw ShapeError("conv expects [N,C,H,W] input");
    return std::make_unique<Conv2dLayer>(in[1], l.out_channels, l.kernel, l.stride, l.pad);
  }
  if (t == "relu") return std::make_unique<ReluLayer>();
  if (t == "sigmoid") return std::make_unique<SigmoidLayer>();
  if (t == "flatten") return std::make_unique<FlattenLayer>();
  if (t == "global_avg_pool") return std::make_unique<GlobalAvgPoolLayer>();
  if (t == "max_dense") return std::make_unique<MaxDenseLayer>(l.kernel, l.pad);
  if (t == "subsample") return std::make_unique<SubsampleLayer>(l.stride, l.pad);
  if (t == "maxpool") return std::make_unique<MaxPoolLayer>(l.kernel, l.stride, l.pad);
  if (t == "avgpool") return std::make_unique<AvgPoolLayer>(l.kernel, l.stride, l.pad);
  if (t == "blurpool") return std::make_unique<BlurPoolLayer>(make_kernel(l.filter), l.stride, l.pad);
  if (t == "maxblurpool")
    return std::make_unique<MaxBlurPoolLayer>(l.kernel, make_kernel(l.filter), l.stride, l.pad, l.blur_first);
  if (t == "convblurpool") {
    if (in.size() != 4) throw ShapeError("convblurpool expects [N,C,H,W] input");
    return std::make_unique<ConvBlurPoolLayer>(in[1], l.out_channels, l.kernel, make_kernel(l.filter), l.stride,
                                               l.pad);
  }
  if (t == "blur_upsample") return std::make_unique<BlurUpsampleLayer>(make_kernel(l.filter), l.factor, l.pad);
  if (t == "linear") {
    if (in.size() != 2) throw ShapeError("linear expects [N,F] input");
    return std::make_unique<LinearLayer>(in[1], l.out_features);
  }
  throw BuildError("unknown layer type: " + t);
}

bool is_conv_like(const Layer& layer) { return layer.kind() == "conv" || layer.kind() == "convblurpool"; }

}  // namespace

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  try {
    s.name = j.value("name", std::string());
    s.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
    s.num_classes = j.value("num_classes", std::size_t{0});
    s.loss = j.value("loss", s.num_classes ? std::string("softmax_xent") : std::string("none"));
  } catch (const json::exception& e) {
    throw BuildError(std::string("invalid network spec: ") + e.what());
  } catch (const ArgumentError& e) {
    throw BuildError(std::string("invalid network spec: ") + e.what());
  }
  if (s.input_shape.size() != 3) throw BuildError("input_shape must be [C,H,W]");
  if (s.loss != "softmax_xent" && s.loss != "none") throw BuildError("unknown loss: " + s.loss);
  if (s.num_classes > 0 && s.loss != "softmax_xent") throw BuildError("classifier head requires softmax_xent loss");
  return s;
}

json spec_to_json(const NetworkSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["input_shape"] = spec.input_shape;
  j["layers"] = json::array();
  for (const auto& l : spec.layers) j["layers"].push_back(layer_to_json(l));
  j["num_classes"] = spec.num_classes;
  j["loss"] = spec.num_classes ? spec.loss : std::string("none");
  return j;
}

NetworkSpec load_spec(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw BuildError("cannot parse spec " + path + ": " + e.what());
  }
  return spec_from_json(j);
}

std::string spec_hash(const NetworkSpec& spec) { return io::sha256_hex(spec_to_json(spec).dump()); }

Network Network::build(const NetworkSpec& spec) {
  Network net;
  net.spec_ = spec;
  if (spec.input_shape.size() != 3) throw BuildError("input_shape must be [C,H,W]");
  Shape shape{1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    try {
      auto layer = make_layer(l, shape);
      shape = layer->output_shape(shape);
      net.layers_.push_back(std::move(layer));
      net.shapes_.push_back(shape);
    } catch (const std::invalid_argument& e) {
      throw BuildError("layer " + std::to_string(i) + " (" + l.type + "): " + e.what());
    }
  }
  if (spec.num_classes > 0) {
    if (shape.size() != 2) {
      throw BuildError("classifier head needs a [N,F] feature, last layer outputs " + shape_to_string(shape));
    }
    net.layers_.push_back(std::make_unique<LinearLayer>(shape[1], spec.num_classes));
    net.shapes_.push_back({1, spec.num_classes});
  }
  return net;
}

Network::Network(const Network& other) : spec_(other.spec_), shapes_(other.shapes_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::size_t Network::cumulative_stride(std::size_t i) const {
  const Shape& s = shapes_.at(i);
  if (s.size() != 4) return 0;
  const std::size_t H = spec_.input_shape[1], W = spec_.input_shape[2];
  if (H % s[2] != 0 || W % s[3] != 0 || H / s[2] != W / s[3]) return 0;
  return H / s[2];
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    for (const auto& p : l->params()) n += p.size();
  return n;
}

std::string Network::checksum() const {
  std::string bytes;
  for (const auto& l : layers_)
    for (const auto& p : l->params()) bytes += encode_tensor(p);
  return io::sha256_hex(bytes);
}

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 3) return x.reshaped({1, x.extent(0), x.extent(1), x.extent(2)});
  return x;
}

Tensor Network::infer(const Tensor& x, std::size_t upto) const {
  Tensor h = as_batch(x);
  const Shape expected{spec_.input_shape[0], spec_.input_shape[1], spec_.input_shape[2]};
  if (h.rank() != 4 || Shape(h.shape().begin() + 1, h.shape().end()) != expected) {
    throw ShapeError("network input must be [N," + shape_to_string(expected).substr(1) + ", got " +
                     shape_to_string(x.shape()));
  }
  if (upto > layers_.size()) throw BoundsError("layer index out of range");
  for (std::size_t i = 0; i < upto; ++i) h = layers_[i]->infer(h);
  return h;
}

Network build(const NetworkSpec& spec) { return Network::build(spec); }

Network init_params(Network net, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    Layer& layer = net.mutable_layer(i);
    if (layer.params().empty()) continue;
    auto& params = layer.mutable_params();
    Tensor& w = params[0];
    const std::size_t fan_in = w.size() / w.extent(0);
    const double gain = is_conv_like(layer) ? 6.0 : 3.0;
    const double bound = std::sqrt(gain / static_cast<double>(fan_in));
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    for (double& v : params[1].data()) v = 0.0;
  }
  return net;
}

ForwardAll forward_all(const Network& net, const Tensor& x) {
  ForwardAll out;
  Tensor h = net.infer(x, 0);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    h = net.layer(i).infer(h);
    if (i < net.num_feature_layers()) out.features.push_back(h);
  }
  out.logits = h;
  if (net.has_head()) out.probabilities = softmax(h);
  return out;
}

int argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return static_cast<int>(best);
}

std::vector<int> predict(const Network& net, const Tensor& x) {
  if (!net.has_head()) throw ArgumentError("predict needs a classifier network");
  const Tensor logits = net.infer(x);
  const std::size_t K = logits.extent(1);
  std::vector<int> out(logits.extent(0));
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = argmax_row(logits.data().subspan(n * K, K));
  return out;
}

LossAndGrads loss_and_gradients(const Network& net, const Tensor& x, std::span<const int> labels) {
  if (!net.has_head()) throw ArgumentError("loss_and_gradients needs a classifier network");
  std::vector<LayerCache> caches;
  caches.reserve(net.num_layers());
  Tensor h = net.infer(x, 0);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    auto r = net.layer(i).forward(h);
    caches.push_back(std::move(r.cache));
    h = std::move(r.output);
  }
  XentResult xent = softmax_xent(h, labels);
  LossAndGrads out;
  out.loss = xent.loss;
  out.probabilities = std::move(xent.probabilities);
  out.grads.resize(net.num_layers());
  Tensor g = std::move(xent.logits_grad);
  for (std::size_t i = net.num_layers(); i-- > 0;) {
    auto b = net.layer(i).backward(caches[i], g);
    out.grads[i] = std::move(b.param_grads);
    g = std::move(b.input_grad);
  }
  return out;
}

void save_checkpoint(const Network& net, const std::string& path) {
  std::string payload;
  json tensors = json::array();
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const auto params = net.layer(i).params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      payload += encode_tensor(params[p]);
      tensors.push_back({{"layer", i}, {"index", p}, {"shape", params[p].shape()}});
    }
  }
  json side;
  side["format"] = "bplab-checkpoint/1";
  side["spec"] = spec_to_json(net.spec());
  side["spec_hash"] = spec_hash(net.spec());
  side["tensors"] = tensors;
  side["payload_sha256"] = io::sha256_hex(payload);
  io::write_file_atomic(path, payload);
  io::write_file_atomic(path + ".json", side.dump(2) + "\n");
}

Network load_checkpoint(const std::string& path) {
  json side;
  try {
    side = json::parse(io::read_file(path + ".json"));
  } catch (const json::exception& e) {
    throw FormatError("corrupt checkpoint sidecar: " + std::string(e.what()));
  }
  if (side.value("format", std::string()) != "bplab-checkpoint/1") throw FormatError("unknown checkpoint format");
  const NetworkSpec spec = spec_from_json(side.at("spec"));
  if (spec_hash(spec) != side.at("spec_hash").get<std::string>()) {
    throw FormatError("checkpoint sidecar spec does not match its recorded hash");
  }
  const std::string payload = io::read_file(path);
  if (io::sha256_hex(payload) != side.at("payload_sha256").get<std::string>()) {
    throw FormatError("checkpoint payload hash mismatch");
  }
  Network net = Network::build(spec);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    if (net.layer(i).params().empty()) continue;
    auto& params = net.mutable_layer(i).mutable_params();
    for (auto& p : params) {
      Tensor t = decode_tensor(payload, pos);
      if (t.shape() != p.shape()) {
        throw FormatError("checkpoint tensor shape " + shape_to_string(t.shape()) + " does not match layer " +
                          std::to_string(i) + " parameter " + shape_to_string(p.shape()));
      }
      p = std::move(t);
    }
  }
  if (pos != payload.size()) throw FormatError("trailing bytes in checkpoint payload");
  return net;
}

Network load_checkpoint(const std::string& path, const NetworkSpec& expected) {
  Network net = load_checkpoint(path);
  if (spec_hash(net.spec()) != spec_hash(expected)) {
    throw FormatError("checkpoint spec hash " + spec_hash(net.spec()) + " does not match expected " +
                      spec_hash(expected));
  }
  return net;
}

}  // namespace bplab
