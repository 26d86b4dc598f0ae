#include "owmmd/network.hpp"

#include <cmath>

#include "binary_io.hpp"

namespace owmmd {

ModelParams::ModelParams(std::vector<LayerParams> layers, LayerParams head)
    : layers_(std::move(layers)), head_(std::move(head)) {
  require(!layers_.empty(), ErrorCode::InvalidSpec, "model needs at least one feature layer");
  require(head_.activation == Activation::identity, ErrorCode::InvalidSpec,
          "head activation must be identity");
  Eigen::Index width = layers_.front().in_dim();
  auto check = [&](const LayerParams& l, const std::string& name) {
    require(l.in_dim() == width, ErrorCode::DimensionMismatch,
            name + " expects input " + std::to_string(l.in_dim()) + ", got " + std::to_string(width));
    require(l.bias.rows() == 1 && l.bias.cols() == l.out_dim(), ErrorCode::DimensionMismatch,
            name + " bias shape " + shape_string(l.bias.rows(), l.bias.cols()));
    width = l.out_dim();
  };
  for (std::size_t k = 0; k < layers_.size(); ++k) check(layers_[k], "layer " + std::to_string(k + 1));
  check(head_, "head");
}

ModelParams ModelParams::init(Eigen::Index input_dim, std::span<const Eigen::Index> widths,
                              Eigen::Index num_classes, std::mt19937_64& rng) {
  require(!widths.empty(), ErrorCode::InvalidSpec, "model needs at least one feature layer");
  auto make = [&](Eigen::Index in, Eigen::Index out, Activation act) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    LayerParams l{Tensor(in, out), Tensor::Zero(1, out), act};
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(rng);
    return l;
  };
  std::vector<LayerParams> layers;
  Eigen::Index in = input_dim;
  for (Eigen::Index w : widths) {
    layers.push_back(make(in, w, Activation::relu));
    in = w;
  }
  LayerParams head = make(in, num_classes, Activation::identity);
  return ModelParams(std::move(layers), std::move(head));
}

const Tensor& ModelParams::parameter(std::size_t index) const {
  require(index < parameter_count(), ErrorCode::DimensionMismatch,
          "parameter index " + std::to_string(index));
  const std::size_t layer = index / 2;
  const LayerParams& l = layer < layers_.size() ? layers_[layer] : head_;
  return index % 2 == 0 ? l.weight : l.bias;
}

LayerParams& ModelParams::mutable_layer_for(std::size_t index) {
  require(!frozen_, ErrorCode::FrozenViolation, "attempt to mutate a frozen model");
  require(index < parameter_count(), ErrorCode::DimensionMismatch,
          "parameter index " + std::to_string(index));
  const std::size_t layer = index / 2;
  return layer < layers_.size() ? layers_[layer] : head_;
}

void ModelParams::set_parameter(std::size_t index, Tensor value) {
  LayerParams& l = mutable_layer_for(index);
  Tensor& slot = index % 2 == 0 ? l.weight : l.bias;
  require(slot.rows() == value.rows() && slot.cols() == value.cols(), ErrorCode::DimensionMismatch,
          "set_parameter shape " + shape_string(value.rows(), value.cols()));
  slot = std::move(value);
}

void ModelParams::sgd_update(std::span<const Tensor> grads, double eta) {
  require(grads.size() == parameter_count(), ErrorCode::DimensionMismatch,
          "expected one gradient per parameter");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    LayerParams& l = mutable_layer_for(i);
    Tensor& slot = i % 2 == 0 ? l.weight : l.bias;
    require(slot.rows() == grads[i].rows() && slot.cols() == grads[i].cols(),
            ErrorCode::DimensionMismatch, "gradient shape mismatch at " + std::to_string(i));
    slot -= eta * grads[i];
  }
}

ModelParams ModelParams::snapshot() const {
  ModelParams copy = *this;
  copy.frozen_ = true;
  return copy;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.parameter_count() != b.parameter_count()) return false;
  for (std::size_t i = 0; i < a.parameter_count(); ++i) {
    const Tensor& x = a.parameter(i);
    const Tensor& y = b.parameter(i);
    if (x.rows() != y.rows() || x.cols() != y.cols() || x != y) return false;
  }
  for (std::size_t k = 0; k < a.num_layers(); ++k) {
    if (a.layer(k).activation != b.layer(k).activation) return false;
  }
  return true;
}

namespace {

BoundModel bind(const ModelParams& model, bool track) {
  BoundModel out;
  out.params.reserve(model.parameter_count());
  for (std::size_t i = 0; i < model.parameter_count(); ++i) {
    out.params.push_back(track ? Node::variable(model.parameter(i)) : Node::constant(model.parameter(i)));
  }
  for (std::size_t k = 0; k < model.num_layers(); ++k) out.activations.push_back(model.layer(k).activation);
  out.activations.push_back(model.head().activation);
  return out;
}

Node apply_layer(const BoundModel& model, std::size_t layer, const Node& input) {
  Node pre = add_bias(matmul(input, model.params[2 * layer]), model.params[2 * layer + 1]);
  return model.activations[layer] == Activation::relu ? relu(pre) : pre;
}

}  // namespace

BoundModel bind_variables(const ModelParams& model) {
  require(!model.frozen(), ErrorCode::FrozenViolation, "gradient tracking requested on a frozen model");
  return bind(model, true);
}

BoundModel bind_constants(const ModelParams& model) { return bind(model, false); }

std::vector<Node> features(const BoundModel& model, const Node& x) {
  require(x.rows() >= 1, ErrorCode::DimensionMismatch, "empty input batch");
  require(x.cols() == model.params[0].rows(), ErrorCode::DimensionMismatch,
          "input width " + std::to_string(x.cols()) + ", model expects " +
              std::to_string(model.params[0].rows()));
  std::vector<Node> out;
  out.reserve(model.num_layers());
  Node h = x;
  for (std::size_t k = 0; k < model.num_layers(); ++k) {
    h = apply_layer(model, k, h);
    out.push_back(h);
  }
  return out;
}

Node head_logits(const BoundModel& model, const Node& last_features) {
  return apply_layer(model, model.num_layers(), last_features);
}

Node logits(const BoundModel& model, const Node& x) { return head_logits(model, features(model, x).back()); }

Node cross_entropy(const Node& y_onehot, const Node& yhat) {
  require(y_onehot.rows() == yhat.rows() && y_onehot.cols() == yhat.cols(), ErrorCode::DimensionMismatch,
          "cross_entropy: " + shape_string(y_onehot.rows(), y_onehot.cols()) + " vs " +
              shape_string(yhat.rows(), yhat.cols()));
  const Tensor& y = y_onehot.value();
  const Tensor& p = yhat.value();
  const double inv_b = 1.0 / static_cast<double>(y.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y.data()[i] == 0.0) continue;
    require(p.data()[i] > 0.0, ErrorCode::DomainError, "cross_entropy: predicted probability 0 on a used entry");
    total -= y.data()[i] * std::log(p.data()[i]);
  }
  Tensor value(1, 1);
  value(0, 0) = total * inv_b;
  return Node::make(std::move(value), {y_onehot, yhat}, [inv_b](const Tensor& g, std::span<Node> par) {
    const Tensor& yv = par[0].value();
    const Tensor& pv = par[1].value();
    if (par[1].requires_grad()) {
      Tensor d = Tensor::Zero(pv.rows(), pv.cols());
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (yv.data()[i] != 0.0) d.data()[i] = -g(0, 0) * inv_b * yv.data()[i] / pv.data()[i];
      }
      par[1].accumulate(d);
    }
    if (par[0].requires_grad()) {
      Tensor d = Tensor::Zero(yv.rows(), yv.cols());
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (pv.data()[i] > 0.0) d.data()[i] = -g(0, 0) * inv_b * std::log(pv.data()[i]);
      }
      par[0].accumulate(d);
    }
  });
}

Node softmax_cross_entropy(const Node& logits, std::span<const int> labels) {
  const Eigen::Index b = logits.rows();
  require(static_cast<Eigen::Index>(labels.size()) == b && b >= 1, ErrorCode::DimensionMismatch,
          "softmax_cross_entropy: one label per row required");
  Tensor probs = softmax(logits.value());
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  std::vector<int> ys(labels.begin(), labels.end());
  for (Eigen::Index r = 0; r < b; ++r) {
    const int y = ys[static_cast<std::size_t>(r)];
    require(y >= 0 && y < logits.cols(), ErrorCode::DimensionMismatch, "label " + std::to_string(y) + " out of range");
    const auto row = logits.value().row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(y);
  }
  Tensor value(1, 1);
  value(0, 0) = total * inv_b;
  return Node::make(std::move(value), {logits},
                    [probs = std::move(probs), ys = std::move(ys), inv_b](const Tensor& g, std::span<Node> par) {
                      Tensor d = probs;
                      for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Eigen::Index>(r), ys[r]) -= 1.0;
                      par[0].accumulate(d * (g(0, 0) * inv_b));
                    });
}

Tensor one_hot(std::span<const int> labels, Eigen::Index num_classes) {
  Tensor out = Tensor::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    require(labels[r] >= 0 && labels[r] < num_classes, ErrorCode::DimensionMismatch,
            "label " + std::to_string(labels[r]) + " out of range");
    out(static_cast<Eigen::Index>(r), labels[r]) = 1.0;
  }
  return out;
}

std::vector<Tensor> forward_features(const ModelParams& model, const Tensor& x) {
  const BoundModel bound = bind_constants(model);
  std::vector<Tensor> out;
  for (const Node& z : features(bound, Node::constant(x))) out.push_back(z.value());
  return out;
}

Tensor logits(const ModelParams& model, const Tensor& x) {
  return logits(bind_constants(model), Node::constant(x)).value();
}

Tensor softmax(const Tensor& logits) { return softmax_rows(Node::constant(logits)).value(); }

Tensor predict(const ModelParams& model, const Tensor& x) { return softmax(logits(model, x)); }

namespace {
constexpr std::string_view kModelMagic = "OWMM";
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(const ModelParams& model, const std::filesystem::path& path) {
  binary::Writer w(path);
  w.magic(kModelMagic, kModelVersion);
  w.u32(model.frozen() ? 1 : 0);
  w.u64(model.num_layers());
  auto layer = [&](const LayerParams& l) {
    w.u32(l.activation == Activation::relu ? 0 : 1);
    w.tensor(l.weight);
    w.tensor(l.bias);
  };
  for (std::size_t k = 0; k < model.num_layers(); ++k) layer(model.layer(k));
  layer(model.head());
  w.finish();
}

ModelParams load_model(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic(kModelMagic, kModelVersion);
  const bool frozen = r.u32() != 0;
  const std::uint64_t k = r.u64();
  require(k >= 1 && k < 4096, ErrorCode::IoError, path.string() + ": bad layer count");
  auto layer = [&] {
    const std::uint32_t act = r.u32();
    require(act <= 1, ErrorCode::IoError, path.string() + ": bad activation tag");
    LayerParams l;
    l.activation = act == 0 ? Activation::relu : Activation::identity;
    l.weight = r.tensor();
    l.bias = r.tensor();
    return l;
  };
  std::vector<LayerParams> layers;
  for (std::uint64_t i = 0; i < k; ++i) layers.push_back(layer());
  LayerParams head = layer();
  r.expect_end();
  ModelParams model(std::move(layers), std::move(head));
  return frozen ? model.snapshot() : model;
}

}  // namespace owmmd
