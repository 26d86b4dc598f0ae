#include "owmmd/mlfmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace owmmd {

std::vector<bool> layer_inclusion(const RegularizerConfig& cfg, std::size_t num_layers) {
  require(!cfg.layer_mask.empty(), ErrorCode::InvalidSpec, "layer_mask must not be empty");
  std::vector<bool> included(num_layers, false);
  for (int k : cfg.layer_mask) {
    require(k >= 1 && static_cast<std::size_t>(k) <= num_layers, ErrorCode::InvalidSpec,
            "layer_mask entry " + std::to_string(k) + " outside 1.." + std::to_string(num_layers));
    included[static_cast<std::size_t>(k - 1)] = true;
  }
  return included;
}

Node normalize_weights(const Node& raw, const std::vector<bool>& included) {
  require(raw.cols() == 1 && raw.rows() >= 1, ErrorCode::DimensionMismatch,
          "raw weights must be a K x 1 column, got " + shape_string(raw.rows(), raw.cols()));
  require(static_cast<Eigen::Index>(included.size()) == raw.rows(), ErrorCode::DimensionMismatch,
          "mask length differs from weight count");
  const Tensor& w = raw.value();
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    if (included[static_cast<std::size_t>(k)]) top = std::max(top, w(k, 0));
  }
  require(std::isfinite(top), ErrorCode::InvalidSpec, "no layer included in the weight mask");
  Tensor value = Tensor::Zero(w.rows(), 1);
  double total = 0.0;
  for (Eigen::Index k = 0; k < w.rows(); ++k) {
    if (!included[static_cast<std::size_t>(k)]) continue;
    value(k, 0) = std::exp(w(k, 0) - top);
    total += value(k, 0);
  }
  value /= total;
  Tensor probs = value;
  return Node::make(std::move(value), {raw}, [probs = std::move(probs)](const Tensor& g, std::span<Node> p) {
    // Excluded entries have probability 0, so they receive no gradient.
    const double inner = g.cwiseProduct(probs).sum();
    Tensor d = (g.array() - inner).matrix().cwiseProduct(probs);
    p[0].accumulate(d);
  });
}

Tensor normalize_weights(const Tensor& raw) {
  return normalize_weights(Node::constant(raw), std::vector<bool>(static_cast<std::size_t>(raw.rows()), true))
      .value();
}

AdaptiveWeights::AdaptiveWeights(Tensor raw) : raw_(std::move(raw)) {
  require(raw_.cols() == 1 && raw_.rows() >= 1, ErrorCode::DimensionMismatch, "adaptive weights must be K x 1");
  require(raw_.allFinite(), ErrorCode::NumericError, "adaptive weights must be finite");
}

AdaptiveWeights AdaptiveWeights::uniform_init(std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor raw(static_cast<Eigen::Index>(k), 1);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) raw(i, 0) = dist(rng);
  return AdaptiveWeights(std::move(raw));
}

Tensor AdaptiveWeights::normalized(const std::vector<bool>& included) const {
  return normalize_weights(Node::constant(raw_), included).value();
}

Node AdaptiveWeights::bind() {
  bound_ = Node::variable(raw_);
  return bound_;
}

void AdaptiveWeights::gradient_step(double eta) {
  require(bound_.valid(), ErrorCode::MissingGradient, "adaptive weights were not bound for this step");
  require(eta > 0.0, ErrorCode::InvalidHyperParams, "learning rate must be positive");
  Tensor next = raw_ - eta * bound_.gradient();
  require(next.allFinite(), ErrorCode::NumericError, "adaptive weight update produced a non-finite value");
  raw_ = std::move(next);
  bound_ = Node();
}

std::vector<Node> layer_distances(const ModelParams& teacher, const BoundModel& student, const Tensor& x,
                                  const RegularizerConfig& cfg, BandwidthMemo* memo) {
  require(teacher.frozen(), ErrorCode::FrozenViolation, "teacher model must be frozen");
  const std::size_t k_layers = student.num_layers();
  require(teacher.num_layers() == k_layers, ErrorCode::DimensionMismatch,
          "teacher and student layer counts differ");
  const std::vector<bool> included = layer_inclusion(cfg, k_layers);
  if (cfg.distance == DistanceKind::mmd) {
    require(x.rows() >= 2, ErrorCode::BatchTooSmall, "MMD regulariser needs a batch of at least 2");
  }
  const std::vector<Node> t_feats = features(bind_constants(teacher), Node::constant(x));
  const std::vector<Node> s_feats = features(student, Node::constant(x));
  if (memo != nullptr && memo->per_layer.size() != k_layers) memo->per_layer.assign(k_layers, std::nullopt);

  std::vector<Node> out(k_layers);
  for (std::size_t k = 0; k < k_layers; ++k) {
    if (!included[k]) continue;
    switch (cfg.distance) {
      case DistanceKind::mmd: {
        ResolvedKernel<double> kernel;
        if (memo != nullptr && memo->per_layer[k]) {
          kernel = *memo->per_layer[k];
        } else {
          kernel = resolve_kernel(cfg.kernel, t_feats[k].value(), s_feats[k].value());
          if (memo != nullptr) memo->per_layer[k] = kernel;
        }
        out[k] = mmd_unbiased(kernel, t_feats[k], s_feats[k]);
        break;
      }
      case DistanceKind::l2: out[k] = l2_distance(t_feats[k], s_feats[k]); break;
      case DistanceKind::cosine: out[k] = cosine_distance(t_feats[k], s_feats[k]); break;
    }
  }
  return out;
}

Node reg_loss(const ModelParams& teacher, const BoundModel& student, const Node& raw_weights, const Tensor& x,
              const RegularizerConfig& cfg, BandwidthMemo* memo) {
  const std::size_t k_layers = student.num_layers();
  const std::vector<bool> included = layer_inclusion(cfg, k_layers);
  Node weights;
  if (cfg.adaptive) {
    require(raw_weights.valid() && raw_weights.rows() == static_cast<Eigen::Index>(k_layers),
            ErrorCode::DimensionMismatch, "adaptive weight count must equal the feature layer count");
    weights = normalize_weights(raw_weights, included);
  } else {
    // Fixed uniform weights over the mask.
    weights = normalize_weights(Node::constant(Tensor::Zero(static_cast<Eigen::Index>(k_layers), 1)), included);
  }
  const std::vector<Node> dists = layer_distances(teacher, student, x, cfg, memo);
  Node total;
  for (std::size_t k = 0; k < k_layers; ++k) {
    if (!included[k]) continue;
    Node term = mul(pick(weights, static_cast<Eigen::Index>(k), 0), dists[k]);
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

double reg_loss(const ModelParams& teacher, const ModelParams& student, const AdaptiveWeights& weights,
                const Tensor& x, const RegularizerConfig& cfg) {
  return reg_loss(teacher, bind_constants(student), Node::constant(weights.raw()), x, cfg).item();
}

}  // namespace owmmd
