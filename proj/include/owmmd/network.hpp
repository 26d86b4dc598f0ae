#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "owmmd/diff.hpp"

namespace owmmd {

enum class Activation { relu, identity };

struct LayerParams {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
  Activation activation = Activation::relu;

  [[nodiscard]] Eigen::Index in_dim() const { return weight.rows(); }
  [[nodiscard]] Eigen::Index out_dim() const { return weight.cols(); }
};

/// K fully connected feature layers followed by a linear head.
///
/// Parameters are addressed by a flat index in the order
/// W_1, b_1, ..., W_K, b_K, W_head, b_head. A frozen model rejects every
/// mutation and every request for gradient tracking.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(std::vector<LayerParams> layers, LayerParams head);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, zero bias.
  static ModelParams init(Eigen::Index input_dim, std::span<const Eigen::Index> widths,
                          Eigen::Index num_classes, std::mt19937_64& rng);

  [[nodiscard]] std::size_t num_layers() const { return layers_.size(); }
  [[nodiscard]] const LayerParams& layer(std::size_t k) const { return layers_.at(k); }
  [[nodiscard]] const LayerParams& head() const { return head_; }
  [[nodiscard]] Eigen::Index input_dim() const { return layers_.front().in_dim(); }
  [[nodiscard]] Eigen::Index num_classes() const { return head_.out_dim(); }
  [[nodiscard]] bool frozen() const { return frozen_; }

  [[nodiscard]] std::size_t parameter_count() const { return 2 * (layers_.size() + 1); }
  [[nodiscard]] const Tensor& parameter(std::size_t index) const;
  void set_parameter(std::size_t index, Tensor value);

  /// theta <- theta - eta * grad for every parameter, grads in flat order.
  void sgd_update(std::span<const Tensor> grads, double eta);

  /// Deep copy with frozen = true.
  [[nodiscard]] ModelParams snapshot() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  LayerParams& mutable_layer_for(std::size_t index);

  std::vector<LayerParams> layers_;
  LayerParams head_;
  bool frozen_ = false;
};

[[nodiscard]] inline ModelParams snapshot(const ModelParams& model) { return model.snapshot(); }

/// Parameters of a model lifted into graph nodes, in the flat index order.
struct BoundModel {
  std::vector<Node> params;
  std::vector<Activation> activations;  // K feature layers, then head

  [[nodiscard]] std::size_t num_layers() const { return activations.size() - 1; }
};

/// Leaf variables tracking gradients. Throws FrozenViolation on a frozen model.
BoundModel bind_variables(const ModelParams& model);
/// Detached constants; valid for frozen models.
BoundModel bind_constants(const ModelParams& model);

/// Z^1..Z^K, each the cumulative composition of the first k layers.
std::vector<Node> features(const BoundModel& model, const Node& x);
/// Applies the head to the last feature batch.
Node head_logits(const BoundModel& model, const Node& last_features);
Node logits(const BoundModel& model, const Node& x);

/// Batch mean of -sum_t y[t] log(yhat[t]) for one-hot y and probability rows yhat.
Node cross_entropy(const Node& y_onehot, const Node& yhat);
/// Cross-entropy of softmax(logits) against integer labels, via log-sum-exp.
Node softmax_cross_entropy(const Node& logits, std::span<const int> labels);

Tensor one_hot(std::span<const int> labels, Eigen::Index num_classes);

// Value-level forward passes; these never record a graph.
std::vector<Tensor> forward_features(const ModelParams& model, const Tensor& x);
Tensor logits(const ModelParams& model, const Tensor& x);
Tensor predict(const ModelParams& model, const Tensor& x);
Tensor softmax(const Tensor& logits);

/// Versioned binary checkpoint (shapes, activations, frozen flag and
/// row-major float64 data); load_model() reproduces the model bit for bit.
void save_model(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace owmmd
