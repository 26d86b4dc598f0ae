#pragma once

// Multi-level feature matching between a frozen teacher and the live
// student, weighted per layer by softmax-normalised adaptive weights.

#include <optional>
#include <random>
#include <vector>

#include "owmmd/kernel_mmd.hpp"
#include "owmmd/network.hpp"

namespace owmmd {

enum class DistanceKind { mmd, l2, cosine };

struct RegularizerConfig {
  DistanceKind distance = DistanceKind::mmd;
  KernelSpec kernel = KernelSpec::rbf_mixture();
  bool adaptive = true;
  std::vector<int> layer_mask;  // 1-based layer indices

  static RegularizerConfig all_layers(std::size_t k) {
    RegularizerConfig cfg;
    for (std::size_t i = 1; i <= k; ++i) cfg.layer_mask.push_back(static_cast<int>(i));
    return cfg;
  }
};

/// Per-layer inclusion flags; throws InvalidSpec on an empty or out-of-range mask.
std::vector<bool> layer_inclusion(const RegularizerConfig& cfg, std::size_t num_layers);

/// Softmax over the included entries of a K x 1 column; excluded entries get 0.
Node normalize_weights(const Node& raw, const std::vector<bool>& included);
Tensor normalize_weights(const Tensor& raw);

class AdaptiveWeights {
 public:
  AdaptiveWeights() = default;
  explicit AdaptiveWeights(Tensor raw);
  /// Raw weights drawn i.i.d. from Uniform[0, 1).
  static AdaptiveWeights uniform_init(std::size_t k, std::mt19937_64& rng);

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(raw_.rows()); }
  [[nodiscard]] const Tensor& raw() const { return raw_; }
  [[nodiscard]] Tensor normalized() const { return normalize_weights(raw_); }
  [[nodiscard]] Tensor normalized(const std::vector<bool>& included) const;

  /// Lifts the raw weights into a leaf variable for the current step.
  Node bind();
  /// The node from the last bind(); invalid when unbound.
  [[nodiscard]] const Node& bound() const { return bound_; }
  void unbind() { bound_ = Node(); }

  /// raw <- raw - eta * d(loss)/d(raw). Requires a bound node whose graph
  /// has been through backward(); an unreached node contributes zero.
  void gradient_step(double eta);

 private:
  Tensor raw_;
  Node bound_;
};

inline void weight_gradient_step(AdaptiveWeights& weights, double eta) { weights.gradient_step(eta); }

/// Bandwidths resolved for each layer at the first evaluation of a step.
/// Re-evaluations with the same memo reuse them, so the kernel is a
/// constant of the differentiated function.
struct BandwidthMemo {
  std::vector<std::optional<ResolvedKernel<double>>> per_layer;
};

/// Per-layer distances d_k between teacher and student features of `x`
/// (entries outside the mask are invalid nodes).
std::vector<Node> layer_distances(const ModelParams& teacher, const BoundModel& student, const Tensor& x,
                                  const RegularizerConfig& cfg, BandwidthMemo* memo = nullptr);

/// sum_k w~_k d_k over the masked layers. `raw_weights` is the K x 1 raw
/// weight node (used only when cfg.adaptive).
Node reg_loss(const ModelParams& teacher, const BoundModel& student, const Node& raw_weights,
              const Tensor& x, const RegularizerConfig& cfg, BandwidthMemo* memo = nullptr);

/// Value-level convenience: binds the student and weights as constants.
double reg_loss(const ModelParams& teacher, const ModelParams& student, const AdaptiveWeights& weights,
                const Tensor& x, const RegularizerConfig& cfg);

}  // namespace owmmd
