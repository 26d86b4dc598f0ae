#pragma once

// The continual training loop: composite replay + feature-matching loss,
// plain SGD on the student and the adaptive layer weights, reservoir
// population and per-task evaluation.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "owmmd/metrics.hpp"
#include "owmmd/mlfmm.hpp"
#include "owmmd/replay.hpp"
#include "owmmd/taskstream.hpp"

namespace owmmd {

struct HyperParams {
  double alpha = 0.1;  // logit replay
  double beta = 0.5;   // label replay
  double gamma = 0.3;  // feature matching
  double eta = 0.03;
  int batch_size = 64;
  int buffer_capacity = 200;
  int epochs_per_task = 50;
  std::uint64_t seed = 0;
};

std::vector<std::string> validate(const HyperParams& hp);

struct ModelSpec {
  std::vector<Eigen::Index> feature_widths{64, 64, 64, 64, 64};
};

/// Normalised layer weights at the end of an epoch.
struct WeightRow {
  int task = 0;   // 1-based
  int epoch = 0;  // 1-based
  std::vector<double> weights;
};

struct TrainState {
  ModelParams student;
  std::optional<ModelParams> teacher;
  AdaptiveWeights weights;
  ReservoirBuffer buffer;
  int task_index = 0;  // 1-based index of the task being (or last) trained

  // Independent streams so that switching a loss term off does not shift
  // the draws of the others.
  std::mt19937_64 shuffle_rng;
  std::mt19937_64 logit_replay_rng;
  std::mt19937_64 label_replay_rng;
  std::mt19937_64 reg_replay_rng;

  std::vector<WeightRow> trajectory;

  static TrainState init(Eigen::Index input_dim, Eigen::Index num_classes, const ModelSpec& model,
                         const HyperParams& hp);
};

/// Buffer draws feeding one step; an absent draw switches its term off.
struct StepDraws {
  std::optional<ReplayBatch> logit_replay;
  std::optional<ReplayBatch> label_replay;
  std::optional<Tensor> reg_inputs;
};

struct StepTerms {
  Node total;
  double ce = 0.0;
  double logit_mse = 0.0;
  double replay_ce = 0.0;
  double reg = 0.0;
  Tensor batch_logits;  // H(x) of the current batch, before any update
};

/// L_s(y, F(x)) + alpha * mean ||z' - H(x')||^2 + beta * L_s(y', F(x''))
///   + gamma * L'_r(x''') with the primed batches taken from `draws`.
/// The regulariser term needs `teacher`; `raw_weights` is only read when
/// cfg.adaptive.
StepTerms step_loss(const BoundModel& student, const Node& raw_weights, const ModelParams* teacher, const Tensor& x,
                    std::span<const int> y, const StepDraws& draws, const HyperParams& hp,
                    const RegularizerConfig& cfg, BandwidthMemo* memo = nullptr);

/// Draws the buffer batches the state's task index and coefficients call for.
StepDraws draw_replay(TrainState& state, const HyperParams& hp);

/// Convenience form: draws from the buffer and binds the student as variables.
StepTerms step_loss(TrainState& state, const Tensor& x, std::span<const int> y, const HyperParams& hp,
                    const RegularizerConfig& cfg);

struct StepEvent {
  int task = 0;
  int epoch = 0;
  std::size_t step = 0;
  const TrainState& state;
  const StepTerms& terms;
};
using StepObserver = std::function<void(const StepEvent&)>;

/// Runs epochs_per_task passes over `dataset.train` for task state.task_index.
TrainState train_task(TrainState state, const TaskDataset& dataset, const HyperParams& hp,
                      const RegularizerConfig& cfg, const StepObserver& observer = {});

struct StreamResult {
  TrainState state;
  AccuracyMatrix class_il;
  AccuracyMatrix task_il;
  std::vector<WeightRow> trajectory;
};

StreamResult train_stream(const std::vector<TaskDataset>& tasks, const ModelSpec& model, const HyperParams& hp,
                          const RegularizerConfig& cfg, const StepObserver& observer = {});

/// Layer weights as they enter the regulariser: softmax over the mask when
/// adaptive, uniform over the mask otherwise.
std::vector<double> effective_weights(const AdaptiveWeights& weights, const RegularizerConfig& cfg);

}  // namespace owmmd
