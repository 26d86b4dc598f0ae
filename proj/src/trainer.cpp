#include "owmmd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace owmmd {

namespace {

enum RngStream : std::uint64_t { kInit = 0, kShuffle, kLogitReplay, kLabelReplay, kRegReplay, kReservoir };

std::mt19937_64 stream_rng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

bool regulariser_active(const TrainState& state, const HyperParams& hp) {
  return state.task_index > 1 && hp.gamma > 0.0;
}

}  // namespace

std::vector<std::string> validate(const HyperParams& hp) {
  std::vector<std::string> v;
  if (!finite_nonneg(hp.alpha)) v.emplace_back("hyper.alpha: must be >= 0");
  if (!finite_nonneg(hp.beta)) v.emplace_back("hyper.beta: must be >= 0");
  if (!finite_nonneg(hp.gamma)) v.emplace_back("hyper.gamma: must be >= 0");
  if (!(hp.eta > 0.0) || !std::isfinite(hp.eta)) v.emplace_back("hyper.eta: must be > 0");
  if (hp.batch_size < 2) v.emplace_back("hyper.batch_size: must be >= 2");
  if (hp.buffer_capacity < 1) v.emplace_back("hyper.buffer_capacity: must be >= 1");
  if (hp.epochs_per_task < 1) v.emplace_back("hyper.epochs_per_task: must be >= 1");
  return v;
}

TrainState TrainState::init(Eigen::Index input_dim, Eigen::Index num_classes, const ModelSpec& model,
                            const HyperParams& hp) {
  const auto problems = validate(hp);
  require(problems.empty(), ErrorCode::InvalidHyperParams, problems.empty() ? "" : problems.front());
  std::mt19937_64 init_rng = stream_rng(hp.seed, kInit);
  TrainState s;
  s.student = ModelParams::init(input_dim, model.feature_widths, num_classes, init_rng);
  s.weights = AdaptiveWeights::uniform_init(model.feature_widths.size(), init_rng);
  s.buffer = ReservoirBuffer(static_cast<std::size_t>(hp.buffer_capacity), stream_rng(hp.seed, kReservoir)());
  s.shuffle_rng = stream_rng(hp.seed, kShuffle);
  s.logit_replay_rng = stream_rng(hp.seed, kLogitReplay);
  s.label_replay_rng = stream_rng(hp.seed, kLabelReplay);
  s.reg_replay_rng = stream_rng(hp.seed, kRegReplay);
  return s;
}

StepTerms step_loss(const BoundModel& student, const Node& raw_weights, const ModelParams* teacher, const Tensor& x,
                    std::span<const int> y, const StepDraws& draws, const HyperParams& hp,
                    const RegularizerConfig& cfg, BandwidthMemo* memo) {
  const auto problems = validate(hp);
  require(problems.empty(), ErrorCode::InvalidHyperParams, problems.empty() ? "" : problems.front());

  StepTerms terms;
  const Node current_logits = logits(student, Node::constant(x));
  terms.batch_logits = current_logits.value();
  Node total = softmax_cross_entropy(current_logits, y);
  terms.ce = total.item();

  if (draws.logit_replay && hp.alpha > 0.0) {
    const ReplayBatch& rb = *draws.logit_replay;
    const Node replay_logits = logits(student, Node::constant(rb.x));
    // Batch mean of the squared Euclidean distance between logit rows.
    const Node mse = scale(sum(square(sub(Node::constant(rb.z), replay_logits))),
                           1.0 / static_cast<double>(rb.x.rows()));
    terms.logit_mse = mse.item();
    total = add(total, scale(mse, hp.alpha));
  }
  if (draws.label_replay && hp.beta > 0.0) {
    const ReplayBatch& rb = *draws.label_replay;
    const Node ce = softmax_cross_entropy(logits(student, Node::constant(rb.x)), rb.y);
    terms.replay_ce = ce.item();
    total = add(total, scale(ce, hp.beta));
  }
  if (draws.reg_inputs && hp.gamma > 0.0) {
    require(teacher != nullptr, ErrorCode::NoTeacher, "feature matching requires a teacher");
    const Node reg = reg_loss(*teacher, student, raw_weights, *draws.reg_inputs, cfg, memo);
    terms.reg = reg.item();
    total = add(total, scale(reg, hp.gamma));
  }
  terms.total = total;
  return terms;
}

StepDraws draw_replay(TrainState& state, const HyperParams& hp) {
  StepDraws draws;
  if (state.buffer.empty()) return draws;
  const auto b = static_cast<std::size_t>(hp.batch_size);
  if (hp.alpha > 0.0) draws.logit_replay = state.buffer.sample_batch(b, state.logit_replay_rng);
  if (hp.beta > 0.0) draws.label_replay = state.buffer.sample_batch(b, state.label_replay_rng);
  if (regulariser_active(state, hp)) draws.reg_inputs = state.buffer.sample_batch(b, state.reg_replay_rng).x;
  return draws;
}

StepTerms step_loss(TrainState& state, const Tensor& x, std::span<const int> y, const HyperParams& hp,
                    const RegularizerConfig& cfg) {
  const StepDraws draws = draw_replay(state, hp);
  const BoundModel student = bind_variables(state.student);
  const Node raw = state.weights.bind();
  return step_loss(student, raw, state.teacher ? &*state.teacher : nullptr, x, y, draws, hp, cfg);
}

std::vector<double> effective_weights(const AdaptiveWeights& weights, const RegularizerConfig& cfg) {
  const std::vector<bool> included = layer_inclusion(cfg, weights.size());
  const Tensor w = cfg.adaptive ? weights.normalized(included)
                                : normalize_weights(Node::constant(Tensor::Zero(weights.raw().rows(), 1)), included)
                                      .value();
  return {w.data(), w.data() + w.size()};
}

TrainState train_task(TrainState state, const TaskDataset& dataset, const HyperParams& hp,
                      const RegularizerConfig& cfg, const StepObserver& observer) {
  const auto problems = validate(hp);
  require(problems.empty(), ErrorCode::InvalidHyperParams, problems.empty() ? "" : problems.front());
  require(!dataset.train.empty(), ErrorCode::EmptyInput, "task has no training samples");
  require(state.task_index >= 1, ErrorCode::InvalidTask, "task_index must be >= 1");
  require(state.teacher.has_value() == (state.task_index > 1), ErrorCode::NoTeacher,
          "a teacher must exist exactly for tasks after the first");
  layer_inclusion(cfg, state.student.num_layers());

  const bool update_weights = regulariser_active(state, hp) && cfg.adaptive;
  const ModelParams* teacher = state.teacher ? &*state.teacher : nullptr;
  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto b = static_cast<std::size_t>(hp.batch_size);
  std::size_t step = 0;

  for (int epoch = 1; epoch <= hp.epochs_per_task; ++epoch) {
    std::shuffle(order.begin(), order.end(), state.shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += b) {
      const std::size_t end = std::min(order.size(), start + b);
      Tensor x(static_cast<Eigen::Index>(end - start), dataset.train.front().x.size());
      std::vector<int> y;
      y.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = dataset.train[order[i]];
        x.row(static_cast<Eigen::Index>(i - start)) = s.x.transpose();
        y.push_back(s.y);
      }

      const StepDraws draws = draw_replay(state, hp);
      const BoundModel student = bind_variables(state.student);
      const Node raw = update_weights ? state.weights.bind() : Node::constant(state.weights.raw());
      StepTerms terms = step_loss(student, raw, teacher, x, y, draws, hp, cfg);
      backward(terms.total);

      std::vector<Tensor> grads;
      grads.reserve(student.params.size());
      for (const Node& p : student.params) grads.push_back(p.gradient());
      state.student.sgd_update(grads, hp.eta);
      if (update_weights) state.weights.gradient_step(hp.eta);

      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = dataset.train[order[i]];
        state.buffer.offer(MemoryItem{s.x, s.y, terms.batch_logits.row(static_cast<Eigen::Index>(i - start)).transpose()});
      }
      if (observer) observer(StepEvent{state.task_index, epoch, step, state, terms});
      ++step;
    }
    state.trajectory.push_back(WeightRow{state.task_index, epoch, effective_weights(state.weights, cfg)});
  }
  return state;
}

StreamResult train_stream(const std::vector<TaskDataset>& tasks, const ModelSpec& model, const HyperParams& hp,
                          const RegularizerConfig& cfg, const StepObserver& observer) {
  require(!tasks.empty(), ErrorCode::EmptyInput, "no tasks to train on");
  require(!tasks.front().train.empty(), ErrorCode::EmptyInput, "first task has no training samples");
  const Eigen::Index dim = tasks.front().train.front().x.size();
  int max_class = 0;
  for (const TaskDataset& t : tasks) {
    for (const auto* split : {&t.train, &t.test}) {
      for (const Sample& s : *split) {
        require(s.x.size() == dim, ErrorCode::DimensionMismatch, "inconsistent input dimension across tasks");
        max_class = std::max(max_class, s.y);
      }
    }
    for (int c : t.class_set) max_class = std::max(max_class, c);
  }

  const std::size_t n = tasks.size();
  StreamResult result{TrainState::init(dim, max_class + 1, model, hp), AccuracyMatrix(n), AccuracyMatrix(n), {}};
  TrainState& state = result.state;
  for (std::size_t i = 0; i < n; ++i) {
    state.task_index = static_cast<int>(i) + 1;
    state = train_task(std::move(state), tasks[i], hp, cfg, observer);
    state.teacher = state.student.snapshot();

    const std::vector<TaskDataset> seen(tasks.begin(), tasks.begin() + static_cast<std::ptrdiff_t>(i + 1));
    std::vector<Tensor> out;
    for (const TaskDataset& t : seen) out.push_back(logits(state.student, stack_inputs(t.test)));
    result.class_il.set_row(i, evaluate_logits(out, seen, EvalMode::class_il));
    result.task_il.set_row(i, evaluate_logits(out, seen, EvalMode::task_il));
  }
  result.trajectory = state.trajectory;
  return result;
}

}  // namespace owmmd
