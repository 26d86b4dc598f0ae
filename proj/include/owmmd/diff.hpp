#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A BasicNode is a shared handle to a value plus the rule that pushes its
// gradient back into its parents. Graphs are built fresh for every
// evaluation; nodes whose inputs carry no gradient are created detached, so
// evaluating a frozen model through the same ops records nothing.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "owmmd/error.hpp"

namespace owmmd {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Tensor = MatrixX<double>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <typename Scalar>
class BasicNode {
 public:
  using Matrix = MatrixX<Scalar>;
  /// Receives the gradient flowing into this node and the parent handles.
  using BackwardFn = std::function<void(const Matrix& upstream, std::span<BasicNode> parents)>;

  BasicNode() = default;

  static BasicNode constant(Matrix value) { return BasicNode(std::move(value), false); }
  static BasicNode variable(Matrix value) { return BasicNode(std::move(value), true); }
  static BasicNode scalar(Scalar value) {
    Matrix m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
  }

  /// Creates an op node. If no parent tracks gradients the result is a
  /// detached constant and `backward` is dropped.
  static BasicNode make(Matrix value, std::vector<BasicNode> parents, BackwardFn backward) {
    if (!value.allFinite()) {
      throw Error(ErrorCode::NumericError, "non-finite value produced by op");
    }
    const bool tracked = std::any_of(parents.begin(), parents.end(),
                                     [](const BasicNode& p) { return p.requires_grad(); });
    BasicNode node(std::move(value), tracked);
    if (tracked) {
      node.state_->parents = std::move(parents);
      node.state_->backward = std::move(backward);
    }
    return node;
  }

  [[nodiscard]] bool valid() const noexcept { return state_ != nullptr; }
  [[nodiscard]] const Matrix& value() const { return state_->value; }
  [[nodiscard]] Eigen::Index rows() const { return state_->value.rows(); }
  [[nodiscard]] Eigen::Index cols() const { return state_->value.cols(); }
  [[nodiscard]] bool requires_grad() const { return state_->requires_grad; }
  [[nodiscard]] bool is_scalar() const { return rows() == 1 && cols() == 1; }

  [[nodiscard]] Scalar item() const {
    require(is_scalar(), ErrorCode::NonScalarLoss, "item() on " + shape_string(rows(), cols()));
    return state_->value(0, 0);
  }

  /// Gradient accumulated by the last backward pass; zeros if untouched.
  [[nodiscard]] Matrix gradient() const {
    if (state_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return state_->grad;
  }
  [[nodiscard]] bool has_gradient() const { return state_->grad.size() != 0; }
  void zero_grad() { state_->grad.resize(0, 0); }

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& delta) {
    if (!state_->requires_grad) return;
    if (state_->grad.size() == 0) {
      state_->grad = delta;
    } else {
      state_->grad += delta;
    }
  }

  [[nodiscard]] bool same_as(const BasicNode& other) const { return state_ == other.state_; }

 private:
  struct State {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<BasicNode> parents;
    BackwardFn backward;
  };

  BasicNode(Matrix value, bool requires_grad) : state_(std::make_shared<State>()) {
    state_->value = std::move(value);
    state_->requires_grad = requires_grad;
  }

  std::shared_ptr<State> state_;

  template <typename S>
  friend void backward(BasicNode<S>& loss);
};

using Node = BasicNode<double>;

/// Propagates d(loss)/d(node) into every node reachable from `loss`.
template <typename Scalar>
void backward(BasicNode<Scalar>& loss) {
  require(loss.is_scalar(), ErrorCode::NonScalarLoss,
          "loss has shape " + shape_string(loss.rows(), loss.cols()));
  if (!loss.requires_grad()) return;

  using State = typename BasicNode<Scalar>::State;
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<BasicNode<Scalar>> order;
  std::unordered_set<const State*> visited;
  std::vector<std::pair<BasicNode<Scalar>, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  visited.insert(loss.state_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    auto& parents = node.state_->parents;
    if (next < parents.size()) {
      BasicNode<Scalar> parent = parents[next++];
      if (parent.requires_grad() && visited.insert(parent.state_.get()).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.accumulate(MatrixX<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    State& s = *it->state_;
    if (s.backward && s.grad.size() != 0) {
      s.backward(s.grad, std::span<BasicNode<Scalar>>(s.parents));
    }
  }
}

namespace detail {

template <typename Scalar>
void require_same_shape(const BasicNode<Scalar>& a, const BasicNode<Scalar>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          std::string(op) + ": " + shape_string(a.rows(), a.cols()) + " vs " +
              shape_string(b.rows(), b.cols()));
}

}  // namespace detail

template <typename Scalar>
BasicNode<Scalar> matmul(const BasicNode<Scalar>& a, const BasicNode<Scalar>& b) {
  require(a.cols() == b.rows(), ErrorCode::DimensionMismatch,
          "matmul: " + shape_string(a.rows(), a.cols()) + " * " + shape_string(b.rows(), b.cols()));
  MatrixX<Scalar> value = a.value() * b.value();
  return BasicNode<Scalar>::make(std::move(value), {a, b},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   if (p[0].requires_grad()) p[0].accumulate(g * p[1].value().transpose());
                                   if (p[1].requires_grad()) p[1].accumulate(p[0].value().transpose() * g);
                                 });
}

template <typename Scalar>
BasicNode<Scalar> add(const BasicNode<Scalar>& a, const BasicNode<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return BasicNode<Scalar>::make(a.value() + b.value(), {a, b},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   p[0].accumulate(g);
                                   p[1].accumulate(g);
                                 });
}

template <typename Scalar>
BasicNode<Scalar> sub(const BasicNode<Scalar>& a, const BasicNode<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return BasicNode<Scalar>::make(a.value() - b.value(), {a, b},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   p[0].accumulate(g);
                                   p[1].accumulate(-g);
                                 });
}

/// Entrywise (Hadamard) product.
template <typename Scalar>
BasicNode<Scalar> mul(const BasicNode<Scalar>& a, const BasicNode<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  MatrixX<Scalar> value = a.value().cwiseProduct(b.value());
  return BasicNode<Scalar>::make(std::move(value), {a, b},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   if (p[0].requires_grad()) p[0].accumulate(g.cwiseProduct(p[1].value()));
                                   if (p[1].requires_grad()) p[1].accumulate(g.cwiseProduct(p[0].value()));
                                 });
}

template <typename Scalar>
BasicNode<Scalar> scale(const BasicNode<Scalar>& a, Scalar factor) {
  return BasicNode<Scalar>::make(a.value() * factor, {a},
                                 [factor](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   p[0].accumulate(g * factor);
                                 });
}

template <typename Scalar>
BasicNode<Scalar> relu(const BasicNode<Scalar>& a) {
  MatrixX<Scalar> value = a.value().cwiseMax(Scalar(0));
  return BasicNode<Scalar>::make(std::move(value), {a},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   // relu'(0) = 0
                                   p[0].accumulate(
                                       (p[0].value().array() > Scalar(0)).select(g, Scalar(0)));
                                 });
}

template <typename Scalar>
BasicNode<Scalar> exp(const BasicNode<Scalar>& a) {
  MatrixX<Scalar> value = a.value().array().exp().matrix();
  MatrixX<Scalar> local = value;
  return BasicNode<Scalar>::make(std::move(value), {a},
                                 [local = std::move(local)](const MatrixX<Scalar>& g,
                                                            std::span<BasicNode<Scalar>> p) {
                                   p[0].accumulate(g.cwiseProduct(local));
                                 });
}

template <typename Scalar>
BasicNode<Scalar> log(const BasicNode<Scalar>& a) {
  require((a.value().array() > Scalar(0)).all(), ErrorCode::DomainError,
          "log of a non-positive entry");
  return BasicNode<Scalar>::make(a.value().array().log().matrix(), {a},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   p[0].accumulate(g.cwiseQuotient(p[0].value()));
                                 });
}

template <typename Scalar>
BasicNode<Scalar> square(const BasicNode<Scalar>& a) {
  return BasicNode<Scalar>::make(a.value().array().square().matrix(), {a},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   p[0].accumulate(Scalar(2) * g.cwiseProduct(p[0].value()));
                                 });
}

/// x[b x n] + bias[1 x n], bias broadcast over rows.
template <typename Scalar>
BasicNode<Scalar> add_bias(const BasicNode<Scalar>& x, const BasicNode<Scalar>& bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(), ErrorCode::DimensionMismatch,
          "add_bias: " + shape_string(x.rows(), x.cols()) + " + " +
              shape_string(bias.rows(), bias.cols()));
  MatrixX<Scalar> value = x.value().rowwise() + bias.value().row(0);
  return BasicNode<Scalar>::make(std::move(value), {x, bias},
                                 [](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   p[0].accumulate(g);
                                   if (p[1].requires_grad()) p[1].accumulate(g.colwise().sum());
                                 });
}

/// Extracts entry (r, c) as a 1x1 node.
template <typename Scalar>
BasicNode<Scalar> pick(const BasicNode<Scalar>& x, Eigen::Index r, Eigen::Index c) {
  require(r >= 0 && r < x.rows() && c >= 0 && c < x.cols(), ErrorCode::DimensionMismatch,
          "pick outside " + shape_string(x.rows(), x.cols()));
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = x.value()(r, c);
  return BasicNode<Scalar>::make(std::move(value), {x},
                                 [r, c](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
                                   MatrixX<Scalar> d = MatrixX<Scalar>::Zero(p[0].rows(), p[0].cols());
                                   d(r, c) = g(0, 0);
                                   p[0].accumulate(d);
                                 });
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
BasicNode<Scalar> softmax_rows(const BasicNode<Scalar>& x) {
  MatrixX<Scalar> value = x.value();
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    value.row(r).array() -= value.row(r).maxCoeff();
    value.row(r) = value.row(r).array().exp().matrix();
    value.row(r) /= value.row(r).sum();
  }
  MatrixX<Scalar> probs = value;
  return BasicNode<Scalar>::make(std::move(value), {x},
                                 [probs = std::move(probs)](const MatrixX<Scalar>& g,
                                                            std::span<BasicNode<Scalar>> p) {
                                   // dx = s * (g - <g, s>) per row
                                   Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inner =
                                       g.cwiseProduct(probs).rowwise().sum();
                                   MatrixX<Scalar> d = g;
                                   d.colwise() -= inner;
                                   p[0].accumulate(d.cwiseProduct(probs));
                                 });
}

enum class ElementwiseOp { add, sub, mul, relu, exp, log, square };

/// Dispatches an elementwise op; binary ops take two arguments, unary ops one.
template <typename Scalar>
BasicNode<Scalar> elementwise(ElementwiseOp op, std::span<const BasicNode<Scalar>> args) {
  const std::size_t arity =
      (op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul) ? 2 : 1;
  require(args.size() == arity, ErrorCode::DimensionMismatch,
          "elementwise op expects " + std::to_string(arity) + " operands");
  switch (op) {
    case ElementwiseOp::add: return add(args[0], args[1]);
    case ElementwiseOp::sub: return sub(args[0], args[1]);
    case ElementwiseOp::mul: return mul(args[0], args[1]);
    case ElementwiseOp::relu: return relu(args[0]);
    case ElementwiseOp::exp: return exp(args[0]);
    case ElementwiseOp::log: return log(args[0]);
    case ElementwiseOp::square: return square(args[0]);
  }
  throw Error(ErrorCode::DomainError, "unknown elementwise op");
}

/// Sum over all entries (axis empty), over rows (axis 0, result 1 x cols) or
/// over columns (axis 1, result rows x 1).
template <typename Scalar>
BasicNode<Scalar> sum(const BasicNode<Scalar>& x, std::optional<int> axis = std::nullopt) {
  using M = MatrixX<Scalar>;
  if (!axis) {
    M value(1, 1);
    value(0, 0) = x.value().sum();
    return BasicNode<Scalar>::make(std::move(value), {x},
                                   [](const M& g, std::span<BasicNode<Scalar>> p) {
                                     p[0].accumulate(M::Constant(p[0].rows(), p[0].cols(), g(0, 0)));
                                   });
  }
  require(*axis == 0 || *axis == 1, ErrorCode::InvalidAxis, "axis " + std::to_string(*axis));
  if (*axis == 0) {
    return BasicNode<Scalar>::make(x.value().colwise().sum(), {x},
                                   [](const M& g, std::span<BasicNode<Scalar>> p) {
                                     M d = g.replicate(p[0].rows(), 1);
                                     p[0].accumulate(d);
                                   });
  }
  return BasicNode<Scalar>::make(x.value().rowwise().sum(), {x},
                                 [](const M& g, std::span<BasicNode<Scalar>> p) {
                                   M d = g.replicate(1, p[0].cols());
                                   p[0].accumulate(d);
                                 });
}

template <typename Scalar>
BasicNode<Scalar> mean(const BasicNode<Scalar>& x, std::optional<int> axis = std::nullopt) {
  Eigen::Index count = x.rows() * x.cols();
  if (axis) {
    require(*axis == 0 || *axis == 1, ErrorCode::InvalidAxis, "axis " + std::to_string(*axis));
    count = *axis == 0 ? x.rows() : x.cols();
  }
  return scale(sum(x, axis), Scalar(1) / static_cast<Scalar>(count));
}

enum class ReduceOp { sum, mean };

template <typename Scalar>
BasicNode<Scalar> reduce(ReduceOp op, const BasicNode<Scalar>& x, std::optional<int> axis = std::nullopt) {
  return op == ReduceOp::sum ? sum(x, axis) : mean(x, axis);
}

template <typename Scalar>
BasicNode<Scalar> operator+(const BasicNode<Scalar>& a, const BasicNode<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
BasicNode<Scalar> operator-(const BasicNode<Scalar>& a, const BasicNode<Scalar>& b) {
  return sub(a, b);
}

template <typename Scalar>
BasicNode<Scalar> operator*(Scalar factor, const BasicNode<Scalar>& a) {
  return scale(a, factor);
}

/// Compares reverse-mode gradients of `f` at `params` against central
/// differences. Returns max over all coordinates of
/// |analytic - numeric| / max(1, |numeric|).
template <typename Scalar, typename F>
Scalar finite_diff_check(F&& f, std::vector<MatrixX<Scalar>> params, Scalar step) {
  require(step > Scalar(0), ErrorCode::DomainError, "finite-difference step must be positive");
  std::vector<BasicNode<Scalar>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(BasicNode<Scalar>::variable(p));
  BasicNode<Scalar> loss = f(std::span<const BasicNode<Scalar>>(vars));
  backward(loss);

  auto evaluate = [&](const std::vector<MatrixX<Scalar>>& at) {
    std::vector<BasicNode<Scalar>> consts;
    consts.reserve(at.size());
    for (const auto& p : at) consts.push_back(BasicNode<Scalar>::constant(p));
    return f(std::span<const BasicNode<Scalar>>(consts)).item();
  };

  Scalar worst = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const MatrixX<Scalar> analytic = vars[t].gradient();
    for (Eigen::Index i = 0; i < params[t].size(); ++i) {
      const Scalar original = params[t].data()[i];
      params[t].data()[i] = original + step;
      const Scalar up = evaluate(params);
      params[t].data()[i] = original - step;
      const Scalar down = evaluate(params);
      params[t].data()[i] = original;
      const Scalar numeric = (up - down) / (Scalar(2) * step);
      using std::abs;
      using std::max;
      const Scalar err = abs(analytic.data()[i] - numeric) / max(Scalar(1), abs(numeric));
      worst = max(worst, err);
    }
  }
  return worst;
}

}  // namespace owmmd
