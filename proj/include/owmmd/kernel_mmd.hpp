#pragma once

// Kernels, Gram matrices and maximum mean discrepancy estimators.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "owmmd/diff.hpp"

namespace owmmd {

enum class KernelKind { rbf, linear };
enum class BandwidthMode { fixed, median_heuristic };

/// For `fixed` mode the bandwidths are absolute; for `median_heuristic` they
/// are multipliers of the median pairwise distance of the pooled sample.
struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  std::vector<double> bandwidths{0.25, 0.5, 1.0, 2.0, 4.0};
  BandwidthMode bandwidth_mode = BandwidthMode::median_heuristic;

  static KernelSpec rbf_mixture() { return {}; }
  static KernelSpec linear() { return {KernelKind::linear, {}, BandwidthMode::fixed}; }
  static KernelSpec rbf_fixed(std::vector<double> sigmas) {
    return {KernelKind::rbf, std::move(sigmas), BandwidthMode::fixed};
  }
};

inline void validate_kernel(const KernelSpec& spec) {
  if (spec.kind == KernelKind::linear) return;
  require(!spec.bandwidths.empty() || spec.bandwidth_mode == BandwidthMode::median_heuristic,
          ErrorCode::NonPositiveBandwidth, "rbf kernel needs at least one bandwidth");
  for (double s : spec.bandwidths) {
    require(s > 0.0 && std::isfinite(s), ErrorCode::NonPositiveBandwidth,
            "bandwidth " + std::to_string(s));
  }
}

/// A kernel with bandwidths fixed to absolute values, ready for evaluation.
template <typename Scalar>
struct ResolvedKernel {
  KernelKind kind = KernelKind::rbf;
  std::vector<Scalar> sigmas;
};

template <typename Scalar>
Scalar squared_distance(const MatrixX<Scalar>& a, Eigen::Index i, const MatrixX<Scalar>& b,
                        Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

/// Median of the pairwise Euclidean distances (i < j) of the rows of a and b
/// pooled together. Returns 1 when the median is zero or the pool has fewer
/// than two rows.
template <typename Scalar>
Scalar median_pairwise_distance(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  MatrixX<Scalar> pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<Scalar> dists;
  const Eigen::Index n = pooled.rows();
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dists.push_back(std::sqrt(squared_distance(pooled, i, pooled, j)));
    }
  }
  if (dists.empty()) return Scalar(1);
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  Scalar median = *mid;
  if (dists.size() % 2 == 0) {
    const Scalar lower = *std::max_element(dists.begin(), mid);
    median = (median + lower) / Scalar(2);
  }
  return median > Scalar(0) ? median : Scalar(1);
}

template <typename Scalar>
ResolvedKernel<Scalar> resolve_kernel(const KernelSpec& spec, const MatrixX<Scalar>& a,
                                      const MatrixX<Scalar>& b) {
  validate_kernel(spec);
  ResolvedKernel<Scalar> out{spec.kind, {}};
  if (spec.kind == KernelKind::linear) return out;
  if (spec.bandwidth_mode == BandwidthMode::fixed) {
    for (double s : spec.bandwidths) out.sigmas.push_back(static_cast<Scalar>(s));
    return out;
  }
  const Scalar median = median_pairwise_distance(a, b);
  if (spec.bandwidths.empty()) {
    out.sigmas.push_back(median);
  } else {
    for (double m : spec.bandwidths) out.sigmas.push_back(median * static_cast<Scalar>(m));
  }
  return out;
}

template <typename Scalar>
Scalar kernel_value(const ResolvedKernel<Scalar>& k, const MatrixX<Scalar>& a, Eigen::Index i,
                    const MatrixX<Scalar>& b, Eigen::Index j) {
  if (k.kind == KernelKind::linear) return a.row(i).dot(b.row(j));
  const Scalar d2 = squared_distance(a, i, b, j);
  Scalar v = 0;
  for (Scalar s : k.sigmas) v += std::exp(-d2 / (Scalar(2) * s * s));
  return v;
}

template <typename Scalar>
MatrixX<Scalar> gram(const ResolvedKernel<Scalar>& k, const MatrixX<Scalar>& a,
                     const MatrixX<Scalar>& b) {
  require(a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          "gram: widths " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  if (k.kind == KernelKind::linear) return a * b.transpose();
  MatrixX<Scalar> out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) out(i, j) = kernel_value(k, a, i, b, j);
  }
  return out;
}

/// Gram matrix with the bandwidths resolved on the pooled rows of a and b.
template <typename Scalar>
MatrixX<Scalar> gram(const KernelSpec& spec, const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  require(a.cols() == b.cols(), ErrorCode::DimensionMismatch, "gram: width mismatch");
  return gram(resolve_kernel(spec, a, b), a, b);
}

/// Biased squared MMD: mean(K_aa) - 2 mean(K_ab) + mean(K_bb).
template <typename Scalar>
Scalar mmd2_biased(const KernelSpec& spec, const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  require(a.cols() == b.cols(), ErrorCode::DimensionMismatch, "mmd2_biased: width mismatch");
  require(a.rows() >= 1 && b.rows() >= 1, ErrorCode::BatchTooSmall, "mmd2_biased: empty sample");
  const auto k = resolve_kernel(spec, a, b);
  return gram(k, a, a).mean() - Scalar(2) * gram(k, a, b).mean() + gram(k, b, b).mean();
}

namespace detail {

template <typename Scalar>
Scalar offdiag_sum(const MatrixX<Scalar>& m) {
  return m.sum() - m.diagonal().sum();
}

/// sum_{j != i} d/dx k(x, y)|_{x = from_i, y = to_j}, one row per i.
template <typename Scalar>
MatrixX<Scalar> kernel_pull(const ResolvedKernel<Scalar>& k, const MatrixX<Scalar>& from,
                            const MatrixX<Scalar>& to) {
  const Eigen::Index n = from.rows();
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(n, from.cols());
  if (k.kind == KernelKind::linear) {
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> total = to.colwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = total - to.row(i);
    return out;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Scalar d2 = squared_distance(from, i, to, j);
      Scalar c = 0;
      for (Scalar s : k.sigmas) c += std::exp(-d2 / (Scalar(2) * s * s)) / (s * s);
      out.row(i) -= c * (from.row(i) - to.row(j));
    }
  }
  return out;
}

}  // namespace detail

/// Unbiased MMD estimate over equal-sized samples:
///   1/(N(N-1)) * sum_{i != j} k(a_i,a_j) + k(b_i,b_j) - k(a_i,b_j) - k(a_j,b_i).
/// Gradients flow into whichever operand tracks them; the kernel's
/// bandwidths are held constant.
template <typename Scalar>
BasicNode<Scalar> mmd_unbiased(const ResolvedKernel<Scalar>& k, const BasicNode<Scalar>& a,
                               const BasicNode<Scalar>& b) {
  require(a.cols() == b.cols() && a.rows() == b.rows(), ErrorCode::DimensionMismatch,
          "mmd_unbiased: " + shape_string(a.rows(), a.cols()) + " vs " +
              shape_string(b.rows(), b.cols()));
  const Eigen::Index n = a.rows();
  require(n >= 2, ErrorCode::BatchTooSmall, "mmd_unbiased needs at least 2 rows");
  const Scalar norm = Scalar(1) / static_cast<Scalar>(n * (n - 1));
  const Scalar s_aa = detail::offdiag_sum(gram(k, a.value(), a.value()));
  const Scalar s_bb = detail::offdiag_sum(gram(k, b.value(), b.value()));
  const Scalar s_ab = detail::offdiag_sum(gram(k, a.value(), b.value()));
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = ((s_aa + s_bb) - Scalar(2) * s_ab) * norm;
  return BasicNode<Scalar>::make(
      std::move(value), {a, b},
      [k, norm](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
        const Scalar coeff = Scalar(2) * norm * g(0, 0);
        const MatrixX<Scalar>& av = p[0].value();
        const MatrixX<Scalar>& bv = p[1].value();
        if (p[0].requires_grad()) {
          p[0].accumulate(coeff * (detail::kernel_pull(k, av, av) - detail::kernel_pull(k, av, bv)));
        }
        if (p[1].requires_grad()) {
          p[1].accumulate(coeff * (detail::kernel_pull(k, bv, bv) - detail::kernel_pull(k, bv, av)));
        }
      });
}

/// Resolves bandwidths on the pooled pair, then evaluates the estimator.
template <typename Scalar>
BasicNode<Scalar> mmd_unbiased(const KernelSpec& spec, const BasicNode<Scalar>& teacher,
                               const BasicNode<Scalar>& student) {
  require(teacher.cols() == student.cols(), ErrorCode::DimensionMismatch, "mmd_unbiased: width mismatch");
  return mmd_unbiased(resolve_kernel(spec, teacher.value(), student.value()), teacher, student);
}

enum class AblationDistance { l2, cosine };

/// Mean over rows of ||t_i - s_i||^2.
template <typename Scalar>
BasicNode<Scalar> l2_distance(const BasicNode<Scalar>& teacher, const BasicNode<Scalar>& student) {
  detail::require_same_shape(teacher, student, "l2_distance");
  require(teacher.rows() >= 1, ErrorCode::BatchTooSmall, "l2_distance: empty batch");
  return scale(sum(square(sub(teacher, student))), Scalar(1) / static_cast<Scalar>(teacher.rows()));
}

/// Mean over rows of 1 - cos(t_i, s_i).
template <typename Scalar>
BasicNode<Scalar> cosine_distance(const BasicNode<Scalar>& teacher, const BasicNode<Scalar>& student) {
  detail::require_same_shape(teacher, student, "cosine_distance");
  const Eigen::Index n = teacher.rows();
  require(n >= 1, ErrorCode::BatchTooSmall, "cosine_distance: empty batch");
  const auto& t = teacher.value();
  const auto& s = student.value();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> tn = t.rowwise().norm();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sn = s.rowwise().norm();
  require((tn.array() > Scalar(0)).all() && (sn.array() > Scalar(0)).all(), ErrorCode::ZeroVector,
          "cosine distance of a zero row");
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) total += Scalar(1) - t.row(i).dot(s.row(i)) / (tn(i) * sn(i));
  MatrixX<Scalar> value(1, 1);
  value(0, 0) = total / static_cast<Scalar>(n);
  return BasicNode<Scalar>::make(
      std::move(value), {teacher, student},
      [tn, sn](const MatrixX<Scalar>& g, std::span<BasicNode<Scalar>> p) {
        const Eigen::Index rows = p[0].rows();
        const Scalar coeff = -g(0, 0) / static_cast<Scalar>(rows);
        const auto& tv = p[0].value();
        const auto& sv = p[1].value();
        // d cos(u, v) / du = v / (|u||v|) - cos * u / |u|^2
        auto pull = [&](const MatrixX<Scalar>& u, const MatrixX<Scalar>& v, const auto& un,
                        const auto& vn) {
          MatrixX<Scalar> d(rows, u.cols());
          for (Eigen::Index i = 0; i < rows; ++i) {
            const Scalar cos = u.row(i).dot(v.row(i)) / (un(i) * vn(i));
            d.row(i) = coeff * (v.row(i) / (un(i) * vn(i)) - cos * u.row(i) / (un(i) * un(i)));
          }
          return d;
        };
        if (p[0].requires_grad()) p[0].accumulate(pull(tv, sv, tn, sn));
        if (p[1].requires_grad()) p[1].accumulate(pull(sv, tv, sn, tn));
      });
}

template <typename Scalar>
BasicNode<Scalar> ablation_distance(AblationDistance kind, const BasicNode<Scalar>& teacher,
                                    const BasicNode<Scalar>& student) {
  return kind == AblationDistance::l2 ? l2_distance(teacher, student)
                                      : cosine_distance(teacher, student);
}

}  // namespace owmmd
