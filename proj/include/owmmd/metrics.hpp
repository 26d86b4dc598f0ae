#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace owmmd {

/// a(i, j): accuracy on task j's test set after training task i, for j <= i.
/// Indices are 0-based here.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t num_tasks = 0);

  [[nodiscard]] std::size_t num_tasks() const { return cells_.size(); }
  void set(std::size_t i, std::size_t j, double accuracy);
  /// Sets a[i][0..row.size()).
  void set_row(std::size_t i, std::span<const double> row);
  [[nodiscard]] std::optional<double> get(std::size_t i, std::size_t j) const;
  [[nodiscard]] double at(std::size_t i, std::size_t j) const;
  [[nodiscard]] bool row_complete(std::size_t i) const;

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::vector<std::vector<std::optional<double>>> cells_;
};

/// Mean of the final row.
double average_accuracy(const AccuracyMatrix& m);
/// 1/(N-1) * sum_{j<N} (a[N][j] - a[j][j]).
double backward_transfer(const AccuracyMatrix& m);
/// (i, a[i][j]) for i = j..N-1.
std::vector<std::pair<std::size_t, double>> forgetting_curve(const AccuracyMatrix& m, std::size_t j);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
/// Sample mean and (n-1)-denominator standard deviation; std is 0 for n = 1.
MeanStd aggregate(std::span<const double> runs);

}  // namespace owmmd
