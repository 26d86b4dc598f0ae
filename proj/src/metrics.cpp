#include "owmmd/metrics.hpp"

#include <cmath>
#include <string>

#include "owmmd/error.hpp"

namespace owmmd {

AccuracyMatrix::AccuracyMatrix(std::size_t num_tasks) : cells_(num_tasks) {
  for (std::size_t i = 0; i < num_tasks; ++i) cells_[i].resize(i + 1);
}

void AccuracyMatrix::set(std::size_t i, std::size_t j, double accuracy) {
  require(i < cells_.size() && j <= i, ErrorCode::InvalidTask,
          "cell (" + std::to_string(i) + ", " + std::to_string(j) + ") outside the lower triangle");
  require(accuracy >= 0.0 && accuracy <= 1.0, ErrorCode::DomainError, "accuracy must lie in [0, 1]");
  cells_[i][j] = accuracy;
}

void AccuracyMatrix::set_row(std::size_t i, std::span<const double> row) {
  for (std::size_t j = 0; j < row.size(); ++j) set(i, j, row[j]);
}

std::optional<double> AccuracyMatrix::get(std::size_t i, std::size_t j) const {
  if (i >= cells_.size() || j > i) return std::nullopt;
  return cells_[i][j];
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  const auto v = get(i, j);
  require(v.has_value(), ErrorCode::IncompleteMatrix,
          "cell (" + std::to_string(i) + ", " + std::to_string(j) + ") is not populated");
  return *v;
}

bool AccuracyMatrix::row_complete(std::size_t i) const {
  if (i >= cells_.size()) return false;
  for (const auto& c : cells_[i]) {
    if (!c) return false;
  }
  return true;
}

double average_accuracy(const AccuracyMatrix& m) {
  require(m.num_tasks() >= 1 && m.row_complete(m.num_tasks() - 1), ErrorCode::IncompleteMatrix,
          "final row incomplete");
  const std::size_t last = m.num_tasks() - 1;
  double total = 0.0;
  for (std::size_t j = 0; j <= last; ++j) total += m.at(last, j);
  return total / static_cast<double>(last + 1);
}

double backward_transfer(const AccuracyMatrix& m) {
  require(m.num_tasks() >= 2, ErrorCode::SingleTask, "backward transfer needs at least two tasks");
  const std::size_t last = m.num_tasks() - 1;
  double total = 0.0;
  for (std::size_t j = 0; j < last; ++j) total += m.at(last, j) - m.at(j, j);
  return total / static_cast<double>(last);
}

std::vector<std::pair<std::size_t, double>> forgetting_curve(const AccuracyMatrix& m, std::size_t j) {
  require(j < m.num_tasks(), ErrorCode::InvalidTask, "task " + std::to_string(j) + " out of range");
  std::vector<std::pair<std::size_t, double>> curve;
  for (std::size_t i = j; i < m.num_tasks(); ++i) curve.emplace_back(i, m.at(i, j));
  return curve;
}

MeanStd aggregate(std::span<const double> runs) {
  require(!runs.empty(), ErrorCode::EmptyInput, "aggregate of no runs");
  double mean = 0.0;
  for (double r : runs) mean += r;
  mean /= static_cast<double>(runs.size());
  if (runs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double r : runs) ss += (r - mean) * (r - mean);
  return {mean, std::sqrt(ss / static_cast<double>(runs.size() - 1))};
}

}  // namespace owmmd
