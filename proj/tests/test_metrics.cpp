#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "owmmd/error.hpp"
#include "owmmd/metrics.hpp"

using namespace owmmd;

namespace {

AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.set_row(i, rows[i]);
  return m;
}

AccuracyMatrix random_matrix(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AccuracyMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.set(i, j, u(rng));
  }
  return m;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST(AverageAccuracy, Examples) {
  EXPECT_EQ(average_accuracy(from_rows({{0.9}})), 0.9);
  EXPECT_NEAR(average_accuracy(from_rows({{0.5}, {0.8, 0.6}})), 0.7, 1e-15);
  EXPECT_NEAR(average_accuracy(from_rows({{0.3}, {0.3, 0.3}, {0.3, 0.3, 0.3}})), 0.3, 1e-15);
}

TEST(AverageAccuracy, IncompleteMatrix) {
  AccuracyMatrix m(2);
  m.set(0, 0, 0.5);
  m.set(1, 0, 0.5);
  EXPECT_EQ(code_of([&] { average_accuracy(m); }), ErrorCode::IncompleteMatrix);
  EXPECT_EQ(code_of([&] { (void)m.at(1, 1); }), ErrorCode::IncompleteMatrix);
}

TEST(AverageAccuracy, WithinFinalRowRange) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const AccuracyMatrix m = random_matrix(1 + t % 6, rng);
    const std::size_t n = m.num_tasks();
    double lo = 1.0, hi = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      lo = std::min(lo, m.at(n - 1, j));
      hi = std::max(hi, m.at(n - 1, j));
    }
    const double a = average_accuracy(m);
    EXPECT_GE(a, lo - 1e-15);
    EXPECT_LE(a, hi + 1e-15);
  }
}

TEST(BackwardTransfer, Examples) {
  EXPECT_NEAR(backward_transfer(from_rows({{0.9}, {0.8, 0.85}})), -0.1, 1e-15);
  EXPECT_NEAR(backward_transfer(from_rows({{0.7}, {0.7, 0.2}, {0.7, 0.4, 0.9}})), 0.1, 1e-15);
  EXPECT_EQ(backward_transfer(from_rows({{0.6}, {0.6, 0.6}})), 0.0);
  EXPECT_EQ(code_of([] { backward_transfer(from_rows({{0.6}})); }), ErrorCode::SingleTask);
}

// Independent loop over the matrix.
TEST(BackwardTransfer, DoubleEntryOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const AccuracyMatrix m = random_matrix(2 + t % 7, rng);
    const std::size_t n = m.num_tasks();
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) s += m.at(n - 1, j) - m.at(j, j);
    EXPECT_NEAR(backward_transfer(m), s / double(n - 1), 1e-15);
  }
}

TEST(BackwardTransfer, NonPositiveWhenNothingImproves) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + t % 5;
    AccuracyMatrix m(n);
    for (std::size_t j = 0; j < n; ++j) {
      double a = u(rng);
      for (std::size_t i = j; i < n; ++i) {
        m.set(i, j, a);
        a *= u(rng);
      }
    }
    EXPECT_LE(backward_transfer(m), 0.0);
  }
}

TEST(ForgettingCurve, Examples) {
  const AccuracyMatrix m = from_rows({{0.9}, {0.8, 0.95}, {0.7, 0.9, 0.99}});
  const auto last = forgetting_curve(m, 2);
  ASSERT_EQ(last.size(), 1u);
  EXPECT_EQ(last[0].second, 0.99);

  const auto first = forgetting_curve(m, 0);
  ASSERT_EQ(first.size(), 3u);
  EXPECT_EQ(first.front().second, m.at(0, 0));
  EXPECT_EQ(first.back().second, m.at(2, 0));
  for (std::size_t i = 1; i < first.size(); ++i) EXPECT_LE(first[i].second, first[i - 1].second);
  EXPECT_EQ(first[1].first, 1u);

  EXPECT_EQ(code_of([&] { forgetting_curve(m, 3); }), ErrorCode::InvalidTask);
}

TEST(AccuracyMatrix, Guards) {
  AccuracyMatrix m(2);
  EXPECT_EQ(code_of([&] { m.set(0, 1, 0.5); }), ErrorCode::InvalidTask);
  EXPECT_EQ(code_of([&] { m.set(2, 0, 0.5); }), ErrorCode::InvalidTask);
  EXPECT_EQ(code_of([&] { m.set(0, 0, 1.5); }), ErrorCode::DomainError);
  EXPECT_FALSE(m.get(1, 0).has_value());
}

TEST(Aggregate, Examples) {
  const MeanStd one = aggregate(std::vector<double>{0.5});
  EXPECT_EQ(one.mean, 0.5);
  EXPECT_EQ(one.std, 0.0);
  const MeanStd two = aggregate(std::vector<double>{0.4, 0.6});
  EXPECT_NEAR(two.mean, 0.5, 1e-15);
  EXPECT_NEAR(two.std, std::sqrt(0.02), 1e-15);
  EXPECT_EQ(code_of([] { aggregate(std::vector<double>{}); }), ErrorCode::EmptyInput);
}

TEST(Aggregate, TwoPassOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(2 + t % 20);
    for (double& x : v) x = u(rng);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const MeanStd got = aggregate(v);
    EXPECT_NEAR(got.mean, mean, 1e-12);
    EXPECT_NEAR(got.std, std::sqrt(ss / double(v.size() - 1)), 1e-12);
  }
}
