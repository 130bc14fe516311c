#include "pbrl/eval_stats.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pbrl;

namespace {

ScoreMatrix matrix(std::vector<std::string> tasks, std::initializer_list<double> values, Eigen::Index seeds) {
  ScoreMatrix m;
  m.tasks = std::move(tasks);
  m.scores.resize(static_cast<Eigen::Index>(m.tasks.size()), seeds);
  auto it = values.begin();
  for (Eigen::Index i = 0; i < m.scores.rows(); ++i)
    for (Eigen::Index j = 0; j < seeds; ++j) m.scores(i, j) = *it++;
  return m;
}

}  // namespace

TEST(Aggregate, KnownValues) {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(aggregate(x, Metric::iqm), 2.5);
  EXPECT_DOUBLE_EQ(aggregate(x, Metric::mean), 2.5);
  EXPECT_DOUBLE_EQ(aggregate(x, Metric::median), 2.5);
  const std::vector<double> y{40.0, 60.0};
  EXPECT_DOUBLE_EQ(aggregate(y, Metric::optimality_gap, 50.0), 0.1);
  const std::vector<double> z{8.0, 1.0, 100.0, 2.0, 7.0, 3.0, -50.0, 5.0};
  // sorted: -50 1 2 3 5 7 8 100, middle four 2 3 5 7
  EXPECT_DOUBLE_EQ(aggregate(z, Metric::iqm), 4.25);
  EXPECT_THROW(aggregate(std::vector<double>{1.0, 2.0}, Metric::iqm), std::invalid_argument);
}

TEST(Aggregate, MetricNamesRoundTrip) {
  for (Metric m : all_metrics()) EXPECT_EQ(parse_metric(to_string(m)), m);
  EXPECT_THROW(parse_metric("max"), std::invalid_argument);
}

TEST(Profile, EndpointsAndMonotone) {
  SeededRng rng(1);
  ScoreMatrix m;
  m.tasks = {"a", "b", "c"};
  m.scores = test::random_mat(3, 7, rng, 30.0).array() + 50.0;
  std::vector<double> taus;
  for (int i = 0; i <= 100; ++i) taus.push_back(-50.0 + 2.0 * i);
  const auto f = performance_profile(m, taus);
  const std::vector<double> one{m.scores.minCoeff()};
  EXPECT_DOUBLE_EQ(performance_profile(m, one)[0], 1.0);
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LE(f[i], f[i - 1]);
  const std::vector<double> above{m.scores.maxCoeff() + 1.0};
  EXPECT_DOUBLE_EQ(performance_profile(m, above)[0], 0.0);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0, 4.0}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile({0.0, 10.0}, 0.25), 2.5);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Bootstrap, ConstantScoresGiveDegenerateInterval) {
  const auto m = matrix({"a", "b"}, {5, 5, 5, 5, 5, 5, 5, 5}, 4);
  SeededRng rng(2);
  const auto ci = stratified_bootstrap_ci(m, Metric::iqm, rng, 200);
  EXPECT_DOUBLE_EQ(ci.low, 5.0);
  EXPECT_DOUBLE_EQ(ci.high, 5.0);
}

TEST(Bootstrap, IntervalContainsPointEstimate) {
  SeededRng rng(3);
  ScoreMatrix m;
  m.tasks = {"a", "b", "c", "d"};
  m.scores = test::random_mat(4, 10, rng, 20.0).array() + 60.0;
  for (Metric metric : all_metrics()) {
    SeededRng r(4);
    const auto ci = stratified_bootstrap_ci(m, metric, r, 1000);
    const double point = aggregate(m, metric);
    EXPECT_LE(ci.low, point + 1e-9) << to_string(metric);
    EXPECT_GE(ci.high, point - 1e-9) << to_string(metric);
    EXPECT_LT(ci.low, ci.high) << to_string(metric);
  }
}

TEST(Bootstrap, ResamplesStayInsideTasks) {
  // Task a is all zeros, task b all hundreds: every stratified resample has mean 50.
  const auto m = matrix({"a", "b"}, {0, 0, 0, 100, 100, 100}, 3);
  SeededRng rng(5);
  const auto ci = stratified_bootstrap_ci(m, Metric::mean, rng, 300);
  EXPECT_DOUBLE_EQ(ci.low, 50.0);
  EXPECT_DOUBLE_EQ(ci.high, 50.0);
}

TEST(Bootstrap, SameSeedSameInterval) {
  SeededRng g(6);
  ScoreMatrix m;
  m.tasks = {"a", "b"};
  m.scores = test::random_mat(2, 5, g, 10.0);
  SeededRng a(7), b(7);
  const auto x = stratified_bootstrap_ci(m, Metric::median, a, 500);
  const auto y = stratified_bootstrap_ci(m, Metric::median, b, 500);
  EXPECT_EQ(x.low, y.low);
  EXPECT_EQ(x.high, y.high);
}

TEST(ScoreMatrixIo, RoundTrip) {
  SeededRng rng(8);
  ScoreMatrix m;
  m.tasks = {"gridworld-narrow", "point-mass-mixed"};
  m.scores = test::random_mat(2, 3, rng, 40.0);
  const auto path = test::scratch_dir("scores") / "s.csv";
  write_score_matrix(m, path);
  const auto back = read_score_matrix(path);
  EXPECT_EQ(back.tasks, m.tasks);
  EXPECT_EQ((back.scores - m.scores).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ScoreMatrixIo, ValidateRejectsBadInput) {
  ScoreMatrix m;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.tasks = {"a"};
  m.scores = Mat::Constant(1, 2, std::nan(""));
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.tasks = {"a", "b"};
  m.scores = Mat::Zero(1, 2);
  EXPECT_THROW(m.validate(), std::invalid_argument);
}
