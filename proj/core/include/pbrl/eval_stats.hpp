#pragma once

#include "pbrl/numerics.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pbrl {

/// Normalized scores x(m, n) for M tasks and N seeds per task.
struct ScoreMatrix {
  std::vector<std::string> tasks;
  Mat scores;  // (M x N)

  std::size_t n_tasks() const { return static_cast<std::size_t>(scores.rows()); }
  std::size_t n_seeds() const { return static_cast<std::size_t>(scores.cols()); }
  /// Throws std::invalid_argument if empty, mislabelled or non-finite.
  void validate() const;
  std::vector<double> flatten() const;
};

enum class Metric { mean, median, iqm, optimality_gap };

std::string to_string(Metric m);
Metric parse_metric(const std::string& s);
std::vector<Metric> all_metrics();

/// F(tau) = fraction of runs with score >= tau, for each tau (taus sorted ascending).
std::vector<double> performance_profile(const ScoreMatrix& scores, std::span<const double> taus);

/// Metric over a flat list of runs. IQM drops floor(n / 4) runs at each end and
/// needs n >= 4; the optimality gap is mean(max(0, eta - x)) / eta.
double aggregate(std::span<const double> runs, Metric metric, double eta = 50.0);
double aggregate(const ScoreMatrix& scores, Metric metric, double eta = 50.0);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap: each resample redraws N seeds with replacement inside
/// every task, then evaluates the metric on the pooled runs.
Interval stratified_bootstrap_ci(const ScoreMatrix& scores, Metric metric, SeededRng& rng,
                                 std::size_t n_resamples = 2000, double confidence = 0.95,
                                 double eta = 50.0);

/// Linear-interpolation quantile of unsorted values, q in [0, 1].
double quantile(std::vector<double> values, double q);

/// Rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Long format: task,seed,score with one row per run.
void write_score_matrix(const ScoreMatrix& scores, const std::filesystem::path& path);
ScoreMatrix read_score_matrix(const std::filesystem::path& path);

}  // namespace pbrl
