#include "pbrl/eval_stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pbrl {

void ScoreMatrix::validate() const {
  if (scores.rows() == 0 || scores.cols() == 0) throw std::invalid_argument("ScoreMatrix: empty");
  if (tasks.size() != n_tasks()) throw std::invalid_argument("ScoreMatrix: task names do not match rows");
  if (!scores.allFinite()) throw std::invalid_argument("ScoreMatrix: non-finite score");
}

std::vector<double> ScoreMatrix::flatten() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index m = 0; m < scores.rows(); ++m) {
    for (Eigen::Index n = 0; n < scores.cols(); ++n) out.push_back(scores(m, n));
  }
  return out;
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::mean: return "mean";
    case Metric::median: return "median";
    case Metric::iqm: return "iqm";
    case Metric::optimality_gap: return "optimality_gap";
  }
  return "?";
}

Metric parse_metric(const std::string& s) {
  for (Metric m : all_metrics()) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown metric: " + s);
}

std::vector<Metric> all_metrics() {
  return {Metric::mean, Metric::median, Metric::iqm, Metric::optimality_gap};
}

std::vector<double> performance_profile(const ScoreMatrix& scores, std::span<const double> taus) {
  scores.validate();
  if (!std::is_sorted(taus.begin(), taus.end())) {
    throw std::invalid_argument("performance_profile: taus must be sorted");
  }
  std::vector<double> out;
  out.reserve(taus.size());
  const double per_task = 1.0 / static_cast<double>(scores.n_seeds());
  for (double tau : taus) {
    double total = 0.0;
    for (Eigen::Index m = 0; m < scores.scores.rows(); ++m) {
      const auto hits = (scores.scores.row(m).array() >= tau).count();
      total += per_task * static_cast<double>(hits);
    }
    out.push_back(total / static_cast<double>(scores.n_tasks()));
  }
  return out;
}

double aggregate(std::span<const double> runs, Metric metric, double eta) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  std::vector<double> x(runs.begin(), runs.end());
  const auto n = x.size();
  switch (metric) {
    case Metric::mean:
      return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    case Metric::median:
      return quantile(std::move(x), 0.5);
    case Metric::iqm: {
      if (n < 4) throw std::invalid_argument("aggregate: iqm needs at least four runs");
      std::sort(x.begin(), x.end());
      const std::size_t cut = n / 4;
      const double sum = std::accumulate(x.begin() + static_cast<long>(cut),
                                         x.end() - static_cast<long>(cut), 0.0);
      return sum / static_cast<double>(n - 2 * cut);
    }
    case Metric::optimality_gap: {
      if (!(eta > 0.0)) throw std::invalid_argument("aggregate: eta must be > 0");
      double gap = 0.0;
      for (double v : x) gap += std::max(0.0, eta - v) / eta;
      return gap / static_cast<double>(n);
    }
  }
  throw std::invalid_argument("aggregate: unknown metric");
}

double aggregate(const ScoreMatrix& scores, Metric metric, double eta) {
  scores.validate();
  const auto runs = scores.flatten();
  return aggregate(runs, metric, eta);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j);
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const Eigen::Map<const Vec> a(rx.data(), static_cast<Eigen::Index>(rx.size()));
  const Eigen::Map<const Vec> b(ry.data(), static_cast<Eigen::Index>(ry.size()));
  const Vec ca = a.array() - a.mean();
  const Vec cb = b.array() - b.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  if (denom == 0.0) throw std::invalid_argument("spearman: constant sample");
  return ca.dot(cb) / denom;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Interval stratified_bootstrap_ci(const ScoreMatrix& scores, Metric metric, SeededRng& rng,
                                 std::size_t n_resamples, double confidence, double eta) {
  scores.validate();
  if (n_resamples < 100) throw std::invalid_argument("bootstrap: n_resamples must be >= 100");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw std::invalid_argument("bootstrap: confidence must be in (0, 1)");
  }
  const std::size_t m_tasks = scores.n_tasks();
  const std::size_t n_seeds = scores.n_seeds();
  std::vector<double> stats;
  stats.reserve(n_resamples);
  std::vector<double> runs(m_tasks * n_seeds);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    for (std::size_t m = 0; m < m_tasks; ++m) {
      for (std::size_t n = 0; n < n_seeds; ++n) {
        const auto pick = static_cast<Eigen::Index>(rng.below(n_seeds));
        runs[m * n_seeds + n] = scores.scores(static_cast<Eigen::Index>(m), pick);
      }
    }
    stats.push_back(aggregate(runs, metric, eta));
  }
  const double tail = 0.5 * (1.0 - confidence);
  return {quantile(stats, tail), quantile(stats, 1.0 - tail)};
}

void write_score_matrix(const ScoreMatrix& scores, const std::filesystem::path& path) {
  scores.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "task,seed,score\n" << std::setprecision(17);
  for (std::size_t m = 0; m < scores.n_tasks(); ++m) {
    for (std::size_t n = 0; n < scores.n_seeds(); ++n) {
      out << scores.tasks[m] << ',' << n << ','
          << scores.scores(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) << '\n';
    }
  }
}

ScoreMatrix read_score_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "task,seed,score") {
    throw std::runtime_error("score matrix: bad header in " + path.string());
  }
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> by_task;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string task, seed, score;
    if (!std::getline(row, task, ',') || !std::getline(row, seed, ',') || !std::getline(row, score)) {
      throw std::runtime_error("score matrix: malformed row: " + line);
    }
    if (!by_task.contains(task)) order.push_back(task);
    by_task[task].push_back(std::stod(score));
  }
  ScoreMatrix out;
  if (order.empty()) throw std::runtime_error("score matrix: no rows in " + path.string());
  const std::size_t n = by_task[order.front()].size();
  out.scores.resize(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(n));
  for (std::size_t m = 0; m < order.size(); ++m) {
    const auto& row = by_task[order[m]];
    if (row.size() != n) throw std::runtime_error("score matrix: ragged task " + order[m]);
    for (std::size_t j = 0; j < n; ++j) {
      out.scores(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) = row[j];
    }
  }
  out.tasks = std::move(order);
  out.validate();
  return out;
}

}  // namespace pbrl
