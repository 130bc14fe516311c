#pragma once

#include "pbrl/numerics.hpp"

#include <span>
#include <utility>
#include <vector>

namespace pbrl {

/// Population standard deviation of ensemble predictions (divisor K).
double ensemble_std(std::span<const double> values);

/// Column-wise ensemble std of a (K x batch) prediction matrix.
Eigen::RowVectorXd ensemble_std(const Mat& predictions);

struct PenaltyConfig {
  double beta = 1.0;
  double lambda = 1.0;

  void validate() const;
};

/// Lambda = sum_i phi_i phi_i^T + lambda I
Mat covariate_matrix(std::span<const Vec> features, double lambda, Eigen::Index dim);

/// beta * sqrt(phi^T Lambda^{-1} phi)
double lcb_penalty(const Vec& phi, std::span<const Vec> data_features, const PenaltyConfig& cfg);

/// Factor Lambda once, then evaluate many penalties.
class LcbPenalty {
 public:
  LcbPenalty(std::span<const Vec> data_features, const PenaltyConfig& cfg, Eigen::Index dim);
  LcbPenalty(const Mat& covariate, double beta);

  double width(const Vec& phi) const { return std::sqrt(factor_.quad_form(phi)); }
  double operator()(const Vec& phi) const { return beta_ * width(phi); }
  const SpdFactor& factor() const { return factor_; }
  double beta() const { return beta_; }

 private:
  SpdFactor factor_;
  double beta_;
};

/// Gaussian posterior of ridge weights under a N(0, I/lambda) prior and unit noise.
struct BayesPosterior {
  Vec mean;
  Mat covariance;
  double lambda = 1.0;

  double predictive_mean(const Vec& phi) const { return phi.dot(mean); }
  /// sqrt(phi^T Lambda^{-1} phi)
  double predictive_std(const Vec& phi) const;
};

BayesPosterior bayes_posterior(std::span<const std::pair<Vec, double>> data, double lambda,
                               Eigen::Index dim);

/// K linear members (rows), each a ridge fit to noisy targets y + N(0, 1)
/// regularized toward its own prior draw w0 ~ N(0, I / lambda).
Mat linear_prior_ensemble(std::span<const std::pair<Vec, double>> data, double lambda,
                          Eigen::Index dim, std::size_t k, SeededRng& rng);

/// 1 / sqrt(n + lambda)
double count_penalty(std::size_t n, double lambda);

/// c * T * sqrt(d) * log(T / xi); c is a tuning constant.
double calibrate_beta(std::size_t d, std::size_t horizon, double xi, double c = 1.0);

}  // namespace pbrl
