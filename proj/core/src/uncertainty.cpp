#include "pbrl/uncertainty.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace pbrl {

double ensemble_std(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("ensemble_std: need at least two members");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

Eigen::RowVectorXd ensemble_std(const Mat& predictions) {
  if (predictions.rows() < 2) throw std::invalid_argument("ensemble_std: need at least two members");
  const Eigen::RowVectorXd mean = predictions.colwise().mean();
  const Mat centered = predictions.rowwise() - mean;
  return (centered.array().square().colwise().sum() / static_cast<double>(predictions.rows()))
      .sqrt()
      .matrix();
}

void PenaltyConfig::validate() const {
  if (!(beta >= 0.0)) throw std::invalid_argument("PenaltyConfig: beta must be >= 0");
  if (!(lambda > 0.0)) throw std::invalid_argument("PenaltyConfig: lambda must be > 0");
}

Mat covariate_matrix(std::span<const Vec> features, double lambda, Eigen::Index dim) {
  Mat cov = lambda * Mat::Identity(dim, dim);
  for (const auto& phi : features) {
    if (phi.size() != dim) throw std::invalid_argument("covariate_matrix: dimension mismatch");
    cov.selfadjointView<Eigen::Lower>().rankUpdate(phi);
  }
  return cov.selfadjointView<Eigen::Lower>();
}

double lcb_penalty(const Vec& phi, std::span<const Vec> data_features, const PenaltyConfig& cfg) {
  return LcbPenalty(data_features, cfg, phi.size())(phi);
}

LcbPenalty::LcbPenalty(std::span<const Vec> data_features, const PenaltyConfig& cfg,
                       Eigen::Index dim)
    : factor_((cfg.validate(), covariate_matrix(data_features, cfg.lambda, dim))), beta_(cfg.beta) {}

LcbPenalty::LcbPenalty(const Mat& covariate, double beta) : factor_(covariate), beta_(beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("LcbPenalty: beta must be >= 0");
}

double BayesPosterior::predictive_std(const Vec& phi) const {
  return std::sqrt(std::max(0.0, phi.dot(covariance * phi)));
}

BayesPosterior bayes_posterior(std::span<const std::pair<Vec, double>> data, double lambda,
                               Eigen::Index dim) {
  if (!(lambda > 0.0)) throw std::invalid_argument("bayes_posterior: lambda must be > 0");
  Mat precision = lambda * Mat::Identity(dim, dim);
  Vec moment = Vec::Zero(dim);
  for (const auto& [phi, y] : data) {
    if (phi.size() != dim) throw std::invalid_argument("bayes_posterior: dimension mismatch");
    precision.noalias() += phi * phi.transpose();
    moment += y * phi;
  }
  const SpdFactor factor(precision);
  BayesPosterior post;
  post.lambda = lambda;
  post.mean = factor.solve(moment);
  post.covariance = factor.inverse();
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
  return post;
}

Mat linear_prior_ensemble(std::span<const std::pair<Vec, double>> data, double lambda,
                          Eigen::Index dim, std::size_t k, SeededRng& rng) {
  if (!(lambda > 0.0)) throw std::invalid_argument("linear_prior_ensemble: lambda must be > 0");
  std::vector<Vec> phis;
  for (const auto& d : data) phis.push_back(d.first);
  const SpdFactor factor(covariate_matrix(phis, lambda, dim));
  Mat members(static_cast<Eigen::Index>(k), dim);
  const double prior_sd = 1.0 / std::sqrt(lambda);
  for (Eigen::Index m = 0; m < members.rows(); ++m) {
    Vec rhs(dim);
    for (Eigen::Index j = 0; j < dim; ++j) rhs[j] = lambda * prior_sd * rng.normal();
    for (const auto& [phi, y] : data) rhs += (y + rng.normal()) * phi;
    members.row(m) = factor.solve(rhs).transpose();
  }
  return members;
}

double count_penalty(std::size_t n, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("count_penalty: lambda must be > 0");
  return 1.0 / std::sqrt(static_cast<double>(n) + lambda);
}

double calibrate_beta(std::size_t d, std::size_t horizon, double xi, double c) {
  if (!(xi > 0.0 && xi < 1.0)) throw std::invalid_argument("calibrate_beta: xi must be in (0, 1)");
  const double t = static_cast<double>(horizon);
  return c * t * std::sqrt(static_cast<double>(d)) * std::log(t / xi);
}

}  // namespace pbrl
