#pragma once

#include "pbrl/envs.hpp"
#include "pbrl/numerics.hpp"
#include "pbrl/uncertainty.hpp"

#include <functional>
#include <vector>

namespace pbrl {

/// Regression inputs for one step t: target_i = reward_i + next_value_i.
struct LsviStepData {
  std::vector<Vec> phi;
  std::vector<double> reward;
  std::vector<double> next_value;

  std::size_t size() const { return phi.size(); }
};

struct LsviSolution {
  std::vector<Vec> weights;     // per step
  std::vector<Mat> covariates;  // per step, Lambda_t (or the augmented matrix)
};

struct RegressionPoint {
  Vec phi;
  double target = 0.0;
};

/// Extra OOD regression points; their outer products stand in for the ridge prior.
struct OodAugmentation {
  std::vector<RegressionPoint> points;

  Mat covariate(Eigen::Index dim) const;
  double min_eigenvalue(Eigen::Index dim) const;

  /// {(sqrt(lambda) e_j, 0)}_j, whose covariate is exactly lambda I.
  static OodAugmentation ridge_anchors(Eigen::Index dim, double lambda);
};

/// Ridge regression per step: w_t = Lambda_t^{-1} sum phi (r + V'), Lambda_t = sum phi phi^T + lambda I.
LsviSolution lsvi_solve(const std::vector<LsviStepData>& steps, double lambda, Eigen::Index dim);

/// Least squares with OOD points and no ridge term. `ood` holds one augmentation
/// per step, or a single one shared by every step. Throws NumericalError if the
/// combined covariate is singular.
LsviSolution lsvi_solve_ood(const std::vector<LsviStepData>& steps,
                            const std::vector<OodAugmentation>& ood, Eigen::Index dim);

// ------------------------------------------------------------ tabular tools

struct EpisodeStep {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0.0;
  std::size_t next_state = 0;
};

/// steps[t] holds one entry per episode for t = 0..T-1.
struct EpisodicDataset {
  std::size_t horizon = 0;
  std::vector<std::vector<EpisodeStep>> steps;

  std::size_t episodes() const { return steps.empty() ? 0 : steps.front().size(); }
  bool empty() const { return episodes() == 0; }
};

using TabularBehavior = std::function<std::size_t(std::size_t t, std::size_t state, SeededRng&)>;

/// Behaviour that plays uniformly random actions.
TabularBehavior uniform_behavior(std::size_t n_actions);

EpisodicDataset collect_episodes(const LinearMdpSpec& spec, std::size_t episodes,
                                 const TabularBehavior& behavior, SeededRng& rng);

/// Exact finite-horizon dynamic programming. Index t is 0-based; v has T+1 entries with v[T] = 0.
struct FiniteHorizonSolution {
  std::vector<Mat> q;  // (S x A)
  std::vector<Vec> v;
  std::vector<std::vector<std::size_t>> policy;  // greedy, ties -> lowest action
};

FiniteHorizonSolution optimal_values(const LinearMdpSpec& spec);

/// V^pi_t for a deterministic time-dependent policy.
std::vector<Vec> evaluate_policy(const LinearMdpSpec& spec,
                                 const std::vector<std::vector<std::size_t>>& policy);

/// Behaviour that follows the optimal policy with probability 1 - epsilon.
TabularBehavior epsilon_optimal_behavior(const FiniteHorizonSolution& optimal,
                                         std::size_t n_actions, double epsilon);

struct PeviResult {
  std::vector<Vec> weights;
  std::vector<Mat> q_hat;    // clamp(w^T phi - Gamma, 0, T - t), (S x A)
  std::vector<Mat> penalty;  // Gamma_t(s, a), (S x A)
  std::vector<Vec> v_hat;    // T+1 entries
  std::vector<std::vector<std::size_t>> policy;
};

/// Pessimistic value iteration with the LCB penalty.
PeviResult pevi(const LinearMdpSpec& spec, const EpisodicDataset& data, const PenaltyConfig& cfg);

enum class OodTargetMode { true_bellman, pbrl_estimate };

struct CoverageOptions {
  PenaltyConfig penalty;
  OodTargetMode mode = OodTargetMode::true_bellman;
  std::size_t n_probes = 1000;
  /// Uniformly random (s, a) OOD pairs per step on top of the sqrt(lambda) e_j anchors.
  std::size_t n_ood_random = 0;
};

struct CoverageReport {
  double coverage = 0.0;
  std::size_t probes = 0;
  std::size_t covered = 0;
  double min_ood_eigenvalue = 0.0;
  double max_abs_error = 0.0;
};

/// Fraction of random (t, s, a) probes with |T^ V_{t+1} - T V_{t+1}| <= Gamma_t.
/// V_{t+1} comes from the unpenalized OOD-augmented recursion (clipped to
/// [0, T - t - 1]) so the fit does not depend on beta.
CoverageReport xi_coverage_check(const LinearMdpSpec& spec, const EpisodicDataset& data,
                                 const CoverageOptions& opts, SeededRng& rng);

struct SuboptimalityCheck {
  double gap = 0.0;    // V*(s1) - V^pi(s1)
  double bound = 0.0;  // sum_t E_{pi*}[Gamma_t(s_t, a_t) | s1]
};

SuboptimalityCheck suboptimality_bound_check(const LinearMdpSpec& spec, const PeviResult& result);

/// Fraction of all (t, s, a) where PEVI's unpenalized ridge estimate is within
/// Gamma_t of the exact backup of its own V_{t+1}.
double pevi_quantifier_coverage(const LinearMdpSpec& spec, const PeviResult& result);

}  // namespace pbrl
