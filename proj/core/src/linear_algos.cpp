#include "pbrl/linear_algos.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pbrl {

Mat OodAugmentation::covariate(Eigen::Index dim) const {
  Mat cov = Mat::Zero(dim, dim);
  for (const auto& p : points) {
    if (p.phi.size() != dim) throw std::invalid_argument("OodAugmentation: dimension mismatch");
    cov.noalias() += p.phi * p.phi.transpose();
  }
  return cov;
}

double OodAugmentation::min_eigenvalue(Eigen::Index dim) const {
  Eigen::SelfAdjointEigenSolver<Mat> eig(covariate(dim), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

OodAugmentation OodAugmentation::ridge_anchors(Eigen::Index dim, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("ridge_anchors: lambda must be > 0");
  OodAugmentation aug;
  const double scale = std::sqrt(lambda);
  for (Eigen::Index j = 0; j < dim; ++j) {
    Vec e = Vec::Zero(dim);
    e[j] = scale;
    aug.points.push_back({e, 0.0});
  }
  return aug;
}

namespace {

void check_step(const LsviStepData& step, Eigen::Index dim) {
  if (step.reward.size() != step.phi.size() || step.next_value.size() != step.phi.size()) {
    throw std::invalid_argument("LsviStepData: ragged step data");
  }
  for (const auto& phi : step.phi) {
    if (phi.size() != dim) throw std::invalid_argument("LsviStepData: dimension mismatch");
  }
}

// Normal equations accumulated from in-distribution data.
void accumulate(const LsviStepData& step, Mat& cov, Vec& moment) {
  for (std::size_t i = 0; i < step.size(); ++i) {
    cov.noalias() += step.phi[i] * step.phi[i].transpose();
    moment += (step.reward[i] + step.next_value[i]) * step.phi[i];
  }
}

}  // namespace

LsviSolution lsvi_solve(const std::vector<LsviStepData>& steps, double lambda, Eigen::Index dim) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lsvi_solve: lambda must be > 0");
  LsviSolution sol;
  sol.weights.resize(steps.size());
  sol.covariates.resize(steps.size());
  for (std::size_t t = steps.size(); t-- > 0;) {
    check_step(steps[t], dim);
    Mat cov = lambda * Mat::Identity(dim, dim);
    Vec moment = Vec::Zero(dim);
    accumulate(steps[t], cov, moment);
    sol.weights[t] = spd_solve(cov, moment);
    sol.covariates[t] = std::move(cov);
  }
  return sol;
}

LsviSolution lsvi_solve_ood(const std::vector<LsviStepData>& steps,
                            const std::vector<OodAugmentation>& ood, Eigen::Index dim) {
  if (ood.size() != 1 && ood.size() != steps.size()) {
    throw std::invalid_argument("lsvi_solve_ood: need one augmentation per step or a shared one");
  }
  LsviSolution sol;
  sol.weights.resize(steps.size());
  sol.covariates.resize(steps.size());
  for (std::size_t t = steps.size(); t-- > 0;) {
    check_step(steps[t], dim);
    const OodAugmentation& aug = ood.size() == 1 ? ood.front() : ood[t];
    Mat cov = Mat::Zero(dim, dim);
    Vec moment = Vec::Zero(dim);
    accumulate(steps[t], cov, moment);
    for (const auto& p : aug.points) {
      if (p.phi.size() != dim) throw std::invalid_argument("lsvi_solve_ood: dimension mismatch");
      cov.noalias() += p.phi * p.phi.transpose();
      moment += p.target * p.phi;
    }
    // No jitter here: a singular combined covariate is a caller error.
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("lsvi_solve_ood: combined covariate matrix is singular");
    }
    Vec w = llt.solve(moment);
    if (!w.allFinite()) throw NumericalError("lsvi_solve_ood: non-finite solution");
    sol.weights[t] = std::move(w);
    sol.covariates[t] = std::move(cov);
  }
  return sol;
}

// ------------------------------------------------------------ tabular tools

TabularBehavior uniform_behavior(std::size_t n_actions) {
  return [n_actions](std::size_t, std::size_t, SeededRng& rng) { return rng.below(n_actions); };
}

EpisodicDataset collect_episodes(const LinearMdpSpec& spec, std::size_t episodes,
                                 const TabularBehavior& behavior, SeededRng& rng) {
  const Mat p = spec.transition_matrix();
  EpisodicDataset data;
  data.horizon = spec.horizon;
  data.steps.assign(spec.horizon, {});
  for (auto& s : data.steps) s.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    std::size_t s = spec.initial_state;
    for (std::size_t t = 0; t < spec.horizon; ++t) {
      const std::size_t a = behavior(t, s, rng);
      const auto row = static_cast<Eigen::Index>(spec.pair_index(s, a));
      double u = rng.uniform();
      std::size_t next = spec.n_states - 1;
      for (std::size_t sp = 0; sp < spec.n_states; ++sp) {
        u -= p(row, static_cast<Eigen::Index>(sp));
        if (u < 0.0) {
          next = sp;
          break;
        }
      }
      data.steps[t].push_back({s, a, spec.reward(s, a), next});
      s = next;
    }
  }
  return data;
}

namespace {

std::size_t greedy(const Mat& q, Eigen::Index s) {
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < q.cols(); ++a) {
    if (q(s, a) > q(s, best)) best = a;
  }
  return static_cast<std::size_t>(best);
}

Mat as_state_action(const LinearMdpSpec& spec, const Vec& per_pair) {
  const auto ns = static_cast<Eigen::Index>(spec.n_states);
  const auto na = static_cast<Eigen::Index>(spec.n_actions);
  Mat q(ns, na);
  for (Eigen::Index s = 0; s < ns; ++s) {
    for (Eigen::Index a = 0; a < na; ++a) q(s, a) = per_pair[s * na + a];
  }
  return q;
}

}  // namespace

FiniteHorizonSolution optimal_values(const LinearMdpSpec& spec) {
  const std::size_t horizon = spec.horizon;
  FiniteHorizonSolution sol;
  sol.q.resize(horizon);
  sol.policy.resize(horizon);
  sol.v.assign(horizon + 1, Vec::Zero(static_cast<Eigen::Index>(spec.n_states)));
  for (std::size_t t = horizon; t-- > 0;) {
    sol.q[t] = as_state_action(spec, spec.bellman(sol.v[t + 1]));
    sol.policy[t].resize(spec.n_states);
    for (std::size_t s = 0; s < spec.n_states; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      sol.policy[t][s] = greedy(sol.q[t], si);
      sol.v[t][si] = sol.q[t](si, static_cast<Eigen::Index>(sol.policy[t][s]));
    }
  }
  return sol;
}

std::vector<Vec> evaluate_policy(const LinearMdpSpec& spec,
                                 const std::vector<std::vector<std::size_t>>& policy) {
  const std::size_t horizon = spec.horizon;
  if (policy.size() != horizon) throw std::invalid_argument("evaluate_policy: policy length != horizon");
  std::vector<Vec> v(horizon + 1, Vec::Zero(static_cast<Eigen::Index>(spec.n_states)));
  for (std::size_t t = horizon; t-- > 0;) {
    const Mat q = as_state_action(spec, spec.bellman(v[t + 1]));
    for (std::size_t s = 0; s < spec.n_states; ++s) {
      v[t][static_cast<Eigen::Index>(s)] =
          q(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(policy[t][s]));
    }
  }
  return v;
}

TabularBehavior epsilon_optimal_behavior(const FiniteHorizonSolution& optimal,
                                         std::size_t n_actions, double epsilon) {
  return [policy = optimal.policy, n_actions, epsilon](std::size_t t, std::size_t s, SeededRng& rng) {
    if (rng.bernoulli(epsilon)) return static_cast<std::size_t>(rng.below(n_actions));
    return policy[t][s];
  };
}

namespace {

LsviStepData step_data(const LinearMdpSpec& spec, const std::vector<EpisodeStep>& steps,
                       const Vec& next_value) {
  LsviStepData data;
  for (const auto& e : steps) {
    data.phi.push_back(spec.phi(e.state, e.action));
    data.reward.push_back(e.reward);
    data.next_value.push_back(next_value[static_cast<Eigen::Index>(e.next_state)]);
  }
  return data;
}

}  // namespace

PeviResult pevi(const LinearMdpSpec& spec, const EpisodicDataset& data, const PenaltyConfig& cfg) {
  cfg.validate();
  if (data.steps.size() != spec.horizon) throw std::invalid_argument("pevi: dataset horizon mismatch");
  const auto dim = static_cast<Eigen::Index>(spec.d);
  const auto ns = static_cast<Eigen::Index>(spec.n_states);
  const auto na = static_cast<Eigen::Index>(spec.n_actions);
  const std::size_t horizon = spec.horizon;

  PeviResult res;
  res.weights.resize(horizon);
  res.q_hat.resize(horizon);
  res.penalty.resize(horizon);
  res.policy.resize(horizon);
  res.v_hat.assign(horizon + 1, Vec::Zero(ns));

  for (std::size_t t = horizon; t-- > 0;) {
    const LsviStepData step = step_data(spec, data.steps[t], res.v_hat[t + 1]);
    const LsviSolution fit = lsvi_solve({step}, cfg.lambda, dim);
    res.weights[t] = fit.weights.front();
    const LcbPenalty gamma(fit.covariates.front(), cfg.beta);
    const double cap = static_cast<double>(horizon - t);
    res.q_hat[t] = Mat::Zero(ns, na);
    res.penalty[t] = Mat::Zero(ns, na);
    res.policy[t].resize(spec.n_states);
    for (Eigen::Index s = 0; s < ns; ++s) {
      for (Eigen::Index a = 0; a < na; ++a) {
        const Vec phi = spec.phi(static_cast<std::size_t>(s), static_cast<std::size_t>(a));
        const double g = gamma(phi);
        res.penalty[t](s, a) = g;
        res.q_hat[t](s, a) = std::clamp(res.weights[t].dot(phi) - g, 0.0, cap);
      }
      const std::size_t best = greedy(res.q_hat[t], s);
      res.policy[t][static_cast<std::size_t>(s)] = best;
      res.v_hat[t][s] = res.q_hat[t](s, static_cast<Eigen::Index>(best));
    }
  }
  return res;
}

CoverageReport xi_coverage_check(const LinearMdpSpec& spec, const EpisodicDataset& data,
                                 const CoverageOptions& opts, SeededRng& rng) {
  opts.penalty.validate();
  if (data.steps.size() != spec.horizon) throw std::invalid_argument("xi_coverage_check: horizon mismatch");
  const auto dim = static_cast<Eigen::Index>(spec.d);
  const auto ns = static_cast<Eigen::Index>(spec.n_states);
  const auto na = static_cast<Eigen::Index>(spec.n_actions);
  const std::size_t horizon = spec.horizon;
  const double lambda = opts.penalty.lambda;
  const double beta = opts.penalty.beta;

  std::vector<Mat> abs_error(horizon), width(horizon);
  Vec next_value = Vec::Zero(ns);
  CoverageReport report;
  report.min_ood_eigenvalue = std::numeric_limits<double>::infinity();

  for (std::size_t t = horizon; t-- > 0;) {
    const LsviStepData step = step_data(spec, data.steps[t], next_value);
    // Exact Bellman backup of this step's V_{t+1}, as weights and per pair.
    const Vec true_w = spec.reward_weights + spec.next_state_weights.transpose() * next_value;
    const Vec true_backup = spec.bellman(next_value);

    OodAugmentation aug = OodAugmentation::ridge_anchors(dim, lambda);
    for (std::size_t j = 0; j < opts.n_ood_random; ++j) {
      const auto s = static_cast<std::size_t>(rng.below(spec.n_states));
      const auto a = static_cast<std::size_t>(rng.below(spec.n_actions));
      aug.points.push_back({spec.phi(s, a), 0.0});
    }
    if (opts.mode == OodTargetMode::true_bellman) {
      for (auto& p : aug.points) p.target = p.phi.dot(true_w);
    } else {
      const LsviSolution ridge = lsvi_solve({step}, lambda, dim);
      const LcbPenalty ridge_gamma(ridge.covariates.front(), beta);
      for (auto& p : aug.points) p.target = p.phi.dot(ridge.weights.front()) - ridge_gamma(p.phi);
    }
    report.min_ood_eigenvalue = std::min(report.min_ood_eigenvalue, aug.min_eigenvalue(dim));

    const LsviSolution fit = lsvi_solve_ood({step}, {aug}, dim);
    const Vec& w = fit.weights.front();
    const SpdFactor factor(fit.covariates.front());
    abs_error[t] = Mat::Zero(ns, na);
    width[t] = Mat::Zero(ns, na);
    Vec value = Vec::Zero(ns);
    const double cap = static_cast<double>(horizon - t);
    for (Eigen::Index s = 0; s < ns; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < na; ++a) {
        const Vec phi = spec.phi(static_cast<std::size_t>(s), static_cast<std::size_t>(a));
        const double estimate = phi.dot(w);
        abs_error[t](s, a) = std::abs(estimate - true_backup[s * na + a]);
        width[t](s, a) = std::sqrt(factor.quad_form(phi));
        best = std::max(best, estimate);
      }
      value[s] = std::clamp(best, 0.0, cap);
    }
    next_value = value;
  }

  report.probes = opts.n_probes;
  for (std::size_t i = 0; i < opts.n_probes; ++i) {
    const auto t = static_cast<std::size_t>(rng.below(horizon));
    const auto s = static_cast<Eigen::Index>(rng.below(spec.n_states));
    const auto a = static_cast<Eigen::Index>(rng.below(spec.n_actions));
    const double err = abs_error[t](s, a);
    report.max_abs_error = std::max(report.max_abs_error, err);
    if (err <= beta * width[t](s, a)) ++report.covered;
  }
  report.coverage = opts.n_probes == 0
                        ? 1.0
                        : static_cast<double>(report.covered) / static_cast<double>(opts.n_probes);
  return report;
}

SuboptimalityCheck suboptimality_bound_check(const LinearMdpSpec& spec, const PeviResult& result) {
  const FiniteHorizonSolution opt = optimal_values(spec);
  const std::vector<Vec> v_pi = evaluate_policy(spec, result.policy);
  const auto s1 = static_cast<Eigen::Index>(spec.initial_state);
  SuboptimalityCheck check;
  check.gap = opt.v[0][s1] - v_pi[0][s1];

  const Mat p = spec.transition_matrix();
  const auto ns = static_cast<Eigen::Index>(spec.n_states);
  const auto na = static_cast<Eigen::Index>(spec.n_actions);
  Vec dist = Vec::Zero(ns);
  dist[s1] = 1.0;
  for (std::size_t t = 0; t < spec.horizon; ++t) {
    Vec next = Vec::Zero(ns);
    for (Eigen::Index s = 0; s < ns; ++s) {
      if (dist[s] == 0.0) continue;
      const auto a = static_cast<Eigen::Index>(opt.policy[t][static_cast<std::size_t>(s)]);
      check.bound += dist[s] * result.penalty[t](s, a);
      next += dist[s] * p.row(s * na + a).transpose();
    }
    dist = next;
  }
  return check;
}

double pevi_quantifier_coverage(const LinearMdpSpec& spec, const PeviResult& result) {
  const auto ns = static_cast<Eigen::Index>(spec.n_states);
  const auto na = static_cast<Eigen::Index>(spec.n_actions);
  std::size_t covered = 0;
  std::size_t total = 0;
  for (std::size_t t = 0; t < spec.horizon; ++t) {
    const Vec backup = spec.bellman(result.v_hat[t + 1]);
    for (Eigen::Index s = 0; s < ns; ++s) {
      for (Eigen::Index a = 0; a < na; ++a) {
        const Vec phi = spec.phi(static_cast<std::size_t>(s), static_cast<std::size_t>(a));
        const double err = std::abs(result.weights[t].dot(phi) - backup[s * na + a]);
        if (err <= result.penalty[t](s, a)) ++covered;
        ++total;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(total);
}

}  // namespace pbrl
