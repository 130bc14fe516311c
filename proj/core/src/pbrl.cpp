#include "pbrl/pbrl.hpp"

#include "pbrl/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pbrl {

std::string to_string(ActorAggregate a) {
  switch (a) {
    case ActorAggregate::min: return "min";
    case ActorAggregate::mean: return "mean";
    case ActorAggregate::max: return "max";
  }
  return "?";
}

std::string to_string(PenaltySite s) {
  switch (s) {
    case PenaltySite::next_q: return "next_q";
    case PenaltySite::reward: return "reward";
    case PenaltySite::both: return "both";
  }
  return "?";
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::pbrl: return "pbrl";
    case Variant::naive: return "naive";
    case Variant::l2: return "l2";
    case Variant::sn_last: return "sn_last";
    case Variant::sn_last2: return "sn_last2";
    case Variant::pi_small: return "pi_small";
    case Variant::pi_large: return "pi_large";
    case Variant::zero_target: return "zero_target";
  }
  return "?";
}

ActorAggregate parse_actor_aggregate(const std::string& s) {
  if (s == "min") return ActorAggregate::min;
  if (s == "mean") return ActorAggregate::mean;
  if (s == "max") return ActorAggregate::max;
  throw std::invalid_argument("unknown actor aggregate: " + s);
}

PenaltySite parse_penalty_site(const std::string& s) {
  if (s == "next_q") return PenaltySite::next_q;
  if (s == "reward") return PenaltySite::reward;
  if (s == "both") return PenaltySite::both;
  throw std::invalid_argument("unknown penalty site: " + s);
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::pbrl, Variant::naive, Variant::l2, Variant::sn_last, Variant::sn_last2,
                    Variant::pi_small, Variant::pi_large, Variant::zero_target}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant: " + s);
}

void BetaOodSchedule::validate() const {
  if (!(start >= 0.0) || !(end >= 0.0) || !(floor >= 0.0)) {
    throw std::invalid_argument("beta_ood schedule: values must be >= 0");
  }
  if (constant) return;
  if (start < end) throw std::invalid_argument("beta_ood schedule: start must be >= end");
  if (!(post_rate > 0.0 && post_rate <= 1.0)) {
    throw std::invalid_argument("beta_ood schedule: post_rate must be in (0, 1]");
  }
  if (post_interval == 0) throw std::invalid_argument("beta_ood schedule: post_interval must be > 0");
  if (floor > end) throw std::invalid_argument("beta_ood schedule: floor must be <= end");
}

double beta_ood_at(std::size_t step, const BetaOodSchedule& s) {
  if (s.constant) return s.start;
  if (step <= s.linear_steps && s.linear_steps > 0) {
    const double frac = static_cast<double>(step) / static_cast<double>(s.linear_steps);
    return s.start + (s.end - s.start) * frac;
  }
  const double k = static_cast<double>(step - s.linear_steps) / static_cast<double>(s.post_interval);
  return std::max(s.floor, s.end * std::pow(s.post_rate, k));
}

void PbrlConfig::validate() const {
  if (ensemble_size < 2) throw std::invalid_argument("config: ensemble_size must be >= 2");
  if (!(beta_in >= 0.0)) throw std::invalid_argument("config: beta_in must be >= 0");
  beta_ood.validate();
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("config: gamma must be in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("config: tau must be in (0, 1]");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) {
    throw std::invalid_argument("config: learning rates must be > 0");
  }
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be > 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("config: alpha must be >= 0");
  if (!(prior_scale >= 0.0)) throw std::invalid_argument("config: prior_scale must be >= 0");
  if (!(l2_scale >= 0.0)) throw std::invalid_argument("config: l2_scale must be >= 0");
  if (sn_iterations < 1) throw std::invalid_argument("config: sn_iterations must be >= 1");
  if (eval_interval == 0) throw std::invalid_argument("config: eval_interval must be > 0");
  if (eval_episodes == 0) throw std::invalid_argument("config: eval_episodes must be > 0");
  if (probe_size == 0) throw std::invalid_argument("config: probe_size must be > 0");
  for (std::size_t h : critic_hidden) {
    if (h == 0) throw std::invalid_argument("config: zero-width critic layer");
  }
  for (std::size_t h : actor_hidden) {
    if (h == 0) throw std::invalid_argument("config: zero-width actor layer");
  }
}

namespace {

bool naive_family(Variant v) { return v != Variant::pbrl && v != Variant::zero_target; }

}  // namespace

double PbrlConfig::effective_beta_in() const { return naive_family(variant) ? 0.0 : beta_in; }

std::size_t PbrlConfig::effective_n_ood() const { return naive_family(variant) ? 0 : n_ood; }

BetaOodSchedule PbrlConfig::schedule() const {
  BetaOodSchedule s = beta_ood;
  if (beta_ood_rescale) s.linear_steps = std::min(s.linear_steps, (steps + 9) / 10);
  return s;
}

double in_target(double reward, double next_q, double next_u, double beta_in, double gamma) {
  return reward + gamma * (next_q - beta_in * next_u);
}

double ood_target(double q_ood, double u_ood, double beta_ood) {
  return std::max(0.0, q_ood - beta_ood * u_ood);
}

// ------------------------------------------------------------------ policy

namespace {

/// log(1 - tanh(u)^2) without cancellation.
double log1m_tanh2(double u) {
  const double x = -2.0 * u;
  const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::numbers::ln2 - u - softplus);
}

Mat softmax_columns(const Mat& logits) {
  Mat p = logits;
  for (Eigen::Index b = 0; b < p.cols(); ++b) {
    const double m = p.col(b).maxCoeff();
    p.col(b) = (p.col(b).array() - m).exp().matrix();
    p.col(b) /= p.col(b).sum();
  }
  return p;
}

const double kInsideBox = std::nextafter(1.0, 0.0);

}  // namespace

Policy::Policy(std::size_t state_dim, std::size_t action_dim, bool discrete,
               const std::vector<std::size_t>& hidden, SeededRng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), discrete_(discrete) {
  if (state_dim == 0 || action_dim == 0) throw std::invalid_argument("Policy: zero dimension");
  std::vector<std::size_t> sizes{state_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(discrete ? action_dim : 2 * action_dim);
  net_ = make_mlp(sizes, rng);
  // Small output layer: the initial policy starts close to uniform.
  net_.layers.back().weight *= 0.1;
  net_.layers.back().bias *= 0.1;
}

Mat Policy::draw_noise(std::size_t batch, SeededRng& rng) const {
  Mat noise(static_cast<Eigen::Index>(action_dim_), static_cast<Eigen::Index>(batch));
  if (discrete_) return Mat::Zero(noise.rows(), noise.cols());
  for (Eigen::Index b = 0; b < noise.cols(); ++b) {
    for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, b) = rng.normal();
  }
  return noise;
}

Mat Policy::probabilities(const Mat& states) const {
  if (!discrete_) throw std::logic_error("Policy::probabilities: continuous policy");
  return softmax_columns(forward(net_, states));
}

Mat Policy::sample(const Mat& states, const Mat& noise, SeededRng& rng) const {
  const auto adim = static_cast<Eigen::Index>(action_dim_);
  if (discrete_) {
    const Mat p = probabilities(states);
    Mat a = Mat::Zero(adim, states.cols());
    for (Eigen::Index b = 0; b < states.cols(); ++b) {
      double u = rng.uniform();
      Eigen::Index pick = adim - 1;
      for (Eigen::Index j = 0; j < adim; ++j) {
        u -= p(j, b);
        if (u < 0.0) {
          pick = j;
          break;
        }
      }
      a(pick, b) = 1.0;
    }
    return a;
  }
  const Mat out = forward(net_, states);
  const Mat log_std = out.bottomRows(adim).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  const Mat u = out.topRows(adim) + (log_std.array().exp() * noise.array()).matrix();
  return u.array().tanh().cwiseMax(-kInsideBox).cwiseMin(kInsideBox).matrix();
}

Mat Policy::sample(const Mat& states, SeededRng& rng) const {
  return sample(states, draw_noise(static_cast<std::size_t>(states.cols()), rng), rng);
}

Mat Policy::deterministic(const Mat& states) const {
  const auto adim = static_cast<Eigen::Index>(action_dim_);
  const Mat out = forward(net_, states);
  if (discrete_) {
    Mat a = Mat::Zero(adim, states.cols());
    for (Eigen::Index b = 0; b < states.cols(); ++b) {
      a(static_cast<Eigen::Index>(arg_max(out.col(b))), b) = 1.0;
    }
    return a;
  }
  return out.topRows(adim).array().tanh().cwiseMax(-kInsideBox).cwiseMin(kInsideBox).matrix();
}

Mat critic_input(const Mat& states, const Mat& actions) {
  if (states.cols() != actions.cols()) throw std::invalid_argument("critic_input: batch mismatch");
  Mat x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

// ------------------------------------------------------------------ critic

CriticTargets compute_targets(const EnsembleCritic& critic, const CriticBatch& batch,
                              const PbrlConfig& cfg, double beta_ood) {
  const auto k_members = static_cast<Eigen::Index>(critic.size());
  const Eigen::Index b_size = batch.states.cols();
  const double beta_in = cfg.effective_beta_in();
  const bool next_site = cfg.in_penalty_site != PenaltySite::reward;
  const bool reward_site = cfg.in_penalty_site != PenaltySite::next_q;

  CriticTargets out;
  const Mat next_q = critic.predict(critic_input(batch.next_states, batch.next_actions), true);
  const Eigen::RowVectorXd next_u = ensemble_std(next_q);
  Eigen::RowVectorXd reward = batch.rewards.transpose();
  if (reward_site && beta_in > 0.0) {
    const Mat q_now = critic.predict(critic_input(batch.states, batch.actions), false);
    reward -= beta_in * ensemble_std(q_now);
  }
  out.in.resize(k_members, b_size);
  for (Eigen::Index b = 0; b < b_size; ++b) {
    const bool terminal = batch.terminals[b] != 0.0;
    const double u = terminal ? 0.0 : next_u[b];
    for (Eigen::Index k = 0; k < k_members; ++k) {
      const double q = terminal ? 0.0 : next_q(k, b);
      out.in(k, b) = in_target(reward[b], q, u, next_site ? beta_in : 0.0, cfg.gamma);
    }
  }
  out.next_u_mean = b_size > 0 ? next_u.mean() : 0.0;

  const Eigen::Index n_ood = batch.ood_states.cols();
  out.ood.resize(k_members, n_ood);
  if (n_ood > 0) {
    const Mat q_ood = critic.predict(critic_input(batch.ood_states, batch.ood_actions), false);
    const Eigen::RowVectorXd u_ood = ensemble_std(q_ood);
    for (Eigen::Index j = 0; j < n_ood; ++j) {
      for (Eigen::Index k = 0; k < k_members; ++k) {
        out.ood(k, j) = cfg.variant == Variant::zero_target ? 0.0
                                                            : ood_target(q_ood(k, j), u_ood[j], beta_ood);
      }
    }
    out.ood_u_mean = u_ood.mean();
    out.ood_q_mean = q_ood.mean();
  }
  return out;
}

CriticLoss critic_loss(const EnsembleCritic& critic, const CriticBatch& batch,
                       const CriticTargets& targets, const PbrlConfig& cfg) {
  const Eigen::Index n_in = batch.states.cols();
  const Eigen::Index n_ood = batch.ood_states.cols();
  Mat x(batch.states.rows() + batch.actions.rows(), n_in + n_ood);
  x.leftCols(n_in) = critic_input(batch.states, batch.actions);
  if (n_ood > 0) x.rightCols(n_ood) = critic_input(batch.ood_states, batch.ood_actions);

  CriticLoss out;
  out.member_loss.resize(critic.size());
  out.grads.reserve(critic.size());
  for (std::size_t k = 0; k < critic.size(); ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    ForwardCache cache;
    const Eigen::RowVectorXd q = critic.predict_member(k, x, false, &cache);
    Mat upstream(1, n_in + n_ood);
    double loss = 0.0;
    if (n_in > 0) {
      const Eigen::RowVectorXd r = q.head(n_in) - targets.in.row(ki);
      loss += r.squaredNorm() / static_cast<double>(n_in);
      upstream.leftCols(n_in) = (2.0 / static_cast<double>(n_in)) * r;
    }
    if (n_ood > 0) {
      const Eigen::RowVectorXd r = q.tail(n_ood) - targets.ood.row(ki);
      loss += r.squaredNorm() / static_cast<double>(n_ood);
      upstream.rightCols(n_ood) = (2.0 / static_cast<double>(n_ood)) * r;
    }
    const MlpParams& net = critic.member(k).trainable;
    MlpParams grad = net.zeros_like();
    backward(net, cache, upstream, grad);
    if (cfg.variant == Variant::l2 && cfg.l2_scale > 0.0) {
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        loss += cfg.l2_scale * net.layers[l].weight.squaredNorm();
        grad.layers[l].weight += 2.0 * cfg.l2_scale * net.layers[l].weight;
      }
    }
    out.member_loss[k] = loss;
    out.loss += loss;
    out.grads.push_back(std::move(grad));
  }
  return out;
}

// ------------------------------------------------------------------- actor

namespace {

/// Member k's prediction with caches for both halves, so input gradients can
/// flow through the frozen prior as well.
struct MemberPass {
  ForwardCache trainable;
  ForwardCache prior;
};

Eigen::RowVectorXd member_forward(const EnsembleCritic& critic, std::size_t k, const Mat& x,
                                  MemberPass& pass) {
  const PriorPair& pair = critic.member(k);
  Mat out = forward(pair.trainable, x, &pass.trainable);
  if (critic.shape().prior_enabled && critic.shape().prior_scale != 0.0) {
    out += critic.shape().prior_scale * forward(pair.prior, x, &pass.prior);
  }
  return out.row(0);
}

/// d(sum_b upstream_b Q_k(x_b)) / dx, (input x batch).
Mat member_input_grad(const EnsembleCritic& critic, std::size_t k, const MemberPass& pass,
                      const Mat& upstream) {
  const PriorPair& pair = critic.member(k);
  MlpParams scratch = pair.trainable.zeros_like();
  Mat dx;
  backward(pair.trainable, pass.trainable, upstream, scratch, &dx);
  if (critic.shape().prior_enabled && critic.shape().prior_scale != 0.0) {
    MlpParams prior_scratch = pair.prior.zeros_like();
    Mat dx_prior;
    backward(pair.prior, pass.prior, critic.shape().prior_scale * upstream, prior_scratch, &dx_prior);
    dx += dx_prior;
  }
  return dx;
}

/// Aggregated Q and the per-member weights d agg / d Q_k, both (K x batch) / (1 x batch).
struct Aggregate {
  Eigen::RowVectorXd value;
  Mat weight;  // (K x batch)
};

Aggregate aggregate(const Mat& q, ActorAggregate how) {
  Aggregate out;
  out.value.resize(q.cols());
  out.weight = Mat::Zero(q.rows(), q.cols());
  for (Eigen::Index b = 0; b < q.cols(); ++b) {
    if (how == ActorAggregate::mean) {
      out.value[b] = q.col(b).mean();
      out.weight.col(b).setConstant(1.0 / static_cast<double>(q.rows()));
      continue;
    }
    Eigen::Index pick = 0;
    for (Eigen::Index k = 1; k < q.rows(); ++k) {
      const bool better = how == ActorAggregate::min ? q(k, b) < q(pick, b) : q(k, b) > q(pick, b);
      if (better) pick = k;
    }
    out.value[b] = q(pick, b);
    out.weight(pick, b) = 1.0;
  }
  return out;
}

ActorLoss discrete_actor_loss(const Policy& policy, const EnsembleCritic& critic, const Mat& states,
                              const PbrlConfig& cfg) {
  const Eigen::Index batch = states.cols();
  const auto n_actions = static_cast<Eigen::Index>(policy.action_dim());
  ForwardCache cache;
  const Mat logits = forward(policy.net(), states, &cache);
  const Mat p = softmax_columns(logits);
  Mat log_p(n_actions, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double m = logits.col(b).maxCoeff();
    const double lse = m + std::log((logits.col(b).array() - m).exp().sum());
    log_p.col(b) = logits.col(b).array() - lse;
  }

  // Every action at every state: column b * n_actions + a.
  Mat x(states.rows() + n_actions, batch * n_actions);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index a = 0; a < n_actions; ++a) {
      auto col = x.col(b * n_actions + a);
      col.head(states.rows()) = states.col(b);
      col.tail(n_actions).setZero();
      col[states.rows() + a] = 1.0;
    }
  }
  const Aggregate agg = aggregate(critic.predict(x, false), cfg.actor_aggregate);

  ActorLoss out;
  Mat upstream(n_actions, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    Vec f(n_actions);
    for (Eigen::Index a = 0; a < n_actions; ++a) {
      f[a] = cfg.alpha * log_p(a, b) - agg.value[b * n_actions + a];
    }
    const double expected = p.col(b).dot(f);
    out.loss += expected;
    out.entropy -= p.col(b).dot(log_p.col(b));
    upstream.col(b) = (p.col(b).array() * (f.array() - expected)).matrix();
  }
  const double inv = 1.0 / static_cast<double>(batch);
  out.loss *= inv;
  out.entropy *= inv;
  upstream *= inv;
  out.grad = policy.net().zeros_like();
  backward(policy.net(), cache, upstream, out.grad);
  return out;
}

ActorLoss continuous_actor_loss(const Policy& policy, const EnsembleCritic& critic,
                                const Mat& states, const Mat& noise, const PbrlConfig& cfg) {
  const Eigen::Index batch = states.cols();
  const auto adim = static_cast<Eigen::Index>(policy.action_dim());
  if (noise.rows() != adim || noise.cols() != batch) {
    throw std::invalid_argument("actor_loss: noise shape mismatch");
  }
  ForwardCache cache;
  const Mat out_net = forward(policy.net(), states, &cache);
  const Mat raw_log_std = out_net.bottomRows(adim);
  const Mat log_std = raw_log_std.cwiseMax(Policy::kLogStdMin).cwiseMin(Policy::kLogStdMax);
  const Mat sigma = log_std.array().exp().matrix();
  const Mat u = out_net.topRows(adim) + (sigma.array() * noise.array()).matrix();
  const Mat a = u.array().tanh().matrix();

  const Mat x = critic_input(states, a);
  Mat q(static_cast<Eigen::Index>(critic.size()), batch);
  std::vector<MemberPass> passes(critic.size());
  for (std::size_t k = 0; k < critic.size(); ++k) {
    q.row(static_cast<Eigen::Index>(k)) = member_forward(critic, k, x, passes[k]);
  }
  const Aggregate agg = aggregate(q, cfg.actor_aggregate);
  Mat dq_da = Mat::Zero(adim, batch);
  for (std::size_t k = 0; k < critic.size(); ++k) {
    const Mat w = agg.weight.row(static_cast<Eigen::Index>(k));
    if (w.isZero()) continue;
    dq_da += member_input_grad(critic, k, passes[k], w).bottomRows(adim);
  }

  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const double inv = 1.0 / static_cast<double>(batch);
  ActorLoss out;
  Mat upstream(2 * adim, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    double log_pi = 0.0;
    for (Eigen::Index i = 0; i < adim; ++i) {
      const double e = noise(i, b);
      log_pi += -0.5 * e * e - log_std(i, b) - 0.5 * log_2pi - log1m_tanh2(u(i, b));
      const double a_ib = std::tanh(u(i, b));
      const double d_u = inv * (2.0 * cfg.alpha * a_ib - dq_da(i, b) * (1.0 - a_ib * a_ib));
      upstream(i, b) = d_u;
      const bool clamped = raw_log_std(i, b) < Policy::kLogStdMin || raw_log_std(i, b) > Policy::kLogStdMax;
      upstream(adim + i, b) = clamped ? 0.0 : -cfg.alpha * inv + d_u * sigma(i, b) * e;
    }
    out.loss += cfg.alpha * log_pi - agg.value[b];
    out.entropy -= log_pi;
  }
  out.loss *= inv;
  out.entropy *= inv;
  out.grad = policy.net().zeros_like();
  backward(policy.net(), cache, upstream, out.grad);
  return out;
}

}  // namespace

ActorLoss actor_loss(const Policy& policy, const EnsembleCritic& critic, const Mat& states,
                     const Mat& noise, const PbrlConfig& cfg) {
  if (states.cols() == 0) throw std::invalid_argument("actor_loss: empty batch");
  return policy.discrete() ? discrete_actor_loss(policy, critic, states, cfg)
                           : continuous_actor_loss(policy, critic, states, noise, cfg);
}

// ---------------------------------------------------------------- training

namespace {

// Stream keys under the run seed.
constexpr std::uint64_t kCriticKey = 11;
constexpr std::uint64_t kActorKey = 12;
constexpr std::uint64_t kPessimisticKey = 13;
constexpr std::uint64_t kBatchKey = 21;
constexpr std::uint64_t kPolicyKey = 22;
constexpr std::uint64_t kProbeKey = 23;
constexpr std::uint64_t kEvalKey = 1ULL << 32;
constexpr std::uint64_t kProbeOodKey = 2ULL << 32;

Mat gather_states(const OfflineDataset& ds, const std::vector<std::size_t>& idx, bool next) {
  Mat out(static_cast<Eigen::Index>(ds.state_dim), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Transition& t = ds.transitions[idx[i]];
    out.col(static_cast<Eigen::Index>(i)) = next ? t.next_state : t.state;
  }
  return out;
}

Mat gather_actions(const OfflineDataset& ds, const std::vector<std::size_t>& idx) {
  Mat out(static_cast<Eigen::Index>(ds.action_dim), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = ds.transitions[idx[i]].action;
  }
  return out;
}

/// Each state repeated n times: column b * n + j.
Mat repeat_columns(const Mat& states, std::size_t n) {
  const auto ni = static_cast<Eigen::Index>(n);
  Mat out(states.rows(), states.cols() * ni);
  for (Eigen::Index b = 0; b < states.cols(); ++b) {
    for (Eigen::Index j = 0; j < ni; ++j) out.col(b * ni + j) = states.col(b);
  }
  return out;
}

std::string batch_diagnostic(std::size_t step, std::size_t member, std::uint64_t hash,
                             const char* what) {
  std::ostringstream os;
  os << "non-finite " << what << " at step " << step << ", member " << member << ", batch hash 0x"
     << std::hex << hash;
  return os.str();
}

struct Probe {
  Mat states;
  Mat actions;
};

MetricsRow measure(const Policy& policy, const EnsembleCritic& critic, const Probe& probe,
                   const OfflineDataset& ds, const Environment& env, const PbrlConfig& cfg,
                   std::size_t step, double beta, SeededRng& root) {
  MetricsRow row;
  row.step = step;
  row.beta_ood = beta;
  SeededRng eval_rng = root.derive(kEvalKey + step);
  row.eval_return = evaluate_policy_return(policy, env, cfg.eval_episodes, eval_rng);
  row.normalized_score = normalized_score(row.eval_return, ds);

  const Mat q_in = critic.predict(critic_input(probe.states, probe.actions), false);
  row.q_in_mean = q_in.mean();
  row.q_in_abs_mean = q_in.cwiseAbs().mean();
  row.u_in_mean = ensemble_std(q_in).mean();

  SeededRng ood_rng = root.derive(kProbeOodKey + step);
  const Mat q_ood = critic.predict(critic_input(probe.states, policy.sample(probe.states, ood_rng)), false);
  row.q_ood_mean = q_ood.mean();
  row.u_ood_mean = ensemble_std(q_ood).mean();

  const Mat q_pi = critic.predict(critic_input(probe.states, policy.deterministic(probe.states)), false);
  row.q_pi_max = q_pi.colwise().mean().maxCoeff();
  return row;
}

void check_compatible(const OfflineDataset& ds, const Environment& env) {
  if (ds.state_dim != env.state_dim() || ds.action_dim != env.action_dim()) {
    throw std::invalid_argument("dataset dimensions do not match the environment");
  }
}

}  // namespace

InitialNetworks initial_networks(const OfflineDataset& dataset, const Environment& env,
                                 const PbrlConfig& cfg, std::uint64_t seed) {
  check_compatible(dataset, env);
  const SeededRng root(seed);
  CriticShape shape;
  shape.input_size = dataset.state_dim + dataset.action_dim;
  shape.hidden = cfg.critic_hidden;
  shape.ensemble_size = cfg.ensemble_size;
  shape.prior_enabled = cfg.prior_enabled;
  shape.prior_scale = cfg.prior_scale;

  InitialNetworks out;
  out.critic = EnsembleCritic(shape, root.derive(kCriticKey).next_u64());
  if (cfg.variant == Variant::pi_small || cfg.variant == Variant::pi_large) {
    const PessimisticBounds bounds = cfg.variant == Variant::pi_small ? kPiSmall : kPiLarge;
    SeededRng init_rng = root.derive(kPessimisticKey);
    for (std::size_t k = 0; k < out.critic.size(); ++k) {
      pessimistic_init(out.critic.member(k).trainable, bounds.lo, bounds.hi, init_rng);
    }
    out.critic.sync_targets();
  }
  SeededRng actor_rng = root.derive(kActorKey);
  out.policy = Policy(dataset.state_dim, dataset.action_dim, env.discrete(), cfg.actor_hidden, actor_rng);
  return out;
}

double evaluate_policy_return(const Policy& policy, const Environment& env, std::size_t episodes,
                              SeededRng& rng) {
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Vec s = env.reset(rng);
    for (std::size_t t = 0; t < env.horizon(); ++t) {
      const Vec a = policy.deterministic(s).col(0);
      StepResult step = env.step(s, a, rng);
      total += step.reward;
      if (step.terminal) break;
      s = std::move(step.next_state);
    }
  }
  return total / static_cast<double>(episodes);
}

double mean_uncertainty(const EnsembleCritic& critic, const Mat& states, const Mat& actions) {
  return ensemble_std(critic.predict(critic_input(states, actions), false)).mean();
}

TrainResult train(const OfflineDataset& dataset, const Environment& env, const PbrlConfig& cfg,
                  std::uint64_t seed) {
  cfg.validate();
  dataset.validate();
  InitialNetworks init = initial_networks(dataset, env, cfg, seed);
  TrainResult res;
  res.policy = std::move(init.policy);
  res.critic = std::move(init.critic);

  SeededRng root(seed);
  SeededRng batch_rng = root.derive(kBatchKey);
  SeededRng policy_rng = root.derive(kPolicyKey);

  Probe probe;
  {
    SeededRng probe_rng = root.derive(kProbeKey);
    std::vector<std::size_t> idx(cfg.probe_size);
    for (auto& i : idx) i = probe_rng.below(dataset.size());
    probe.states = gather_states(dataset, idx, false);
    probe.actions = gather_actions(dataset, idx);
  }

  std::vector<Adam> critic_opt;
  for (std::size_t k = 0; k < res.critic.size(); ++k) {
    critic_opt.emplace_back(res.critic.member(k).trainable, cfg.lr_critic);
  }
  Adam actor_opt(res.policy.net(), cfg.lr_actor);

  const std::size_t n_layers = cfg.critic_hidden.size() + 1;
  const std::size_t sn_layers = cfg.variant == Variant::sn_last ? 1 : cfg.variant == Variant::sn_last2 ? 2 : 0;
  std::vector<std::vector<SpectralState>> sn_state(res.critic.size(),
                                                   std::vector<SpectralState>(n_layers));

  const std::size_t n_ood = cfg.effective_n_ood();
  const BetaOodSchedule schedule = cfg.schedule();
  std::vector<std::size_t> idx(cfg.batch_size);

  if (cfg.steps == 0) {
    res.metrics.push_back(measure(res.policy, res.critic, probe, dataset, env, cfg, 0,
                                  beta_ood_at(0, schedule), root));
  }
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double beta = beta_ood_at(step, schedule);
    for (auto& i : idx) i = batch_rng.below(dataset.size());

    CriticBatch batch;
    batch.states = gather_states(dataset, idx, false);
    batch.actions = gather_actions(dataset, idx);
    batch.next_states = gather_states(dataset, idx, true);
    batch.rewards.resize(static_cast<Eigen::Index>(idx.size()));
    batch.terminals.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Transition& t = dataset.transitions[idx[i]];
      batch.rewards[static_cast<Eigen::Index>(i)] = t.reward;
      batch.terminals[static_cast<Eigen::Index>(i)] = t.terminal ? 1.0 : 0.0;
    }
    batch.hash = fnv1a64(idx.data(), idx.size() * sizeof(std::size_t));
    batch.next_actions = res.policy.sample(batch.next_states, policy_rng);
    if (n_ood > 0) {
      batch.ood_states = repeat_columns(batch.states, n_ood);
      batch.ood_actions = res.policy.sample(batch.ood_states, policy_rng);
    } else {
      batch.ood_states.resize(batch.states.rows(), 0);
      batch.ood_actions.resize(batch.actions.rows(), 0);
    }

    const CriticTargets targets = compute_targets(res.critic, batch, cfg, beta);
    CriticLoss closs = critic_loss(res.critic, batch, targets, cfg);
    for (std::size_t k = 0; k < res.critic.size(); ++k) {
      if (!std::isfinite(closs.member_loss[k]) || !closs.grads[k].all_finite()) {
        throw TrainingError(batch_diagnostic(step, k, batch.hash, "critic loss"));
      }
      MlpParams& net = res.critic.member(k).trainable;
      critic_opt[k].step(net, closs.grads[k]);
      for (std::size_t l = n_layers - sn_layers; l < n_layers; ++l) {
        net.layers[l].weight = spectral_normalize(net.layers[l].weight, cfg.sn_iterations, &sn_state[k][l]);
      }
    }

    const Mat noise = res.policy.draw_noise(batch.size(), policy_rng);
    const ActorLoss aloss = actor_loss(res.policy, res.critic, batch.states, noise, cfg);
    if (!std::isfinite(aloss.loss) || !aloss.grad.all_finite()) {
      throw TrainingError(batch_diagnostic(step, 0, batch.hash, "actor loss"));
    }
    actor_opt.step(res.policy.net(), aloss.grad);
    res.critic.polyak(cfg.tau);

    const std::size_t done = step + 1;
    if (done % cfg.eval_interval == 0 || done == cfg.steps) {
      res.metrics.push_back(measure(res.policy, res.critic, probe, dataset, env, cfg, done,
                                    beta_ood_at(done, schedule), root));
    }
  }
  res.final_score = res.metrics.back().normalized_score;
  return res;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,eval_return,normalized_score,q_in_mean,q_ood_mean,u_in_mean,u_ood_mean,beta_ood,"
         "q_pi_max,q_in_abs_mean\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.step << ',' << r.eval_return << ',' << r.normalized_score << ',' << r.q_in_mean << ','
        << r.q_ood_mean << ',' << r.u_in_mean << ',' << r.u_ood_mean << ',' << r.beta_ood << ','
        << r.q_pi_max << ',' << r.q_in_abs_mean << '\n';
  }
}

}  // namespace pbrl
