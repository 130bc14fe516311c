#pragma once

#include "pbrl/approximator.hpp"
#include "pbrl/envs.hpp"
#include "pbrl/numerics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pbrl {

enum class ActorAggregate { min, mean, max };
enum class PenaltySite { next_q, reward, both };
enum class Variant { pbrl, naive, l2, sn_last, sn_last2, pi_small, pi_large, zero_target };

std::string to_string(ActorAggregate a);
std::string to_string(PenaltySite s);
std::string to_string(Variant v);
ActorAggregate parse_actor_aggregate(const std::string& s);
PenaltySite parse_penalty_site(const std::string& s);
/// Throws std::invalid_argument on an unknown kind.
Variant parse_variant(const std::string& s);

/// Linear decay from `start` to `end` over `linear_steps`, then
/// end * post_rate^((step - linear_steps) / post_interval), never below `floor`.
/// With `constant` set the value is `start` at every step.
struct BetaOodSchedule {
  double start = 5.0;
  double end = 0.2;
  std::size_t linear_steps = 50000;
  double post_rate = 0.999;
  std::size_t post_interval = 1000;
  double floor = 0.05;
  bool constant = false;

  void validate() const;
};

double beta_ood_at(std::size_t step, const BetaOodSchedule& schedule);

struct PbrlConfig {
  Variant variant = Variant::pbrl;
  std::size_t ensemble_size = 10;
  std::vector<std::size_t> critic_hidden{256, 256, 256};
  std::vector<std::size_t> actor_hidden{256, 256};
  double beta_in = 0.01;
  BetaOodSchedule beta_ood;
  /// Shrink the linear phase to min(linear_steps, ceil(steps / 10)) for short runs.
  bool beta_ood_rescale = true;
  double gamma = 0.99;
  double tau = 0.005;
  double lr_actor = 1e-4;
  double lr_critic = 3e-4;
  std::size_t n_ood = 10;
  std::size_t steps = 1000000;
  std::size_t batch_size = 256;
  bool prior_enabled = false;
  double prior_scale = 1.0;
  ActorAggregate actor_aggregate = ActorAggregate::min;
  PenaltySite in_penalty_site = PenaltySite::next_q;
  double alpha = 0.2;
  double l2_scale = 1e-2;
  int sn_iterations = 1;
  std::size_t eval_interval = 1000;
  std::size_t eval_episodes = 10;
  /// Dataset pairs used for the logged Q / uncertainty statistics.
  std::size_t probe_size = 256;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
  /// beta_in and n_ood after the variant is applied (naive-family variants drop both).
  double effective_beta_in() const;
  std::size_t effective_n_ood() const;
  /// The schedule train() follows, after the optional rescaling.
  BetaOodSchedule schedule() const;
};

/// Reward plus discounted penalized next value.
double in_target(double reward, double next_q, double next_u, double beta_in, double gamma);
/// max(0, q - beta_ood * u)
double ood_target(double q_ood, double u_ood, double beta_ood);

/// Tanh-squashed Gaussian (continuous) or softmax (discrete) policy.
class Policy {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  Policy() = default;
  Policy(std::size_t state_dim, std::size_t action_dim, bool discrete,
         const std::vector<std::size_t>& hidden, SeededRng& rng);

  bool discrete() const { return discrete_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  MlpParams& net() { return net_; }
  const MlpParams& net() const { return net_; }

  /// Standard-normal noise for `batch` continuous samples, (action_dim x batch).
  Mat draw_noise(std::size_t batch, SeededRng& rng) const;
  /// Continuous: reparameterized samples tanh(mu + sigma * noise).
  /// Discrete: one-hot samples from the softmax (noise ignored, rng used).
  Mat sample(const Mat& states, const Mat& noise, SeededRng& rng) const;
  Mat sample(const Mat& states, SeededRng& rng) const;
  /// Mean action (continuous) or arg-max one-hot (discrete).
  Mat deterministic(const Mat& states) const;
  /// Discrete only: action probabilities, (n_actions x batch).
  Mat probabilities(const Mat& states) const;

 private:
  MlpParams net_;
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  bool discrete_ = false;
};

/// Concatenates states over actions column-wise, ((state + action) x batch).
Mat critic_input(const Mat& states, const Mat& actions);

/// One sampled minibatch with its next actions and OOD pairs.
struct CriticBatch {
  Mat states;       // (state_dim x B)
  Mat actions;      // (action_dim x B)
  Vec rewards;      // B
  Mat next_states;  // (state_dim x B)
  Mat next_actions; // (action_dim x B), a' ~ pi(.|s')
  Vec terminals;    // B, 0 or 1
  Mat ood_states;   // (state_dim x B * n_ood)
  Mat ood_actions;  // (action_dim x B * n_ood)
  std::uint64_t hash = 0;

  std::size_t size() const { return static_cast<std::size_t>(states.cols()); }
  std::size_t ood_size() const { return static_cast<std::size_t>(ood_states.cols()); }
};

/// Frozen regression targets, one row per member.
struct CriticTargets {
  Mat in;   // (K x B)
  Mat ood;  // (K x B * n_ood)
  double next_u_mean = 0.0;
  double ood_u_mean = 0.0;
  double ood_q_mean = 0.0;
};

/// In-distribution targets from the target networks, OOD pseudo-targets from
/// the online networks; both are plain numbers afterwards.
CriticTargets compute_targets(const EnsembleCritic& critic, const CriticBatch& batch,
                              const PbrlConfig& cfg, double beta_ood);

struct CriticLoss {
  double loss = 0.0;
  std::vector<double> member_loss;
  std::vector<MlpParams> grads;  // trainable part of each member
};

/// Sum over members of the mean squared in-distribution error plus the mean
/// squared OOD error (plus the weight penalty for the l2 variant).
CriticLoss critic_loss(const EnsembleCritic& critic, const CriticBatch& batch,
                       const CriticTargets& targets, const PbrlConfig& cfg);

struct ActorLoss {
  double loss = 0.0;
  MlpParams grad;
  double entropy = 0.0;
};

/// Mean over states of alpha * log pi(a|s) - aggregate_k Q^k(s, a). Continuous
/// policies use the given reparameterization noise; discrete policies take the
/// exact expectation over actions.
ActorLoss actor_loss(const Policy& policy, const EnsembleCritic& critic, const Mat& states,
                     const Mat& noise, const PbrlConfig& cfg);

/// One row of the metrics log.
struct MetricsRow {
  std::size_t step = 0;
  double eval_return = 0.0;
  double normalized_score = 0.0;
  double q_in_mean = 0.0;
  double q_ood_mean = 0.0;
  double u_in_mean = 0.0;
  double u_ood_mean = 0.0;
  double beta_ood = 0.0;
  double q_pi_max = 0.0;      // max over probe states of the ensemble-mean Q at the greedy action
  double q_in_abs_mean = 0.0; // mean |Q| over probe pairs and members
};

struct TrainResult {
  Policy policy;
  EnsembleCritic critic;
  std::vector<MetricsRow> metrics;
  double final_score = 0.0;
};

/// Raised when a loss turns non-finite; the message names step, member and batch hash.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InitialNetworks {
  Policy policy;
  EnsembleCritic critic;
};

/// Networks exactly as train() starts from them for this seed.
InitialNetworks initial_networks(const OfflineDataset& dataset, const Environment& env,
                                 const PbrlConfig& cfg, std::uint64_t seed);

/// Offline actor-critic training on a fixed dataset. Evaluates every
/// eval_interval steps (and at the last step) with deterministic actions.
TrainResult train(const OfflineDataset& dataset, const Environment& env, const PbrlConfig& cfg,
                  std::uint64_t seed);

/// Mean undiscounted return of the deterministic policy.
double evaluate_policy_return(const Policy& policy, const Environment& env, std::size_t episodes,
                              SeededRng& rng);

/// Mean ensemble std at the given pairs.
double mean_uncertainty(const EnsembleCritic& critic, const Mat& states, const Mat& actions);

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

}  // namespace pbrl
