#pragma once

#include "pbrl/numerics.hpp"

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pbrl {

struct Transition {
  Vec state;
  Vec action;  // one-hot for discrete environments
  double reward = 0.0;
  Vec next_state;
  bool terminal = false;
};

struct OfflineDataset {
  std::vector<Transition> transitions;
  std::string env_id;
  std::string behavior_id;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  double random_score = 0.0;
  double expert_score = 1.0;

  /// Throws std::invalid_argument if empty, ragged, out of [0,1] reward range,
  /// or if the reference scores cannot normalize.
  void validate() const;
  std::size_t size() const { return transitions.size(); }
};

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool terminal = false;
};

/// Stateless environment: the caller owns the state vector, so one instance can
/// be shared read-only between rollouts.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual std::size_t state_dim() const = 0;
  /// Width of the action vector (number of actions for discrete environments).
  virtual std::size_t action_dim() const = 0;
  virtual bool discrete() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual double gamma() const { return 0.99; }

  virtual Vec reset(SeededRng& rng) const = 0;
  virtual StepResult step(const Vec& state, const Vec& action, SeededRng& rng) const = 0;

  /// Optimal (discrete) or near-optimal (continuous) action.
  virtual Vec expert_action(const Vec& state) const = 0;
  virtual Vec random_action(SeededRng& rng) const;
  /// Largest optimal discounted value over states (or a bound when unknown).
  virtual double value_max() const = 0;
};

Vec one_hot(std::size_t index, std::size_t size);
std::size_t arg_max(const Vec& v);

/// 4-connected grid; actions 0..3 = up, right, down, left. Entering the goal
/// pays 1 and ends the episode; every other step pays 0.
class Gridworld : public Environment {
 public:
  struct Options {
    std::size_t width = 5;
    std::size_t height = 5;
    std::size_t start = 0;                 // cell index row * width + col
    std::optional<std::size_t> goal;       // defaults to the last cell
    std::vector<std::size_t> walls;
    std::size_t horizon = 100;
    double gamma = 0.99;
    double slip = 0.0;                     // probability the move is replaced by a random one
  };

  Gridworld() : Gridworld(Options{}) {}
  explicit Gridworld(Options options);

  std::string id() const override { return "gridworld"; }
  std::size_t state_dim() const override { return cells(); }
  std::size_t action_dim() const override { return 4; }
  bool discrete() const override { return true; }
  std::size_t horizon() const override { return opt_.horizon; }
  double gamma() const override { return opt_.gamma; }

  Vec reset(SeededRng& rng) const override;
  StepResult step(const Vec& state, const Vec& action, SeededRng& rng) const override;
  Vec expert_action(const Vec& state) const override;
  double value_max() const override;

  std::size_t cells() const { return opt_.width * opt_.height; }
  std::size_t start() const { return opt_.start; }
  std::size_t goal() const { return goal_; }
  bool blocked(std::size_t cell) const { return blocked_.at(cell); }
  /// Deterministic successor of (cell, action), ignoring slip.
  std::size_t move(std::size_t cell, std::size_t action) const;
  double slip() const { return opt_.slip; }

  /// Discounted optimal action values Q*(cell, action), (cells x 4).
  const Mat& optimal_q() const { return q_star_; }
  Eigen::VectorXd optimal_v() const;
  /// Breadth-first shortest path length (in moves) from cell to goal; nullopt if unreachable.
  std::optional<std::size_t> shortest_path(std::size_t cell) const;

 private:
  Options opt_;
  std::size_t goal_;
  std::vector<bool> blocked_;
  Mat q_star_;
};

/// Finite linear MDP: P(s'|s,a) = <psi(s'), phi(s,a)>, r(s,a) = theta^T phi(s,a).
struct LinearMdpSpec {
  std::size_t d = 0;
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t horizon = 0;
  Mat features;            // (n_states * n_actions) x d, row s * n_actions + a
  Mat next_state_weights;  // psi, n_states x d
  Vec reward_weights;      // theta
  std::size_t initial_state = 0;

  std::size_t pair_index(std::size_t s, std::size_t a) const { return s * n_actions + a; }
  Vec phi(std::size_t s, std::size_t a) const;
  double reward(std::size_t s, std::size_t a) const;
  /// (n_states * n_actions) x n_states transition matrix.
  Mat transition_matrix() const;
  /// E[r + V(s') | s, a] for every pair, given V over states.
  Vec bellman(const Vec& next_value) const;
  /// Checks distribution, norm and reward-range invariants; throws on violation.
  void validate(double tol = 1e-12) const;
};

enum class FeatureKind { simplex, one_hot };

/// Samples a valid linear MDP. With FeatureKind::one_hot, d must equal
/// n_states * n_actions and the transition matrix is the sampled stochastic matrix.
LinearMdpSpec make_linear_mdp(std::size_t d, std::size_t n_states, std::size_t n_actions,
                              std::size_t horizon, SeededRng& rng,
                              FeatureKind kind = FeatureKind::simplex, double sharpness = 1.0);

/// Tabular (one-hot) linear-MDP view of a gridworld with finite horizon.
LinearMdpSpec gridworld_as_linear_mdp(const Gridworld& grid, std::size_t horizon);

/// Discounted environment over a linear MDP: one-hot states and actions, no terminals.
class LinearMdpEnv : public Environment {
 public:
  LinearMdpEnv(LinearMdpSpec spec, std::size_t horizon, double gamma = 0.99);

  std::string id() const override { return "linear-mdp"; }
  std::size_t state_dim() const override { return spec_.n_states; }
  std::size_t action_dim() const override { return spec_.n_actions; }
  bool discrete() const override { return true; }
  std::size_t horizon() const override { return horizon_; }
  double gamma() const override { return gamma_; }

  Vec reset(SeededRng& rng) const override;
  StepResult step(const Vec& state, const Vec& action, SeededRng& rng) const override;
  Vec expert_action(const Vec& state) const override;
  double value_max() const override;

  const LinearMdpSpec& spec() const { return spec_; }

 private:
  LinearMdpSpec spec_;
  std::size_t horizon_;
  double gamma_;
  Mat transitions_;
  Mat q_star_;  // n_states x n_actions, discounted
};

/// 2-D point mass: state (x, y, vx, vy), action in [-1,1]^2,
/// x' = x + 0.1 v, v' = clip(v + 0.1 a, -1, 1), positions clipped to [-1,1].
/// Reward 1 - clip(|x' - goal| / d_max, 0, 1).
class PointMass : public Environment {
 public:
  struct Options {
    double goal_x = 0.5;
    double goal_y = 0.5;
    double start_x = -0.5;
    double start_y = -0.5;
    double start_noise = 0.05;
    double d_max = 1.0;
    std::size_t horizon = 100;
    double gamma = 0.99;
  };

  PointMass() : PointMass(Options{}) {}
  explicit PointMass(Options options) : opt_(options) {}

  std::string id() const override { return "point-mass"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 2; }
  bool discrete() const override { return false; }
  std::size_t horizon() const override { return opt_.horizon; }
  double gamma() const override { return opt_.gamma; }

  Vec reset(SeededRng& rng) const override;
  StepResult step(const Vec& state, const Vec& action, SeededRng& rng) const override;
  /// Saturated PD controller toward the goal.
  Vec expert_action(const Vec& state) const override;
  double value_max() const override { return 1.0 / (1.0 - opt_.gamma); }

 private:
  Options opt_;
};

/// Known environment ids: "gridworld", "linear-mdp", "point-mass".
std::unique_ptr<Environment> make_env(const std::string& id);
std::vector<std::string> env_ids();

/// Behaviour ids: random, medium, expert, narrow (expert trajectories only), mixed.
std::vector<std::string> behavior_ids();

/// One action from the named behaviour policy.
Vec behavior_action(const Environment& env, const std::string& behavior, const Vec& state,
                    SeededRng& rng);

/// Mean undiscounted return of a behaviour policy over `episodes` rollouts.
double behavior_return(const Environment& env, const std::string& behavior, std::size_t episodes,
                       SeededRng& rng);

/// Rolls out whole episodes until exactly n transitions are collected; fills
/// reference scores from >= 100 random and expert episodes.
OfflineDataset generate_dataset(const Environment& env, const std::string& behavior,
                                std::size_t n_transitions, SeededRng& rng);

/// 100 * (raw - random) / (expert - random)
double normalized_score(double raw, const OfflineDataset& dataset);

/// JSON header line, then rows of little-endian float64:
/// state, action, reward, next_state, terminal (0/1).
void write_dataset(const OfflineDataset& dataset, const std::filesystem::path& path);
OfflineDataset read_dataset(const std::filesystem::path& path);
void write_dataset_csv(const OfflineDataset& dataset, const std::filesystem::path& path);

/// Fraction of (state, action) pairs in a discrete environment's dataset out of all pairs.
double pair_coverage(const OfflineDataset& dataset);

}  // namespace pbrl
