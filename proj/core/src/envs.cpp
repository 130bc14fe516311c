#include "pbrl/envs.hpp"

#include "binary_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <set>
#include <stdexcept>

namespace pbrl {

void OfflineDataset::validate() const {
  if (transitions.empty()) throw std::invalid_argument("dataset is empty");
  if (!(expert_score > random_score)) {
    throw std::invalid_argument("dataset reference scores cannot normalize (expert <= random)");
  }
  for (const auto& t : transitions) {
    if (static_cast<std::size_t>(t.state.size()) != state_dim ||
        static_cast<std::size_t>(t.next_state.size()) != state_dim ||
        static_cast<std::size_t>(t.action.size()) != action_dim) {
      throw std::invalid_argument("dataset transition has inconsistent dimensions");
    }
    if (!(t.reward >= 0.0 && t.reward <= 1.0)) {
      throw std::invalid_argument("dataset reward outside [0, 1]");
    }
  }
}

Vec Environment::random_action(SeededRng& rng) const {
  if (discrete()) return one_hot(rng.below(action_dim()), action_dim());
  Vec a(static_cast<Eigen::Index>(action_dim()));
  for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = rng.uniform(-1.0, 1.0);
  return a;
}

Vec one_hot(std::size_t index, std::size_t size) {
  if (index >= size) throw std::out_of_range("one_hot: index out of range");
  Vec v = Vec::Zero(static_cast<Eigen::Index>(size));
  v[static_cast<Eigen::Index>(index)] = 1.0;
  return v;
}

std::size_t arg_max(const Vec& v) {
  if (v.size() == 0) throw std::invalid_argument("arg_max: empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

// ---------------------------------------------------------------- Gridworld

Gridworld::Gridworld(Options options) : opt_(std::move(options)) {
  if (opt_.width == 0 || opt_.height == 0) throw std::invalid_argument("Gridworld: empty grid");
  if (opt_.slip < 0.0 || opt_.slip > 1.0) throw std::invalid_argument("Gridworld: slip outside [0,1]");
  goal_ = opt_.goal.value_or(cells() - 1);
  if (goal_ >= cells() || opt_.start >= cells()) throw std::invalid_argument("Gridworld: bad cell");
  if (goal_ == opt_.start) throw std::invalid_argument("Gridworld: start equals goal");
  blocked_.assign(cells(), false);
  for (auto w : opt_.walls) {
    if (w >= cells() || w == goal_ || w == opt_.start) throw std::invalid_argument("Gridworld: bad wall");
    blocked_[w] = true;
  }

  // Discounted value iteration; the goal is absorbing with zero value.
  const auto n = static_cast<Eigen::Index>(cells());
  Vec v = Vec::Zero(n);
  q_star_ = Mat::Zero(n, 4);
  for (int iter = 0; iter < 10000; ++iter) {
    Mat q = Mat::Zero(n, 4);
    for (std::size_t c = 0; c < cells(); ++c) {
      if (c == goal_ || blocked_[c]) continue;
      auto value_of = [&](std::size_t a) {
        const std::size_t next = move(c, a);
        return next == goal_ ? 1.0 : opt_.gamma * v[static_cast<Eigen::Index>(next)];
      };
      double mean_random = 0.0;
      for (std::size_t a = 0; a < 4; ++a) mean_random += value_of(a) / 4.0;
      for (std::size_t a = 0; a < 4; ++a) {
        q(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) =
            (1.0 - opt_.slip) * value_of(a) + opt_.slip * mean_random;
      }
    }
    Vec nv = q.rowwise().maxCoeff();
    const double delta = (nv - v).cwiseAbs().maxCoeff();
    v = nv;
    q_star_ = q;
    if (delta < 1e-14) break;
  }
}

std::size_t Gridworld::move(std::size_t cell, std::size_t action) const {
  const std::size_t row = cell / opt_.width;
  const std::size_t col = cell % opt_.width;
  std::size_t r = row, c = col;
  switch (action) {
    case 0: if (row > 0) r = row - 1; break;
    case 1: if (col + 1 < opt_.width) c = col + 1; break;
    case 2: if (row + 1 < opt_.height) r = row + 1; break;
    case 3: if (col > 0) c = col - 1; break;
    default: throw std::out_of_range("Gridworld: action out of range");
  }
  const std::size_t next = r * opt_.width + c;
  return blocked_[next] ? cell : next;
}

Vec Gridworld::reset(SeededRng&) const { return one_hot(opt_.start, cells()); }

StepResult Gridworld::step(const Vec& state, const Vec& action, SeededRng& rng) const {
  const std::size_t cell = arg_max(state);
  std::size_t a = arg_max(action);
  if (opt_.slip > 0.0 && rng.bernoulli(opt_.slip)) a = rng.below(4);
  if (cell == goal_) return {state, 0.0, true};
  const std::size_t next = move(cell, a);
  const bool at_goal = next == goal_;
  return {one_hot(next, cells()), at_goal ? 1.0 : 0.0, at_goal};
}

Vec Gridworld::expert_action(const Vec& state) const {
  const auto cell = static_cast<Eigen::Index>(arg_max(state));
  return one_hot(arg_max(q_star_.row(cell).transpose()), 4);
}

Eigen::VectorXd Gridworld::optimal_v() const { return q_star_.rowwise().maxCoeff(); }

double Gridworld::value_max() const { return optimal_v().maxCoeff(); }

std::optional<std::size_t> Gridworld::shortest_path(std::size_t cell) const {
  std::vector<long> dist(cells(), -1);
  std::deque<std::size_t> queue{cell};
  dist[cell] = 0;
  while (!queue.empty()) {
    const auto c = queue.front();
    queue.pop_front();
    if (c == goal_) return static_cast<std::size_t>(dist[c]);
    for (std::size_t a = 0; a < 4; ++a) {
      const auto n = move(c, a);
      if (dist[n] < 0) {
        dist[n] = dist[c] + 1;
        queue.push_back(n);
      }
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- Linear MDP

Vec LinearMdpSpec::phi(std::size_t s, std::size_t a) const {
  return features.row(static_cast<Eigen::Index>(pair_index(s, a))).transpose();
}

double LinearMdpSpec::reward(std::size_t s, std::size_t a) const {
  return features.row(static_cast<Eigen::Index>(pair_index(s, a))).dot(reward_weights);
}

Mat LinearMdpSpec::transition_matrix() const { return features * next_state_weights.transpose(); }

Vec LinearMdpSpec::bellman(const Vec& next_value) const {
  return features * reward_weights + transition_matrix() * next_value;
}

void LinearMdpSpec::validate(double tol) const {
  const auto pairs = static_cast<Eigen::Index>(n_states * n_actions);
  if (features.rows() != pairs || features.cols() != static_cast<Eigen::Index>(d) ||
      next_state_weights.rows() != static_cast<Eigen::Index>(n_states) ||
      next_state_weights.cols() != static_cast<Eigen::Index>(d) ||
      reward_weights.size() != static_cast<Eigen::Index>(d)) {
    throw std::invalid_argument("LinearMdpSpec: inconsistent shapes");
  }
  if (initial_state >= n_states) throw std::invalid_argument("LinearMdpSpec: bad initial state");
  const Mat p = transition_matrix();
  if (p.minCoeff() < -tol) throw std::invalid_argument("LinearMdpSpec: negative transition probability");
  const Vec sums = p.rowwise().sum();
  if ((sums.array() - 1.0).abs().maxCoeff() > tol) {
    throw std::invalid_argument("LinearMdpSpec: transition rows do not sum to one");
  }
  for (Eigen::Index i = 0; i < pairs; ++i) {
    if (features.row(i).norm() > 1.0 + tol) throw std::invalid_argument("LinearMdpSpec: ||phi|| > 1");
  }
  const Vec r = features * reward_weights;
  if (r.minCoeff() < -tol || r.maxCoeff() > 1.0 + tol) {
    throw std::invalid_argument("LinearMdpSpec: reward outside [0, 1]");
  }
}

namespace {

// Nonnegative draws; sharpness > 1 concentrates the normalized vectors.
double draw_weight(SeededRng& rng, double sharpness) { return std::pow(rng.uniform(), sharpness); }

}  // namespace

LinearMdpSpec make_linear_mdp(std::size_t d, std::size_t n_states, std::size_t n_actions,
                              std::size_t horizon, SeededRng& rng, FeatureKind kind,
                              double sharpness) {
  if (d == 0 || n_states == 0 || n_actions == 0) throw std::invalid_argument("make_linear_mdp: empty sizes");
  if (d > n_states * n_actions) throw std::invalid_argument("make_linear_mdp: d exceeds |S||A|");
  if (kind == FeatureKind::one_hot && d != n_states * n_actions) {
    throw std::invalid_argument("make_linear_mdp: one-hot features need d = |S||A|");
  }
  const auto pairs = static_cast<Eigen::Index>(n_states * n_actions);
  const auto dd = static_cast<Eigen::Index>(d);
  const auto ns = static_cast<Eigen::Index>(n_states);

  for (int attempt = 0; attempt < 100; ++attempt) {
    LinearMdpSpec spec;
    spec.d = d;
    spec.n_states = n_states;
    spec.n_actions = n_actions;
    spec.horizon = horizon;
    spec.features = Mat::Zero(pairs, dd);
    if (kind == FeatureKind::one_hot) {
      spec.features.setIdentity();
    } else {
      for (Eigen::Index i = 0; i < pairs; ++i) {
        for (Eigen::Index j = 0; j < dd; ++j) spec.features(i, j) = draw_weight(rng, sharpness);
      }
    }
    // psi column j is a distribution over next states.
    spec.next_state_weights = Mat::Zero(ns, dd);
    for (Eigen::Index j = 0; j < dd; ++j) {
      for (Eigen::Index s = 0; s < ns; ++s) spec.next_state_weights(s, j) = draw_weight(rng, sharpness);
    }
    spec.reward_weights = Vec::Zero(dd);
    for (Eigen::Index j = 0; j < dd; ++j) spec.reward_weights[j] = rng.uniform();

    bool feasible = true;
    for (Eigen::Index i = 0; i < pairs && feasible; ++i) {
      const double s = spec.features.row(i).sum();
      if (!(s > 1e-12)) feasible = false; else spec.features.row(i) /= s;
    }
    for (Eigen::Index j = 0; j < dd && feasible; ++j) {
      const double s = spec.next_state_weights.col(j).sum();
      if (!(s > 1e-12)) feasible = false; else spec.next_state_weights.col(j) /= s;
    }
    if (!feasible) continue;
    if (kind == FeatureKind::simplex) {
      Eigen::FullPivLU<Mat> lu(spec.features);
      if (lu.rank() < dd) continue;
    }
    spec.validate(1e-12);
    return spec;
  }
  throw std::runtime_error("make_linear_mdp: could not sample a feasible specification");
}

LinearMdpSpec gridworld_as_linear_mdp(const Gridworld& grid, std::size_t horizon) {
  LinearMdpSpec spec;
  spec.n_states = grid.cells();
  spec.n_actions = 4;
  spec.d = spec.n_states * spec.n_actions;
  spec.horizon = horizon;
  spec.initial_state = grid.start();
  const auto dd = static_cast<Eigen::Index>(spec.d);
  spec.features = Mat::Identity(dd, dd);
  spec.next_state_weights = Mat::Zero(static_cast<Eigen::Index>(spec.n_states), dd);
  spec.reward_weights = Vec::Zero(dd);
  for (std::size_t s = 0; s < spec.n_states; ++s) {
    for (std::size_t a = 0; a < 4; ++a) {
      const auto j = static_cast<Eigen::Index>(spec.pair_index(s, a));
      if (s == grid.goal() || grid.blocked(s)) {
        spec.next_state_weights(static_cast<Eigen::Index>(s), j) = 1.0;  // absorbing, no reward
        continue;
      }
      for (std::size_t slip_a = 0; slip_a < 4; ++slip_a) {
        const double p = (slip_a == a ? 1.0 - grid.slip() : 0.0) + grid.slip() / 4.0;
        if (p == 0.0) continue;
        const std::size_t next = grid.move(s, slip_a);
        spec.next_state_weights(static_cast<Eigen::Index>(next), j) += p;
        if (next == grid.goal()) spec.reward_weights[j] += p;
      }
    }
  }
  spec.validate(1e-12);
  return spec;
}

LinearMdpEnv::LinearMdpEnv(LinearMdpSpec spec, std::size_t horizon, double gamma)
    : spec_(std::move(spec)), horizon_(horizon), gamma_(gamma) {
  spec_.validate(1e-9);
  transitions_ = spec_.transition_matrix();
  const auto ns = static_cast<Eigen::Index>(spec_.n_states);
  const auto na = static_cast<Eigen::Index>(spec_.n_actions);
  const Vec r = spec_.features * spec_.reward_weights;
  Vec v = Vec::Zero(ns);
  q_star_ = Mat::Zero(ns, na);
  for (int iter = 0; iter < 100000; ++iter) {
    const Vec q = r + gamma_ * transitions_ * v;
    for (Eigen::Index s = 0; s < ns; ++s) {
      for (Eigen::Index a = 0; a < na; ++a) q_star_(s, a) = q[s * na + a];
    }
    const Vec nv = q_star_.rowwise().maxCoeff();
    const double delta = (nv - v).cwiseAbs().maxCoeff();
    v = nv;
    if (delta < 1e-12) break;
  }
}

Vec LinearMdpEnv::reset(SeededRng&) const { return one_hot(spec_.initial_state, spec_.n_states); }

StepResult LinearMdpEnv::step(const Vec& state, const Vec& action, SeededRng& rng) const {
  const std::size_t s = arg_max(state);
  const std::size_t a = arg_max(action);
  const auto row = static_cast<Eigen::Index>(spec_.pair_index(s, a));
  double u = rng.uniform();
  std::size_t next = spec_.n_states - 1;
  for (std::size_t sp = 0; sp < spec_.n_states; ++sp) {
    u -= transitions_(row, static_cast<Eigen::Index>(sp));
    if (u < 0.0) {
      next = sp;
      break;
    }
  }
  const double r = std::clamp(spec_.reward(s, a), 0.0, 1.0);
  return {one_hot(next, spec_.n_states), r, false};
}

Vec LinearMdpEnv::expert_action(const Vec& state) const {
  const auto s = static_cast<Eigen::Index>(arg_max(state));
  return one_hot(arg_max(q_star_.row(s).transpose()), spec_.n_actions);
}

double LinearMdpEnv::value_max() const { return q_star_.maxCoeff(); }

// ---------------------------------------------------------------- Point mass

Vec PointMass::reset(SeededRng& rng) const {
  Vec s(4);
  s << opt_.start_x + rng.uniform(-opt_.start_noise, opt_.start_noise),
      opt_.start_y + rng.uniform(-opt_.start_noise, opt_.start_noise), 0.0, 0.0;
  return s;
}

StepResult PointMass::step(const Vec& state, const Vec& action, SeededRng&) const {
  Vec next(4);
  for (int i = 0; i < 2; ++i) {
    const double a = std::clamp(action[i], -1.0, 1.0);
    next[i] = std::clamp(state[i] + 0.1 * state[i + 2], -1.0, 1.0);
    next[i + 2] = std::clamp(state[i + 2] + 0.1 * a, -1.0, 1.0);
  }
  const double dist = std::hypot(next[0] - opt_.goal_x, next[1] - opt_.goal_y);
  const double reward = 1.0 - std::clamp(dist / opt_.d_max, 0.0, 1.0);
  return {next, reward, false};
}

Vec PointMass::expert_action(const Vec& state) const {
  Vec a(2);
  a[0] = std::clamp(4.0 * (opt_.goal_x - state[0]) - 4.0 * state[2], -1.0, 1.0);
  a[1] = std::clamp(4.0 * (opt_.goal_y - state[1]) - 4.0 * state[3], -1.0, 1.0);
  return a;
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Environment> make_env(const std::string& id) {
  if (id == "gridworld") return std::make_unique<Gridworld>();
  if (id == "point-mass") return std::make_unique<PointMass>();
  if (id == "linear-mdp") {
    // Fixed instance so every dataset and evaluation sees the same MDP.
    SeededRng rng(20211105);
    auto spec = make_linear_mdp(6, 8, 4, 20, rng, FeatureKind::simplex, 4.0);
    return std::make_unique<LinearMdpEnv>(std::move(spec), 20);
  }
  throw std::invalid_argument("unknown environment id: " + id);
}

std::vector<std::string> env_ids() { return {"gridworld", "linear-mdp", "point-mass"}; }

std::vector<std::string> behavior_ids() { return {"random", "medium", "expert", "narrow", "mixed"}; }

Vec behavior_action(const Environment& env, const std::string& behavior, const Vec& state,
                    SeededRng& rng) {
  if (behavior == "random") return env.random_action(rng);
  if (behavior == "expert" || behavior == "narrow") return env.expert_action(state);
  if (behavior == "medium") {
    if (env.discrete()) {
      return rng.bernoulli(0.5) ? env.expert_action(state) : env.random_action(rng);
    }
    Vec a = env.expert_action(state);
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i] + 0.3 * rng.normal(), -1.0, 1.0);
    return a;
  }
  throw std::invalid_argument("unknown behavior id: " + behavior);
}

double behavior_return(const Environment& env, const std::string& behavior, std::size_t episodes,
                       SeededRng& rng) {
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Vec s = env.reset(rng);
    for (std::size_t t = 0; t < env.horizon(); ++t) {
      const Vec a = behavior_action(env, behavior, s, rng);
      auto step = env.step(s, a, rng);
      total += step.reward;
      if (step.terminal) break;
      s = std::move(step.next_state);
    }
  }
  return total / static_cast<double>(episodes);
}

namespace {

void rollout_into(const Environment& env, const std::string& behavior, std::size_t n,
                  SeededRng& rng, std::vector<Transition>& out) {
  std::size_t collected = 0;
  while (collected < n) {
    Vec s = env.reset(rng);
    for (std::size_t t = 0; t < env.horizon() && collected < n; ++t) {
      Vec a = behavior_action(env, behavior, s, rng);
      auto step = env.step(s, a, rng);
      out.push_back({s, a, step.reward, step.next_state, step.terminal});
      ++collected;
      if (step.terminal) break;
      s = std::move(step.next_state);
    }
  }
}

}  // namespace

OfflineDataset generate_dataset(const Environment& env, const std::string& behavior,
                                std::size_t n_transitions, SeededRng& rng) {
  if (n_transitions == 0) throw std::invalid_argument("generate_dataset: n must be >= 1");
  const auto ids = behavior_ids();
  if (std::find(ids.begin(), ids.end(), behavior) == ids.end()) {
    throw std::invalid_argument("unknown behavior id: " + behavior);
  }
  OfflineDataset ds;
  ds.env_id = env.id();
  ds.behavior_id = behavior;
  ds.state_dim = env.state_dim();
  ds.action_dim = env.action_dim();
  ds.transitions.reserve(n_transitions);
  if (behavior == "mixed") {
    const std::size_t third = n_transitions / 3;
    rollout_into(env, "random", third, rng, ds.transitions);
    rollout_into(env, "medium", third, rng, ds.transitions);
    rollout_into(env, "expert", n_transitions - 2 * third, rng, ds.transitions);
  } else {
    rollout_into(env, behavior, n_transitions, rng, ds.transitions);
  }
  SeededRng ref_rng = rng.derive(0x5eed);
  ds.random_score = behavior_return(env, "random", 200, ref_rng);
  ds.expert_score = behavior_return(env, "expert", 100, ref_rng);
  ds.validate();
  return ds;
}

double normalized_score(double raw, const OfflineDataset& dataset) {
  const double span = dataset.expert_score - dataset.random_score;
  if (!(span > 0.0) || !std::isfinite(span)) {
    throw std::invalid_argument("normalized_score: degenerate reference scores");
  }
  return 100.0 * (raw - dataset.random_score) / span;
}

void write_dataset(const OfflineDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open dataset for writing: " + path.string());
  const std::size_t row = 2 * dataset.state_dim + dataset.action_dim + 2;
  nlohmann::json header{{"format", "pbrl-dataset-v1"},
                        {"env_id", dataset.env_id},
                        {"behavior_id", dataset.behavior_id},
                        {"state_dim", dataset.state_dim},
                        {"action_dim", dataset.action_dim},
                        {"n_transitions", dataset.transitions.size()},
                        {"row_width", row},
                        {"random_score", dataset.random_score},
                        {"expert_score", dataset.expert_score}};
  out << header.dump() << '\n';
  for (const auto& t : dataset.transitions) {
    for (Eigen::Index i = 0; i < t.state.size(); ++i) detail::write_f64(out, t.state[i]);
    for (Eigen::Index i = 0; i < t.action.size(); ++i) detail::write_f64(out, t.action[i]);
    detail::write_f64(out, t.reward);
    for (Eigen::Index i = 0; i < t.next_state.size(); ++i) detail::write_f64(out, t.next_state[i]);
    detail::write_f64(out, t.terminal ? 1.0 : 0.0);
  }
  if (!out) throw std::runtime_error("failed writing dataset: " + path.string());
}

OfflineDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  const auto header = nlohmann::json::parse(detail::read_header_line(in));
  if (header.at("format") != "pbrl-dataset-v1") throw std::runtime_error("unknown dataset format");
  OfflineDataset ds;
  ds.env_id = header.at("env_id").get<std::string>();
  ds.behavior_id = header.at("behavior_id").get<std::string>();
  ds.state_dim = header.at("state_dim").get<std::size_t>();
  ds.action_dim = header.at("action_dim").get<std::size_t>();
  ds.random_score = header.at("random_score").get<double>();
  ds.expert_score = header.at("expert_score").get<double>();
  const auto n = header.at("n_transitions").get<std::size_t>();
  const auto sd = static_cast<Eigen::Index>(ds.state_dim);
  const auto ad = static_cast<Eigen::Index>(ds.action_dim);
  ds.transitions.resize(n);
  for (auto& t : ds.transitions) {
    t.state.resize(sd);
    t.action.resize(ad);
    t.next_state.resize(sd);
    for (Eigen::Index i = 0; i < sd; ++i) t.state[i] = detail::read_f64(in);
    for (Eigen::Index i = 0; i < ad; ++i) t.action[i] = detail::read_f64(in);
    t.reward = detail::read_f64(in);
    for (Eigen::Index i = 0; i < sd; ++i) t.next_state[i] = detail::read_f64(in);
    t.terminal = detail::read_f64(in) != 0.0;
  }
  ds.validate();
  return ds;
}

void write_dataset_csv(const OfflineDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open csv for writing: " + path.string());
  for (std::size_t i = 0; i < dataset.state_dim; ++i) out << "s" << i << ',';
  for (std::size_t i = 0; i < dataset.action_dim; ++i) out << "a" << i << ',';
  out << "reward,";
  for (std::size_t i = 0; i < dataset.state_dim; ++i) out << "ns" << i << ',';
  out << "terminal\n";
  out << std::setprecision(17);
  for (const auto& t : dataset.transitions) {
    for (Eigen::Index i = 0; i < t.state.size(); ++i) out << t.state[i] << ',';
    for (Eigen::Index i = 0; i < t.action.size(); ++i) out << t.action[i] << ',';
    out << t.reward << ',';
    for (Eigen::Index i = 0; i < t.next_state.size(); ++i) out << t.next_state[i] << ',';
    out << (t.terminal ? 1 : 0) << '\n';
  }
}

double pair_coverage(const OfflineDataset& dataset) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& t : dataset.transitions) seen.emplace(arg_max(t.state), arg_max(t.action));
  return static_cast<double>(seen.size()) /
         static_cast<double>(dataset.state_dim * dataset.action_dim);
}

}  // namespace pbrl
