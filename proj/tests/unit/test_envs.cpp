#include "pbrl/envs.hpp"
#include "pbrl/linear_algos.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pbrl;

TEST(Gridworld, OptimalValueIsDiscountedPathLength) {
  const Gridworld g;
  const Vec v = g.optimal_v();
  for (std::size_t c = 0; c < g.cells(); ++c) {
    if (c == g.goal()) continue;
    const auto len = g.shortest_path(c);
    ASSERT_TRUE(len.has_value());
    EXPECT_NEAR(v[static_cast<Eigen::Index>(c)], std::pow(0.99, static_cast<double>(*len) - 1.0), 1e-10);
  }
  EXPECT_NEAR(g.value_max(), 1.0, 1e-12);
}

TEST(Gridworld, WallsAndEdgesBlockMoves) {
  Gridworld::Options o;
  o.walls = {1};
  const Gridworld g(o);
  EXPECT_EQ(g.move(0, 1), 0u);  // wall to the right
  EXPECT_EQ(g.move(0, 0), 0u);  // top edge
  EXPECT_EQ(g.move(0, 2), 5u);
  EXPECT_TRUE(g.blocked(1));
}

TEST(Gridworld, ExpertReachesGoalOnShortestPath) {
  const Gridworld g;
  SeededRng rng(0);
  Vec s = g.reset(rng);
  std::size_t steps = 0;
  bool done = false;
  while (!done && steps < g.horizon()) {
    auto r = g.step(s, g.expert_action(s), rng);
    ++steps;
    done = r.terminal;
    if (done) {
      EXPECT_EQ(r.reward, 1.0);
    }
    s = r.next_state;
  }
  EXPECT_TRUE(done);
  EXPECT_EQ(steps, *g.shortest_path(g.start()));
}

TEST(Gridworld, SlipIsSometimesTaken) {
  Gridworld::Options o;
  o.slip = 1.0;
  const Gridworld g(o);
  SeededRng rng(3);
  int moved_other = 0;
  for (int i = 0; i < 200; ++i) {
    const auto r = g.step(one_hot(12, 25), one_hot(0, 4), rng);
    moved_other += arg_max(r.next_state) != 7 ? 1 : 0;
  }
  EXPECT_GT(moved_other, 100);
}

TEST(LinearMdp, SampledSpecIsValid) {
  SeededRng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto spec = make_linear_mdp(4, 10, 3, 5, rng);
    EXPECT_NO_THROW(spec.validate());
    const Mat p = spec.transition_matrix();
    EXPECT_LT((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(make_linear_mdp(40, 4, 3, 5, rng), std::invalid_argument);
}

TEST(LinearMdp, GridworldViewMatchesGridDynamics) {
  const Gridworld g;
  const auto spec = gridworld_as_linear_mdp(g, 10);
  const Mat p = spec.transition_matrix();
  for (std::size_t c = 0; c < g.cells(); ++c) {
    if (c == g.goal()) continue;
    for (std::size_t a = 0; a < 4; ++a) {
      const auto row = static_cast<Eigen::Index>(spec.pair_index(c, a));
      EXPECT_NEAR(p(row, static_cast<Eigen::Index>(g.move(c, a))), 1.0, 1e-12);
    }
  }
}

TEST(Datasets, ExpertSingleTransitionIsOptimal) {
  const Gridworld g;
  SeededRng rng(5);
  const auto ds = generate_dataset(g, "expert", 1, rng);
  ASSERT_EQ(ds.size(), 1u);
  const auto cell = static_cast<Eigen::Index>(arg_max(ds.transitions[0].state));
  const auto a = static_cast<Eigen::Index>(arg_max(ds.transitions[0].action));
  EXPECT_NEAR(g.optimal_q()(cell, a), g.optimal_q().row(cell).maxCoeff(), 1e-12);
}

TEST(Datasets, PointMassRandomInvariants) {
  PointMass pm;
  SeededRng rng(6);
  const auto ds = generate_dataset(pm, "random", 1000, rng);
  ASSERT_EQ(ds.size(), 1000u);
  for (const auto& t : ds.transitions) {
    EXPECT_GE(t.reward, 0.0);
    EXPECT_LE(t.reward, 1.0);
    EXPECT_LE(t.action.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Datasets, NarrowCoversFewPairs) {
  for (const std::string env : {"gridworld", "linear-mdp"}) {
    const auto e = make_env(env);
    SeededRng rng(7);
    const auto ds = generate_dataset(*e, "narrow", 5000, rng);
    EXPECT_LT(pair_coverage(ds), 0.3) << env;
  }
}

TEST(Datasets, MixedHasThreeSources) {
  const auto e = make_env("gridworld");
  SeededRng rng(8);
  const auto ds = generate_dataset(*e, "mixed", 3000, rng);
  EXPECT_EQ(ds.size(), 3000u);
  const auto expert = generate_dataset(*e, "expert", 3000, rng);
  EXPECT_GT(pair_coverage(ds), pair_coverage(expert));
}

TEST(Datasets, SameSeedSameData) {
  const auto e = make_env("point-mass");
  SeededRng a(9), b(9);
  const auto x = generate_dataset(*e, "medium", 300, a);
  const auto y = generate_dataset(*e, "medium", 300, b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_EQ(x.transitions[i].action, y.transitions[i].action);
  }
  EXPECT_EQ(x.expert_score, y.expert_score);
}

TEST(Datasets, BinaryRoundTrip) {
  const auto e = make_env("point-mass");
  SeededRng rng(10);
  const auto ds = generate_dataset(*e, "mixed", 250, rng);
  const auto path = test::scratch_dir("dataset") / "d.bin";
  write_dataset(ds, path);
  const auto back = read_dataset(path);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.env_id, ds.env_id);
  EXPECT_EQ(back.behavior_id, ds.behavior_id);
  EXPECT_EQ(back.random_score, ds.random_score);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ASSERT_EQ(back.transitions[i].state, ds.transitions[i].state);
    ASSERT_EQ(back.transitions[i].next_state, ds.transitions[i].next_state);
    ASSERT_EQ(back.transitions[i].reward, ds.transitions[i].reward);
    ASSERT_EQ(back.transitions[i].terminal, ds.transitions[i].terminal);
  }
}

TEST(Datasets, NormalizedScoreAnchors) {
  OfflineDataset ds;
  ds.random_score = 2.0;
  ds.expert_score = 6.0;
  EXPECT_DOUBLE_EQ(normalized_score(2.0, ds), 0.0);
  EXPECT_DOUBLE_EQ(normalized_score(6.0, ds), 100.0);
  EXPECT_DOUBLE_EQ(normalized_score(4.0, ds), 50.0);
  ds.expert_score = 2.0;
  EXPECT_THROW(normalized_score(1.0, ds), std::invalid_argument);
}

TEST(Datasets, UnknownIdsThrow) {
  EXPECT_THROW(make_env("cartpole"), std::invalid_argument);
  const auto e = make_env("gridworld");
  SeededRng rng(0);
  EXPECT_THROW(generate_dataset(*e, "oracle", 10, rng), std::invalid_argument);
}
