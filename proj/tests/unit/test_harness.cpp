#include "pbrl/harness.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace pbrl;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Config, SerializeParseRoundTrip) {
  PbrlConfig c = desk_config(1234);
  c.variant = Variant::sn_last2;
  c.beta_in = 0.1 / 3.0;
  c.beta_ood.constant = true;
  c.critic_hidden = {7, 9, 11};
  c.actor_aggregate = ActorAggregate::max;
  c.in_penalty_site = PenaltySite::both;
  c.prior_enabled = true;
  const std::string text = serialize_config(c);
  const PbrlConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.beta_in, c.beta_in);
  EXPECT_EQ(back.critic_hidden, c.critic_hidden);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, OverlayCommentsAndErrors) {
  const PbrlConfig c = parse_config("# comment\n\nsteps = 77\nvariant = naive\n", desk_config());
  EXPECT_EQ(c.steps, 77u);
  EXPECT_EQ(c.variant, Variant::naive);
  EXPECT_EQ(c.critic_hidden, desk_config().critic_hidden);
  EXPECT_THROW(parse_config("stepz = 3\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("steps = 3\nsteps = 4\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("gamma = abc\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("no equals sign\n"), std::invalid_argument);
}

TEST(Config, HashChangesWithAnyField) {
  const PbrlConfig a = desk_config();
  PbrlConfig b = a;
  b.tau = 0.0051;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Presets, EveryPresetBuildsAndValidates) {
  for (const auto& name : preset_names()) {
    const auto p = make_preset(name);
    EXPECT_EQ(p.name, name);
    EXPECT_FALSE(p.seeds.empty()) << name;
    std::set<std::string> runs;
    for (const auto& r : p.runs) {
      EXPECT_TRUE(runs.insert(r.name).second) << name << "/" << r.name;
      EXPECT_NO_THROW(r.config.validate());
    }
    if (p.kind == PresetKind::training) {
      EXPECT_FALSE(p.runs.empty()) << name;
    }
  }
  EXPECT_THROW(make_preset("nope"), std::invalid_argument);
}

TEST(Presets, MainCoversNineSettingsPerAlgorithm) {
  const auto p = make_preset("main");
  std::map<std::string, std::set<std::string>> tasks;
  for (const auto& r : p.runs) tasks[r.algorithm].insert(r.task);
  ASSERT_TRUE(tasks.count("pbrl"));
  EXPECT_EQ(tasks["pbrl"].size(), 9u);
  EXPECT_EQ(tasks["naive"].size(), 9u);
}

TEST(Presets, OptionsOverrideStepsAndSeeds) {
  PresetOptions o;
  o.steps = 321;
  o.seeds = {9, 10};
  const auto p = make_preset("ablate-K", o);
  EXPECT_EQ(p.seeds, o.seeds);
  for (const auto& r : p.runs) EXPECT_EQ(r.config.steps, 321u);
  std::set<std::size_t> ks;
  for (const auto& r : p.runs) ks.insert(r.config.ensemble_size);
  EXPECT_EQ(*ks.begin(), 2u);
  EXPECT_EQ(*ks.rbegin(), 10u);
}

TEST(Seeds, DerivedSeedSeparatesRuns) {
  EXPECT_EQ(derived_seed(5, 0), 5u);
  EXPECT_EQ(derived_seed(5, 1), 5u ^ (1ULL << 32));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 5; ++s)
    for (std::size_t r = 0; r < 30; ++r) seen.insert(derived_seed(s, r));
  EXPECT_EQ(seen.size(), 150u);
}

TEST(DeskDataset, CachedCopyMatchesFresh) {
  const auto dir = test::scratch_dir("cache");
  const auto a = desk_dataset("gridworld", "mixed", 400, dir);
  const auto b = desk_dataset("gridworld", "mixed", 400, dir);  // read back from the cache
  const auto c = desk_dataset("gridworld", "mixed", 400);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.transitions[i].state, b.transitions[i].state);
    ASSERT_EQ(a.transitions[i].action, c.transitions[i].action);
  }
}

TEST(RunPreset, WritesRecordsSummariesAndScores) {
  const auto dir = test::scratch_dir("preset");
  PresetOptions o;
  o.steps = 20;
  o.seeds = {0, 1};
  const auto records = run_preset("ablate-n-ood", dir, o);
  ASSERT_EQ(records.size(), 8u);
  for (const auto& r : records) {
    EXPECT_TRUE(r.ok) << r.run << ": " << r.error;
    EXPECT_TRUE(std::filesystem::exists(r.metrics_csv));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "records.csv"));
  const auto rep = write_report(dir, 50.0, dir / "report", 0, 200);
  EXPECT_FALSE(rep.algorithms.empty());
  EXPECT_TRUE(std::filesystem::exists(dir / "report" / "aggregates.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "report" / "profiles.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "report" / "ci.json"));
}

TEST(RunPreset, RepeatRunIsByteIdentical) {
  const auto dir_a = test::scratch_dir("repeat-a");
  const auto dir_b = test::scratch_dir("repeat-b");
  const auto p = make_preset("ablate-zero-target", {.steps = 30, .seeds = {3}});
  const auto a = execute_run(p.name, p.runs[0], 0, 3, dir_a);
  const auto b = execute_run(p.name, p.runs[0], 0, 3, dir_b);
  ASSERT_TRUE(a.ok && b.ok);
  EXPECT_EQ(slurp(a.metrics_csv), slurp(b.metrics_csv));
  EXPECT_EQ(a.config_hash, b.config_hash);
}

TEST(RecordsCsv, HeaderAndRows) {
  RunRecord r;
  r.preset = "main";
  r.run = "x";
  r.task = "gridworld-narrow";
  r.algorithm = "pbrl";
  r.final_score = 12.5;
  r.ok = false;
  r.error = "boom, with comma";
  const auto path = test::scratch_dir("records") / "records.csv";
  write_records_csv({r}, path);
  const std::string text = slurp(path);
  EXPECT_EQ(text.rfind("preset,run,task,algorithm,seed,final_score", 0), 0u);
  EXPECT_NE(text.find("12.5"), std::string::npos);
}

TEST(UqDemo, UncertaintyGrowsAwayFromData) {
  UqDemoOptions o;
  o.n_points = 30;
  o.ensemble_size = 5;
  o.hidden = {16, 16};
  o.epochs = 400;
  o.grid_n = 11;
  SeededRng rng(0);
  const auto r = uq_demo(o, rng);
  EXPECT_EQ(r.grid.rows(), 121);
  EXPECT_EQ(r.train_x.cols(), 30);
  EXPECT_GT(r.far_points, 0u);
  EXPECT_GT(r.far_mean, r.median_in);
  EXPECT_GT(r.corner_u, r.median_in);
}

TEST(UqDemo, IdenticalInitCollapsesEnsemble) {
  UqDemoOptions o;
  o.n_points = 20;
  o.ensemble_size = 3;
  o.hidden = {8};
  o.epochs = 50;
  o.grid_n = 5;
  o.identical_init = true;
  SeededRng rng(1);
  const auto r = uq_demo(o, rng);
  EXPECT_LT(r.grid.col(2).maxCoeff(), 1e-12);
}

TEST(Theory, RidgeEquivalenceHolds) {
  SeededRng rng(2);
  const auto r = theory_ridge_equivalence(50, rng);
  EXPECT_EQ(r.instances, 50u);
  EXPECT_LT(r.max_abs_diff, 1e-8);
}

TEST(Theory, CoverageSweepIsMonotone) {
  CoverageSweepOptions o;
  o.seeds = 2;
  o.episodes = 100;
  o.n_probes = 200;
  const auto r = theory_xi_coverage(o, 0);
  EXPECT_EQ(r.betas.size(), o.sweep_factors.size());
  EXPECT_TRUE(r.monotone);
  EXPECT_EQ(r.per_seed.size(), 2u);
}
