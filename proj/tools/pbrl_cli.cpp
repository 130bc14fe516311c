// Command-line front end: dataset generation, training, presets, reports.
#include "pbrl/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace {

int gen_data(const std::string& env_id, const std::string& behavior, std::size_t n, std::uint64_t seed,
             const fs::path& out, bool csv) {
  const auto env = pbrl::make_env(env_id);
  pbrl::SeededRng rng(seed);
  const pbrl::OfflineDataset ds = pbrl::generate_dataset(*env, behavior, n, rng);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (csv) {
    pbrl::write_dataset_csv(ds, out);
  } else {
    pbrl::write_dataset(ds, out);
  }
  std::cout << "wrote " << ds.size() << " transitions to " << out.string() << " (pair coverage "
            << pbrl::pair_coverage(ds) << ")\n";
  return 0;
}

int train(const fs::path& config_path, const fs::path& dataset_path, std::uint64_t seed,
          const fs::path& out) {
  pbrl::RunSpec spec;
  spec.config = config_path.empty() ? pbrl::desk_config() : pbrl::load_config(config_path, pbrl::desk_config());
  const pbrl::OfflineDataset ds = pbrl::read_dataset(dataset_path);
  const auto env = pbrl::make_env(ds.env_id);
  spec.env = ds.env_id;
  spec.behavior = ds.behavior_id;
  spec.dataset_size = ds.size();
  spec.task = ds.env_id + "-" + ds.behavior_id;
  spec.algorithm = pbrl::to_string(spec.config.variant);
  spec.name = spec.task + "-" + spec.algorithm;

  const pbrl::TrainResult res = pbrl::train(ds, *env, spec.config, seed);
  fs::create_directories(out);
  pbrl::write_metrics_csv(res.metrics, out / "metrics.csv");
  std::ofstream(out / "config.txt") << pbrl::serialize_config(spec.config);
  pbrl::write_run_summary(out / "summary.json", "train", spec, seed, seed, res, *env);
  std::cout << "final normalized score " << res.final_score << "\n";
  return 0;
}

int run_preset(const std::string& name, const fs::path& out, std::optional<std::size_t> steps,
               const std::vector<std::uint64_t>& seeds, bool quiet) {
  pbrl::PresetOptions opts;
  opts.steps = steps;
  opts.seeds = seeds;
  opts.verbose = !quiet;
  const auto records = pbrl::run_preset(name, out, opts);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.ok ? 0 : 1;
  std::cout << records.size() - failed << "/" << records.size() << " runs succeeded; records in "
            << (out / "records.csv").string() << "\n";
  return failed == 0 ? 0 : 1;
}

int report(const fs::path& runs, double eta, const fs::path& out, std::uint64_t seed, std::size_t resamples) {
  const auto rep = pbrl::write_report(runs, eta, out, seed, resamples);
  for (std::size_t i = 0; i < rep.algorithms.size(); ++i) {
    const auto& m = rep.matrices[i];
    const auto metric = m.scores.size() >= 4 ? pbrl::Metric::iqm : pbrl::Metric::mean;
    std::cout << rep.algorithms[i] << ": " << m.tasks.size() << " tasks x " << m.scores.cols() << " seeds, "
              << pbrl::to_string(metric) << " " << pbrl::aggregate(m, metric, eta) << "\n";
  }
  std::cout << "report written to " << out.string() << "\n";
  return 0;
}

int uq_demo(std::uint64_t seed, const fs::path& out, std::size_t points, bool identical) {
  pbrl::UqDemoOptions opts;
  opts.n_points = points;
  opts.identical_init = identical;
  pbrl::SeededRng rng(seed);
  const auto r = pbrl::uq_demo(opts, rng);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  pbrl::write_uq_grid_csv(r, out);
  std::cout << "median in-data U " << r.median_in << ", mean U beyond 2 sigma " << r.far_mean << " over "
            << r.far_points << " grid points, corner U " << r.corner_u << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  pbrl::tune_allocator();
  CLI::App app{"Pessimistic bootstrapping for offline RL at desk scale"};
  app.require_subcommand(1);

  std::string env_id = "gridworld", behavior = "medium";
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  fs::path out;
  bool csv = false;
  auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset");
  gen->add_option("--env", env_id)->check(CLI::IsMember(pbrl::env_ids()));
  gen->add_option("--behavior", behavior)->check(CLI::IsMember(pbrl::behavior_ids()));
  gen->add_option("--n", n, "number of transitions");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out)->required();
  gen->add_flag("--csv", csv, "write CSV instead of the binary format");

  fs::path config, dataset;
  auto* tr = app.add_subcommand("train", "Train on a dataset file");
  tr->add_option("--config", config, "key = value overrides on top of the desk defaults")->check(CLI::ExistingFile);
  tr->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
  tr->add_option("--seed", seed);
  tr->add_option("--out", out, "run directory")->required();

  std::string preset;
  std::optional<std::size_t> steps;
  std::vector<std::uint64_t> seeds;
  bool quiet = false, list = false;
  auto* rp = app.add_subcommand("run-preset", "Run a named experiment preset");
  rp->add_option("name", preset)->check(CLI::IsMember(pbrl::preset_names()));
  rp->add_option("--out", out);
  rp->add_option("--steps", steps, "training steps per run");
  rp->add_option("--seeds", seeds, "override the preset seeds");
  rp->add_flag("--quiet", quiet);
  rp->add_flag("--list", list, "print preset names and exit");

  fs::path runs;
  double eta = 50.0;
  std::size_t resamples = 2000;
  auto* rep = app.add_subcommand("report", "Aggregate run summaries");
  rep->add_option("--runs", runs)->required()->check(CLI::ExistingDirectory);
  rep->add_option("--eta", eta, "optimality-gap threshold");
  rep->add_option("--out", out)->required();
  rep->add_option("--seed", seed, "bootstrap seed");
  rep->add_option("--resamples", resamples);

  std::size_t points = 60;
  bool identical = false;
  auto* uq = app.add_subcommand("uq-demo", "Ensemble uncertainty on a 2-D toy regression");
  uq->add_option("--seed", seed);
  uq->add_option("--out", out, "grid CSV")->required();
  uq->add_option("--points", points);
  uq->add_flag("--identical-init", identical, "start every member from the same weights");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(env_id, behavior, n, seed, out, csv);
    if (*tr) return train(config, dataset, seed, out);
    if (*rp) {
      if (list) {
        for (const auto& p : pbrl::preset_names()) std::cout << p << "\n";
        return 0;
      }
      if (preset.empty() || out.empty()) {
        std::cerr << "run-preset needs a preset name and --out\n";
        return 2;
      }
      return run_preset(preset, out, steps, seeds, quiet);
    }
    if (*rep) return report(runs, eta, out, seed, resamples);
    if (*uq) return uq_demo(seed, out, points, identical);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
