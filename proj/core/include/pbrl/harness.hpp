#pragma once

#include "pbrl/eval_stats.hpp"
#include "pbrl/pbrl.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pbrl {

// ------------------------------------------------------------------ config

/// One `key = value` line per field in a fixed order; doubles round-trip exactly.
std::string serialize_config(const PbrlConfig& cfg);
/// Applies `key = value` lines on top of `base`. Blank lines and `#` comments are
/// skipped; unknown keys and malformed values throw std::invalid_argument.
PbrlConfig parse_config(const std::string& text, const PbrlConfig& base = {});
PbrlConfig load_config(const std::filesystem::path& path, const PbrlConfig& base = {});
/// FNV-1a of serialize_config(cfg).
std::uint64_t config_hash(const PbrlConfig& cfg);
std::string hex64(std::uint64_t v);

/// Desk-scale defaults: small networks and short runs on one core.
PbrlConfig desk_config(std::size_t steps = 50000);

/// Cuts allocator round-trips to the kernel for the many short-lived matrices
/// of a training step. No-op outside glibc.
void tune_allocator();

// ----------------------------------------------------------------- presets

/// One training configuration inside a preset.
struct RunSpec {
  std::string name;       // unique inside the preset, used as the output folder
  std::string task;       // score-matrix row label, e.g. "gridworld-narrow"
  std::string algorithm;  // score-matrix group, e.g. "pbrl"
  std::string env;
  std::string behavior;
  std::size_t dataset_size = 10000;
  PbrlConfig config;
};

enum class PresetKind { training, uncertainty_ordering, uq_demo, theory };

struct ExperimentPreset {
  std::string name;
  PresetKind kind = PresetKind::training;
  std::vector<RunSpec> runs;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;
};

struct PresetOptions {
  std::optional<std::size_t> steps;  // overrides H for every training run
  std::vector<std::uint64_t> seeds;  // empty: the preset's own seeds
  bool verbose = false;
};

std::vector<std::string> preset_names();
/// Throws std::invalid_argument for an unknown name; validates every config.
ExperimentPreset make_preset(const std::string& name, const PresetOptions& opts = {});

struct RunRecord {
  std::string preset;
  std::string run;
  std::string task;
  std::string algorithm;
  std::uint64_t seed = 0;
  double final_score = 0.0;
  std::filesystem::path metrics_csv;
  std::string config_hash;
  double wall_seconds = 0.0;
  bool ok = true;
  std::string error;
};

/// Seed used for training run `run_index` of a preset.
std::uint64_t derived_seed(std::uint64_t seed, std::size_t run_index);

/// Deterministic dataset for (env, behavior, n), cached under `cache_dir` when given.
OfflineDataset desk_dataset(const std::string& env, const std::string& behavior, std::size_t n,
                            const std::filesystem::path& cache_dir = {});

/// Runs every (run, seed) pair serially. Failures are recorded, not thrown.
/// Writes records.csv, one summary.json + metrics.csv per run, and one
/// score matrix per algorithm (scores-<algorithm>.csv).
std::vector<RunRecord> run_preset(const std::string& name, const std::filesystem::path& out_dir,
                                  const PresetOptions& opts = {});

/// Trains one run and writes its folder; the record carries the outcome.
RunRecord execute_run(const std::string& preset, const RunSpec& spec, std::size_t run_index,
                      std::uint64_t seed, const std::filesystem::path& out_dir);

/// summary.json for one finished training run; the report step reads these.
void write_run_summary(const std::filesystem::path& path, const std::string& preset, const RunSpec& spec,
                       std::uint64_t seed, std::uint64_t train_seed, const TrainResult& result,
                       const Environment& env);

void write_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);

// ---------------------------------------------------------------- uq demo

struct UqDemoOptions {
  std::size_t n_points = 60;
  std::size_t ensemble_size = 10;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 2000;  // full-batch optimizer steps
  double lr = 3e-3;
  std::size_t grid_n = 41;
  double extent = 4.0;
  bool identical_init = false;  // every member starts from member 0's weights
};

struct UqDemoResult {
  Mat grid;      // (grid_n^2 x 3): x1, x2, U
  Mat train_x;   // (2 x n_points)
  Vec train_y;
  Vec train_u;   // U at the training inputs
  double sigma = 0.0;            // pooled std of the training inputs
  double median_in = 0.0;        // median U at the training inputs
  double far_mean = 0.0;         // mean U over grid points > 2 sigma from every training input
  std::size_t far_points = 0;
  double corner_u = 0.0;         // U at (extent, extent)
};

UqDemoResult uq_demo(const UqDemoOptions& opts, SeededRng& rng);
void write_uq_grid_csv(const UqDemoResult& result, const std::filesystem::path& path);

// ------------------------------------------------------------ theory track

struct RidgeEquivalenceResult {
  std::size_t instances = 0;
  double max_abs_diff = 0.0;
};

/// lsvi_solve_ood with sqrt(lambda) e_j anchors against ridge lsvi_solve.
RidgeEquivalenceResult theory_ridge_equivalence(std::size_t instances, SeededRng& rng);

struct CoverageSweepResult {
  std::vector<double> betas;
  std::vector<double> coverage;  // mean over seeds, per beta
  double calibrated_beta = 0.0;
  double calibrated_coverage = 0.0;
  std::vector<double> per_seed;  // coverage at the calibrated beta
  bool monotone = true;
};

struct CoverageSweepOptions {
  std::size_t d = 4;
  std::size_t n_states = 10;
  std::size_t n_actions = 3;
  std::size_t horizon = 5;
  std::size_t episodes = 500;
  std::size_t n_probes = 1000;
  double xi = 0.1;
  double calibration_c = 0.05;
  double lambda = 1.0;
  std::size_t seeds = 20;
  std::vector<double> sweep_factors{0.001, 0.01, 0.1, 1.0, 10.0};  // times the calibrated beta
};

CoverageSweepResult theory_xi_coverage(const CoverageSweepOptions& opts, std::uint64_t seed);

struct CorollaryRun {
  std::uint64_t seed = 0;
  double quantifier_coverage = 0.0;
  double gap = 0.0;
  double bound = 0.0;
  bool qualifies = false;  // the quantifier held at every (t, s, a)
  bool holds = false;      // gap <= bound
};

struct CorollaryOptions {
  std::size_t horizon = 10;
  std::size_t episodes = 5000;
  double slip = 0.1;
  double epsilon = 0.5;
  double xi = 0.1;
  double calibration_c = 0.003;
  double lambda = 1.0;
  std::size_t seeds = 20;
};

std::vector<CorollaryRun> theory_corollary_bound(const CorollaryOptions& opts, std::uint64_t seed);

// ------------------------------------------------------ uncertainty ordering

struct UncertaintyOrdering {
  double offline = 0.0;
  double noise_small = 0.0;
  double noise_large = 0.0;
  double random = 0.0;
  double policy = 0.0;
  /// offline < small < large and random ranked first or second of the four.
  bool holds() const;
};

/// Mean ensemble std at dataset states for offline, perturbed (0.1 and 0.5
/// times the action scale), uniform random and policy actions.
UncertaintyOrdering measure_uncertainty_ordering(const TrainResult& trained,
                                                 const OfflineDataset& dataset, std::size_t n_states,
                                                 SeededRng& rng);

// ------------------------------------------------------------------ report

struct ReportOutputs {
  std::vector<std::string> algorithms;
  std::vector<ScoreMatrix> matrices;
};

/// Collects every summary.json under runs_dir, builds one score matrix per
/// algorithm and writes aggregates.csv, profiles.csv and ci.json to out_dir.
ReportOutputs write_report(const std::filesystem::path& runs_dir, double eta,
                           const std::filesystem::path& out_dir, std::uint64_t seed = 0,
                           std::size_t n_resamples = 2000);

}  // namespace pbrl
