#include "pbrl/harness.hpp"

#include "pbrl/linear_algos.hpp"
#include "pbrl/uncertainty.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pbrl {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ config

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("config: " + key + " expects a real number, got '" + v + "'");
  }
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_count(key, trim(item)));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const PbrlConfig&)> get;
  std::function<void(PbrlConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto real = [&f](const char* key, auto member) {
      f.push_back({key, [member](const PbrlConfig& c) { return format_double(member(const_cast<PbrlConfig&>(c))); },
                   [member, key](PbrlConfig& c, const std::string& v) { member(c) = parse_double(key, v); }});
    };
    auto count = [&f](const char* key, auto member) {
      f.push_back({key, [member](const PbrlConfig& c) { return std::to_string(member(const_cast<PbrlConfig&>(c))); },
                   [member, key](PbrlConfig& c, const std::string& v) { member(c) = parse_count(key, v); }});
    };
    auto flag = [&f](const char* key, auto member) {
      f.push_back({key, [member](const PbrlConfig& c) -> std::string { return member(const_cast<PbrlConfig&>(c)) ? "true" : "false"; },
                   [member, key](PbrlConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }});
    };
    f.push_back({"variant", [](const PbrlConfig& c) { return to_string(c.variant); },
                 [](PbrlConfig& c, const std::string& v) { c.variant = parse_variant(v); }});
    count("ensemble_size", [](PbrlConfig& c) -> std::size_t& { return c.ensemble_size; });
    f.push_back({"critic_hidden", [](const PbrlConfig& c) { return join_sizes(c.critic_hidden); },
                 [](PbrlConfig& c, const std::string& v) { c.critic_hidden = parse_sizes("critic_hidden", v); }});
    f.push_back({"actor_hidden", [](const PbrlConfig& c) { return join_sizes(c.actor_hidden); },
                 [](PbrlConfig& c, const std::string& v) { c.actor_hidden = parse_sizes("actor_hidden", v); }});
    real("beta_in", [](PbrlConfig& c) -> double& { return c.beta_in; });
    real("beta_ood_start", [](PbrlConfig& c) -> double& { return c.beta_ood.start; });
    real("beta_ood_end", [](PbrlConfig& c) -> double& { return c.beta_ood.end; });
    count("beta_ood_linear_steps", [](PbrlConfig& c) -> std::size_t& { return c.beta_ood.linear_steps; });
    real("beta_ood_post_rate", [](PbrlConfig& c) -> double& { return c.beta_ood.post_rate; });
    count("beta_ood_post_interval", [](PbrlConfig& c) -> std::size_t& { return c.beta_ood.post_interval; });
    real("beta_ood_floor", [](PbrlConfig& c) -> double& { return c.beta_ood.floor; });
    flag("beta_ood_constant", [](PbrlConfig& c) -> bool& { return c.beta_ood.constant; });
    flag("beta_ood_rescale", [](PbrlConfig& c) -> bool& { return c.beta_ood_rescale; });
    real("gamma", [](PbrlConfig& c) -> double& { return c.gamma; });
    real("tau", [](PbrlConfig& c) -> double& { return c.tau; });
    real("lr_actor", [](PbrlConfig& c) -> double& { return c.lr_actor; });
    real("lr_critic", [](PbrlConfig& c) -> double& { return c.lr_critic; });
    count("n_ood", [](PbrlConfig& c) -> std::size_t& { return c.n_ood; });
    count("steps", [](PbrlConfig& c) -> std::size_t& { return c.steps; });
    count("batch_size", [](PbrlConfig& c) -> std::size_t& { return c.batch_size; });
    flag("prior_enabled", [](PbrlConfig& c) -> bool& { return c.prior_enabled; });
    real("prior_scale", [](PbrlConfig& c) -> double& { return c.prior_scale; });
    f.push_back({"actor_aggregate", [](const PbrlConfig& c) { return to_string(c.actor_aggregate); },
                 [](PbrlConfig& c, const std::string& v) { c.actor_aggregate = parse_actor_aggregate(v); }});
    f.push_back({"in_penalty_site", [](const PbrlConfig& c) { return to_string(c.in_penalty_site); },
                 [](PbrlConfig& c, const std::string& v) { c.in_penalty_site = parse_penalty_site(v); }});
    real("alpha", [](PbrlConfig& c) -> double& { return c.alpha; });
    real("l2_scale", [](PbrlConfig& c) -> double& { return c.l2_scale; });
    f.push_back({"sn_iterations", [](const PbrlConfig& c) { return std::to_string(c.sn_iterations); },
                 [](PbrlConfig& c, const std::string& v) {
                   c.sn_iterations = static_cast<int>(parse_count("sn_iterations", v));
                 }});
    count("eval_interval", [](PbrlConfig& c) -> std::size_t& { return c.eval_interval; });
    count("eval_episodes", [](PbrlConfig& c) -> std::size_t& { return c.eval_episodes; });
    count("probe_size", [](PbrlConfig& c) -> std::size_t& { return c.probe_size; });
    return f;
  }();
  return table;
}

}  // namespace

std::string serialize_config(const PbrlConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

PbrlConfig parse_config(const std::string& text, const PbrlConfig& base) {
  PbrlConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    if (!seen.insert(key).second) throw std::invalid_argument("config: duplicate key '" + key + "'");
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

PbrlConfig load_config(const fs::path& path, const PbrlConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), base);
}

std::uint64_t config_hash(const PbrlConfig& cfg) { return fnv1a64(serialize_config(cfg)); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

PbrlConfig desk_config(std::size_t steps) {
  PbrlConfig cfg;
  cfg.critic_hidden = {32, 32};
  cfg.actor_hidden = {32, 32};
  cfg.batch_size = 64;
  cfg.n_ood = 4;
  cfg.steps = steps;
  return cfg;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

// ----------------------------------------------------------------- presets

namespace {

const std::vector<std::uint64_t> kDefaultSeeds{0, 1, 2, 3, 4};
const std::vector<std::string> kMainBehaviors{"narrow", "medium", "mixed"};

RunSpec spec_for(const std::string& env, const std::string& behavior, const std::string& algorithm,
                 const PbrlConfig& cfg) {
  RunSpec r;
  r.task = env + "-" + behavior;
  r.algorithm = algorithm;
  r.name = r.task + "-" + algorithm;
  r.env = env;
  r.behavior = behavior;
  r.config = cfg;
  return r;
}

PbrlConfig with_variant(PbrlConfig cfg, Variant v) {
  cfg.variant = v;
  return cfg;
}

std::string label(const char* prefix, double v) {
  std::ostringstream os;
  os << prefix << v;
  return os.str();
}

ExperimentPreset build_preset(const std::string& name, std::size_t steps) {
  ExperimentPreset p;
  p.name = name;
  p.seeds = kDefaultSeeds;
  const PbrlConfig base = desk_config(steps);
  // Single-setting ablations run on the continuous medium dataset.
  const std::string env = "point-mass";
  const std::string beh = "medium";
  auto add = [&](const std::string& algo, const PbrlConfig& cfg) { p.runs.push_back(spec_for(env, beh, algo, cfg)); };

  if (name == "main") {
    for (const auto& e : env_ids()) {
      for (const auto& b : kMainBehaviors) {
        p.runs.push_back(spec_for(e, b, "pbrl", base));
        p.runs.push_back(spec_for(e, b, "naive", with_variant(base, Variant::naive)));
        p.runs.push_back(spec_for(e, b, "zero_target", with_variant(base, Variant::zero_target)));
      }
    }
  } else if (name == "ablate-K") {
    for (std::size_t k : {2, 4, 6, 8, 10}) {
      PbrlConfig c = base;
      c.ensemble_size = k;
      add("K=" + std::to_string(k), c);
    }
  } else if (name == "ablate-penalty-site") {
    for (PenaltySite s : {PenaltySite::next_q, PenaltySite::reward, PenaltySite::both}) {
      PbrlConfig c = base;
      c.in_penalty_site = s;
      add("site=" + to_string(s), c);
    }
  } else if (name == "ablate-beta-in") {
    for (double b : {0.1, 0.01, 0.001, 0.0001}) {
      PbrlConfig c = base;
      c.beta_in = b;
      add(label("beta_in=", b), c);
    }
  } else if (name == "ablate-beta-ood") {
    for (double b : {0.01, 0.1, 1.0}) {
      PbrlConfig c = base;
      c.beta_ood.constant = true;
      c.beta_ood.start = b;
      add(label("beta_ood=", b), c);
    }
    add("beta_ood=decay", base);
  } else if (name == "ablate-actor-agg") {
    for (ActorAggregate a : {ActorAggregate::min, ActorAggregate::mean, ActorAggregate::max}) {
      PbrlConfig c = base;
      c.actor_aggregate = a;
      add("actor=" + to_string(a), c);
    }
  } else if (name == "ablate-n-ood") {
    for (std::size_t n : {0, 2, 5, 10}) {
      PbrlConfig c = base;
      c.n_ood = n;
      add("n_ood=" + std::to_string(n), c);
    }
  } else if (name == "ablate-zero-target") {
    for (const std::string e : {"gridworld", "point-mass"}) {
      p.runs.push_back(spec_for(e, "medium", "pbrl", base));
      p.runs.push_back(spec_for(e, "medium", "zero_target", with_variant(base, Variant::zero_target)));
    }
  } else if (name == "regularizers") {
    add("pbrl", base);
    add("none", with_variant(base, Variant::naive));
    for (double s : {1e-2, 1e-4}) {
      PbrlConfig c = with_variant(base, Variant::l2);
      c.l2_scale = s;
      add(label("l2=", s), c);
    }
    for (Variant v : {Variant::sn_last, Variant::sn_last2, Variant::pi_small, Variant::pi_large}) {
      add(to_string(v), with_variant(base, v));
    }
  } else if (name == "uncertainty-ordering") {
    p.kind = PresetKind::uncertainty_ordering;
    add("pbrl", base);
  } else if (name == "uq-demo") {
    p.kind = PresetKind::uq_demo;
  } else if (name == "theory-ridge-equiv" || name == "theory-xi-coverage" ||
             name == "theory-corollary-bound") {
    p.kind = PresetKind::theory;
    p.seeds = {0};
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }

  switch (p.kind) {
    case PresetKind::training: p.outputs = {"records.csv", "scores-<algorithm>.csv", "<run>/seed-<s>/{metrics.csv,config.txt,summary.json}"}; break;
    case PresetKind::uncertainty_ordering: p.outputs = {"records.csv", "<run>/seed-<s>/{metrics.csv,config.txt,summary.json,ordering.json}"}; break;
    case PresetKind::uq_demo: p.outputs = {"records.csv", "seed-<s>/{grid.csv,summary.json}"}; break;
    case PresetKind::theory: p.outputs = {"records.csv", "seed-<s>/result.json"}; break;
  }
  return p;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"uq-demo",          "uncertainty-ordering", "ablate-K",           "ablate-penalty-site",
          "ablate-beta-in",   "ablate-beta-ood",      "ablate-actor-agg",   "ablate-n-ood",
          "ablate-zero-target", "regularizers",       "theory-ridge-equiv", "theory-xi-coverage",
          "theory-corollary-bound", "main"};
}

ExperimentPreset make_preset(const std::string& name, const PresetOptions& opts) {
  ExperimentPreset p = build_preset(name, opts.steps.value_or(50000));
  if (!opts.seeds.empty()) p.seeds = opts.seeds;
  std::set<std::string> names;
  for (const auto& r : p.runs) {
    if (!names.insert(r.name).second) throw std::logic_error("preset " + name + ": duplicate run " + r.name);
    r.config.validate();
  }
  return p;
}

std::uint64_t derived_seed(std::uint64_t seed, std::size_t run_index) {
  return seed ^ (static_cast<std::uint64_t>(run_index) << 32);
}

OfflineDataset desk_dataset(const std::string& env_id, const std::string& behavior, std::size_t n,
                            const fs::path& cache_dir) {
  const std::string key = env_id + "-" + behavior + "-" + std::to_string(n);
  fs::path cached;
  if (!cache_dir.empty()) {
    cached = cache_dir / (key + ".bin");
    if (fs::exists(cached)) return read_dataset(cached);
  }
  const auto env = make_env(env_id);
  SeededRng rng(fnv1a64(key));
  OfflineDataset ds = generate_dataset(*env, behavior, n, rng);
  if (!cached.empty()) {
    fs::create_directories(cache_dir);
    write_dataset(ds, cached);
  }
  return ds;
}

namespace {

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json summary_json(const std::string& preset, const RunSpec& spec, std::uint64_t seed,
                  std::uint64_t train_seed, const TrainResult& res, const Environment& env) {
  double max_q_pi = -std::numeric_limits<double>::infinity();
  for (const auto& m : res.metrics) max_q_pi = std::max(max_q_pi, m.q_pi_max);
  json j;
  j["kind"] = "training";
  j["preset"] = preset;
  j["run"] = spec.name;
  j["task"] = spec.task;
  j["algorithm"] = spec.algorithm;
  j["seed"] = seed;
  j["train_seed"] = train_seed;
  j["env"] = spec.env;
  j["behavior"] = spec.behavior;
  j["dataset_size"] = spec.dataset_size;
  j["steps"] = spec.config.steps;
  j["config_hash"] = hex64(config_hash(spec.config));
  j["final_score"] = res.final_score;
  j["value_max"] = env.value_max();
  j["max_q_pi"] = max_q_pi;
  j["final_q_in_mean"] = res.metrics.back().q_in_mean;
  j["final_q_in_abs_mean"] = res.metrics.back().q_in_abs_mean;
  return j;
}

struct RunOutcome {
  RunRecord record;
  std::optional<TrainResult> trained;
  std::optional<OfflineDataset> dataset;
};

RunOutcome run_once(const std::string& preset, const RunSpec& spec, std::size_t run_index,
                    std::uint64_t seed, const fs::path& out_dir) {
  RunOutcome o;
  RunRecord& rec = o.record;
  rec.preset = preset;
  rec.run = spec.name;
  rec.task = spec.task;
  rec.algorithm = spec.algorithm;
  rec.seed = seed;
  rec.config_hash = hex64(config_hash(spec.config));
  const fs::path dir = out_dir / spec.name / ("seed-" + std::to_string(seed));
  rec.metrics_csv = dir / "metrics.csv";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::create_directories(dir);
    write_text(serialize_config(spec.config), dir / "config.txt");
    OfflineDataset ds = desk_dataset(spec.env, spec.behavior, spec.dataset_size, out_dir / "datasets");
    const auto env = make_env(spec.env);
    const std::uint64_t train_seed = derived_seed(seed, run_index);
    TrainResult res = train(ds, *env, spec.config, train_seed);
    write_metrics_csv(res.metrics, rec.metrics_csv);
    write_run_summary(dir / "summary.json", preset, spec, seed, train_seed, res, *env);
    rec.final_score = res.final_score;
    o.trained = std::move(res);
    o.dataset = std::move(ds);
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

void write_score_matrices(const ExperimentPreset& p, const std::vector<RunRecord>& records,
                          const fs::path& out_dir) {
  std::vector<std::string> algorithms;
  for (const auto& r : p.runs) {
    if (std::find(algorithms.begin(), algorithms.end(), r.algorithm) == algorithms.end()) {
      algorithms.push_back(r.algorithm);
    }
  }
  for (const auto& algo : algorithms) {
    ScoreMatrix m;
    for (const auto& r : p.runs) {
      if (r.algorithm == algo) m.tasks.push_back(r.task);
    }
    m.scores.resize(static_cast<Eigen::Index>(m.tasks.size()), static_cast<Eigen::Index>(p.seeds.size()));
    bool complete = true;
    for (std::size_t t = 0; t < m.tasks.size(); ++t) {
      for (std::size_t s = 0; s < p.seeds.size(); ++s) {
        const auto it = std::find_if(records.begin(), records.end(), [&](const RunRecord& r) {
          return r.algorithm == algo && r.task == m.tasks[t] && r.seed == p.seeds[s] && r.ok;
        });
        if (it == records.end()) {
          complete = false;
        } else {
          m.scores(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s)) = it->final_score;
        }
      }
    }
    if (complete) write_score_matrix(m, out_dir / ("scores-" + algo + ".csv"));
  }
}

json ordering_json(const UncertaintyOrdering& o) {
  return {{"offline", o.offline}, {"noise_small", o.noise_small}, {"noise_large", o.noise_large},
          {"random", o.random},   {"policy", o.policy},           {"holds", o.holds()}};
}

RunRecord theory_record(const std::string& preset, std::uint64_t seed, const fs::path& out_dir) {
  RunRecord rec;
  rec.preset = preset;
  rec.run = preset;
  rec.task = preset;
  rec.algorithm = "theory";
  rec.seed = seed;
  const fs::path dir = out_dir / ("seed-" + std::to_string(seed));
  rec.metrics_csv = dir / "result.json";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::create_directories(dir);
    json j;
    j["kind"] = "theory";
    j["preset"] = preset;
    j["seed"] = seed;
    if (preset == "theory-ridge-equiv") {
      SeededRng rng(seed);
      const auto r = theory_ridge_equivalence(100, rng);
      j["instances"] = r.instances;
      j["max_abs_diff"] = r.max_abs_diff;
      j["passes"] = r.max_abs_diff < 1e-10;
      rec.final_score = r.max_abs_diff;
    } else if (preset == "theory-xi-coverage") {
      const auto r = theory_xi_coverage({}, seed);
      j["betas"] = r.betas;
      j["coverage"] = r.coverage;
      j["calibrated_beta"] = r.calibrated_beta;
      j["calibrated_coverage"] = r.calibrated_coverage;
      j["per_seed"] = r.per_seed;
      j["monotone"] = r.monotone;
      rec.final_score = r.calibrated_coverage;
    } else {
      const auto runs = theory_corollary_bound({}, seed);
      json arr = json::array();
      std::size_t violations = 0;
      for (const auto& r : runs) {
        arr.push_back({{"seed", r.seed}, {"quantifier_coverage", r.quantifier_coverage}, {"gap", r.gap},
                       {"bound", r.bound}, {"qualifies", r.qualifies}, {"holds", r.holds}});
        if (r.qualifies && !r.holds) ++violations;
      }
      j["runs"] = arr;
      j["violations"] = violations;
      rec.final_score = static_cast<double>(violations);
    }
    write_json(j, rec.metrics_csv);
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

RunRecord uq_record(std::uint64_t seed, const fs::path& out_dir) {
  RunRecord rec;
  rec.preset = "uq-demo";
  rec.run = "uq-demo";
  rec.task = "uq-demo";
  rec.algorithm = "ensemble";
  rec.seed = seed;
  const fs::path dir = out_dir / ("seed-" + std::to_string(seed));
  rec.metrics_csv = dir / "grid.csv";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::create_directories(dir);
    SeededRng rng(seed);
    const UqDemoResult r = uq_demo({}, rng);
    write_uq_grid_csv(r, rec.metrics_csv);
    const double ratio = r.median_in > 0.0 ? r.far_mean / r.median_in : std::numeric_limits<double>::infinity();
    write_json({{"kind", "uq-demo"}, {"seed", seed}, {"sigma", r.sigma}, {"median_in", r.median_in},
                {"far_mean", r.far_mean}, {"far_points", r.far_points}, {"corner_u", r.corner_u},
                {"ratio", ratio}},
               dir / "summary.json");
    rec.final_score = ratio;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

void log_record(const RunRecord& r) {
  std::cerr << "[" << r.preset << "] " << r.run << " seed " << r.seed << ": "
            << (r.ok ? "score " + format_double(r.final_score) : "FAILED " + r.error) << " ("
            << r.wall_seconds << " s)\n";
}

}  // namespace

void write_run_summary(const fs::path& path, const std::string& preset, const RunSpec& spec,
                       std::uint64_t seed, std::uint64_t train_seed, const TrainResult& result,
                       const Environment& env) {
  write_json(summary_json(preset, spec, seed, train_seed, result, env), path);
}

RunRecord execute_run(const std::string& preset, const RunSpec& spec, std::size_t run_index,
                      std::uint64_t seed, const fs::path& out_dir) {
  return run_once(preset, spec, run_index, seed, out_dir).record;
}

std::vector<RunRecord> run_preset(const std::string& name, const fs::path& out_dir,
                                  const PresetOptions& opts) {
  const ExperimentPreset p = make_preset(name, opts);
  fs::create_directories(out_dir);
  std::vector<RunRecord> records;
  switch (p.kind) {
    case PresetKind::training:
    case PresetKind::uncertainty_ordering:
      for (std::size_t i = 0; i < p.runs.size(); ++i) {
        for (std::uint64_t seed : p.seeds) {
          RunOutcome o = run_once(p.name, p.runs[i], i, seed, out_dir);
          if (o.record.ok && p.kind == PresetKind::uncertainty_ordering) {
            SeededRng rng = SeededRng(seed).derive(0x0da7a);
            const auto ord = measure_uncertainty_ordering(*o.trained, *o.dataset, 1000, rng);
            write_json(ordering_json(ord), o.record.metrics_csv.parent_path() / "ordering.json");
          }
          if (opts.verbose) log_record(o.record);
          records.push_back(std::move(o.record));
        }
      }
      if (p.kind == PresetKind::training) write_score_matrices(p, records, out_dir);
      break;
    case PresetKind::uq_demo:
      for (std::uint64_t seed : p.seeds) {
        records.push_back(uq_record(seed, out_dir));
        if (opts.verbose) log_record(records.back());
      }
      break;
    case PresetKind::theory:
      for (std::uint64_t seed : p.seeds) {
        records.push_back(theory_record(p.name, seed, out_dir));
        if (opts.verbose) log_record(records.back());
      }
      break;
  }
  write_records_csv(records, out_dir / "records.csv");
  return records;
}

void write_records_csv(const std::vector<RunRecord>& records, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "preset,run,task,algorithm,seed,final_score,metrics_csv,config_hash,wall_seconds,ok,error\n";
  for (const auto& r : records) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.preset << ',' << r.run << ',' << r.task << ',' << r.algorithm << ',' << r.seed << ','
        << format_double(r.final_score) << ',' << r.metrics_csv.string() << ',' << r.config_hash << ','
        << r.wall_seconds << ',' << (r.ok ? "true" : "false") << ',' << err << '\n';
  }
}

// ---------------------------------------------------------------- uq demo

UqDemoResult uq_demo(const UqDemoOptions& opts, SeededRng& rng) {
  if (opts.n_points < 2) throw std::invalid_argument("uq_demo: need at least two points");
  if (opts.ensemble_size < 2) throw std::invalid_argument("uq_demo: need at least two members");
  if (opts.grid_n < 2) throw std::invalid_argument("uq_demo: grid_n must be >= 2");
  const auto n = static_cast<Eigen::Index>(opts.n_points);

  UqDemoResult out;
  out.train_x.resize(2, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out.train_x(0, j) = rng.normal();
    out.train_x(1, j) = rng.normal();
  }
  SeededRng target_rng = rng.derive(1);
  const std::vector<std::size_t> target_sizes{2, 32, 32, 1};
  const MlpParams target = make_mlp(target_sizes, target_rng);
  out.train_y = forward(target, out.train_x).row(0).transpose();

  std::vector<std::size_t> sizes{2};
  sizes.insert(sizes.end(), opts.hidden.begin(), opts.hidden.end());
  sizes.push_back(1);
  std::vector<MlpParams> members;
  for (std::size_t k = 0; k < opts.ensemble_size; ++k) {
    SeededRng member_rng = rng.derive(100 + (opts.identical_init ? 0 : k));
    MlpParams net = make_mlp(sizes, member_rng);
    Adam opt(net, opts.lr);
    for (std::size_t e = 0; e < opts.epochs; ++e) {
      ForwardCache cache;
      const Mat pred = forward(net, out.train_x, &cache);
      const Mat upstream = (2.0 / static_cast<double>(n)) * (pred - out.train_y.transpose());
      MlpParams grad = net.zeros_like();
      backward(net, cache, upstream, grad);
      opt.step(net, grad);
    }
    members.push_back(std::move(net));
  }

  auto uncertainty = [&](const Mat& x) {
    Mat preds(static_cast<Eigen::Index>(members.size()), x.cols());
    for (std::size_t k = 0; k < members.size(); ++k) {
      preds.row(static_cast<Eigen::Index>(k)) = forward(members[k], x).row(0);
    }
    return ensemble_std(preds);
  };

  out.train_u = uncertainty(out.train_x).transpose();
  out.median_in = quantile(std::vector<double>(out.train_u.data(), out.train_u.data() + n), 0.5);
  const Vec centered_var = (out.train_x.colwise() - out.train_x.rowwise().mean()).rowwise().squaredNorm() /
                           static_cast<double>(n);
  out.sigma = std::sqrt(centered_var.mean());

  const auto g = static_cast<Eigen::Index>(opts.grid_n);
  Mat grid_x(2, g * g);
  for (Eigen::Index i = 0; i < g; ++i) {
    for (Eigen::Index j = 0; j < g; ++j) {
      const double step = 2.0 * opts.extent / static_cast<double>(g - 1);
      grid_x(0, i * g + j) = -opts.extent + step * static_cast<double>(i);
      grid_x(1, i * g + j) = -opts.extent + step * static_cast<double>(j);
    }
  }
  const Eigen::RowVectorXd grid_u = uncertainty(grid_x);
  out.grid.resize(g * g, 3);
  out.grid.col(0) = grid_x.row(0).transpose();
  out.grid.col(1) = grid_x.row(1).transpose();
  out.grid.col(2) = grid_u.transpose();
  out.corner_u = grid_u[g * g - 1];

  double far_sum = 0.0;
  for (Eigen::Index c = 0; c < g * g; ++c) {
    const double nearest = (out.train_x.colwise() - grid_x.col(c)).colwise().norm().minCoeff();
    if (nearest > 2.0 * out.sigma) {
      far_sum += grid_u[c];
      ++out.far_points;
    }
  }
  out.far_mean = out.far_points ? far_sum / static_cast<double>(out.far_points) : 0.0;
  return out;
}

void write_uq_grid_csv(const UqDemoResult& result, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x1,x2,u\n";
  for (Eigen::Index r = 0; r < result.grid.rows(); ++r) {
    out << format_double(result.grid(r, 0)) << ',' << format_double(result.grid(r, 1)) << ','
        << format_double(result.grid(r, 2)) << '\n';
  }
}

// ------------------------------------------------------------ theory track

RidgeEquivalenceResult theory_ridge_equivalence(std::size_t instances, SeededRng& rng) {
  RidgeEquivalenceResult out;
  for (std::size_t i = 0; i < instances; ++i) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    const std::size_t m = 1 + rng.below(50);
    const std::size_t steps = 1 + rng.below(3);
    const double lambda = std::exp(rng.uniform(std::log(0.01), std::log(10.0)));
    std::vector<LsviStepData> data(steps);
    for (auto& step : data) {
      for (std::size_t j = 0; j < m; ++j) {
        Vec phi(d);
        for (Eigen::Index c = 0; c < d; ++c) phi[c] = rng.normal();
        step.phi.push_back(phi);
        step.reward.push_back(rng.uniform());
        step.next_value.push_back(rng.uniform(0.0, 5.0));
      }
    }
    const LsviSolution ridge = lsvi_solve(data, lambda, d);
    const LsviSolution ood = lsvi_solve_ood(data, {OodAugmentation::ridge_anchors(d, lambda)}, d);
    for (std::size_t t = 0; t < steps; ++t) {
      out.max_abs_diff = std::max(out.max_abs_diff, (ridge.weights[t] - ood.weights[t]).cwiseAbs().maxCoeff());
    }
    ++out.instances;
  }
  return out;
}

CoverageSweepResult theory_xi_coverage(const CoverageSweepOptions& opts, std::uint64_t seed) {
  CoverageSweepResult out;
  out.calibrated_beta = calibrate_beta(opts.d, opts.horizon, opts.xi, opts.calibration_c);
  for (double f : opts.sweep_factors) out.betas.push_back(f * out.calibrated_beta);
  out.coverage.assign(out.betas.size(), 0.0);
  const SeededRng root(seed);
  for (std::size_t i = 0; i < opts.seeds; ++i) {
    SeededRng rng = root.derive(i);
    const LinearMdpSpec spec = make_linear_mdp(opts.d, opts.n_states, opts.n_actions, opts.horizon, rng);
    const EpisodicDataset data = collect_episodes(spec, opts.episodes, uniform_behavior(opts.n_actions), rng);
    auto coverage_at = [&](double beta) {
      CoverageOptions c;
      c.penalty = {beta, opts.lambda};
      c.mode = OodTargetMode::true_bellman;
      c.n_probes = opts.n_probes;
      SeededRng probe_rng = rng.derive(7);  // identical probes for every beta
      return xi_coverage_check(spec, data, c, probe_rng).coverage;
    };
    double previous = -1.0;
    for (std::size_t b = 0; b < out.betas.size(); ++b) {
      const double cov = coverage_at(out.betas[b]);
      if (cov < previous) out.monotone = false;
      previous = cov;
      out.coverage[b] += cov / static_cast<double>(opts.seeds);
    }
    out.per_seed.push_back(coverage_at(out.calibrated_beta));
  }
  double total = 0.0;
  for (double c : out.per_seed) total += c;
  out.calibrated_coverage = out.per_seed.empty() ? 0.0 : total / static_cast<double>(out.per_seed.size());
  for (std::size_t b = 1; b < out.coverage.size(); ++b) {
    if (out.coverage[b] < out.coverage[b - 1]) out.monotone = false;
  }
  return out;
}

std::vector<CorollaryRun> theory_corollary_bound(const CorollaryOptions& opts, std::uint64_t seed) {
  Gridworld::Options g;
  g.slip = opts.slip;
  const Gridworld grid(g);
  const LinearMdpSpec spec = gridworld_as_linear_mdp(grid, opts.horizon);
  const FiniteHorizonSolution optimal = optimal_values(spec);
  const double beta = calibrate_beta(spec.d, spec.horizon, opts.xi, opts.calibration_c);
  const SeededRng root(seed);
  std::vector<CorollaryRun> runs;
  for (std::size_t i = 0; i < opts.seeds; ++i) {
    SeededRng rng = root.derive(i);
    const EpisodicDataset data = collect_episodes(
        spec, opts.episodes, epsilon_optimal_behavior(optimal, spec.n_actions, opts.epsilon), rng);
    const PeviResult res = pevi(spec, data, {beta, opts.lambda});
    CorollaryRun r;
    r.seed = i;
    r.quantifier_coverage = pevi_quantifier_coverage(spec, res);
    const SuboptimalityCheck check = suboptimality_bound_check(spec, res);
    r.gap = check.gap;
    r.bound = check.bound;
    r.qualifies = r.quantifier_coverage == 1.0;
    r.holds = r.gap <= r.bound + 1e-12;
    runs.push_back(r);
  }
  return runs;
}

// ------------------------------------------------------ uncertainty ordering

bool UncertaintyOrdering::holds() const {
  const bool chain = offline < noise_small && noise_small < noise_large;
  int above = 0;
  for (double v : {offline, noise_small, noise_large}) above += v > random ? 1 : 0;
  return chain && above <= 1;
}

UncertaintyOrdering measure_uncertainty_ordering(const TrainResult& trained,
                                                 const OfflineDataset& dataset, std::size_t n_states,
                                                 SeededRng& rng) {
  if (trained.policy.discrete()) {
    throw std::invalid_argument("uncertainty ordering needs a continuous action space");
  }
  const auto sdim = static_cast<Eigen::Index>(dataset.state_dim);
  const auto adim = static_cast<Eigen::Index>(dataset.action_dim);
  const auto n = static_cast<Eigen::Index>(n_states);
  Mat s(sdim, n), a(adim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Transition& t = dataset.transitions[rng.below(dataset.size())];
    s.col(j) = t.state;
    a.col(j) = t.action;
  }
  // Actions live in [-1, 1]^m, so the per-dimension scale is 1.
  const double action_scale = 1.0;
  auto perturbed = [&](double width) {
    Mat out = a;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < adim; ++i) {
        out(i, j) = std::clamp(a(i, j) + width * action_scale * rng.normal(), -1.0, 1.0);
      }
    }
    return out;
  };
  Mat random(adim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < adim; ++i) random(i, j) = rng.uniform(-1.0, 1.0);
  }
  UncertaintyOrdering o;
  o.offline = mean_uncertainty(trained.critic, s, a);
  o.noise_small = mean_uncertainty(trained.critic, s, perturbed(0.1));
  o.noise_large = mean_uncertainty(trained.critic, s, perturbed(0.5));
  o.random = mean_uncertainty(trained.critic, s, random);
  o.policy = mean_uncertainty(trained.critic, s, trained.policy.sample(s, rng));
  return o;
}

// ------------------------------------------------------------------ report

ReportOutputs write_report(const fs::path& runs_dir, double eta, const fs::path& out_dir,
                           std::uint64_t seed, std::size_t n_resamples) {
  if (!fs::is_directory(runs_dir)) throw std::runtime_error("not a directory: " + runs_dir.string());
  // algorithm -> task -> seed -> score
  std::map<std::string, std::map<std::string, std::map<std::uint64_t, double>>> runs;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(runs_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "summary.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    const json j = json::parse(in);
    if (j.value("kind", "") != "training") continue;
    runs[j.at("algorithm").get<std::string>()][j.at("task").get<std::string>()]
        [j.at("seed").get<std::uint64_t>()] = j.at("final_score").get<double>();
  }
  if (runs.empty()) throw std::runtime_error("no training summaries under " + runs_dir.string());

  ReportOutputs out;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [algo, tasks] : runs) {
    ScoreMatrix m;
    std::set<std::uint64_t> seeds;
    for (const auto& [task, by_seed] : tasks) {
      for (const auto& [s, v] : by_seed) seeds.insert(s);
    }
    m.scores.resize(static_cast<Eigen::Index>(tasks.size()), static_cast<Eigen::Index>(seeds.size()));
    Eigen::Index row = 0;
    for (const auto& [task, by_seed] : tasks) {
      if (by_seed.size() != seeds.size()) {
        throw std::runtime_error("report: task " + task + " of " + algo + " is missing seeds");
      }
      m.tasks.push_back(task);
      Eigen::Index col = 0;
      for (const auto& [s, v] : by_seed) m.scores(row, col++) = v;
      ++row;
    }
    m.validate();
    lo = std::min(lo, m.scores.minCoeff());
    hi = std::max(hi, m.scores.maxCoeff());
    out.algorithms.push_back(algo);
    out.matrices.push_back(std::move(m));
  }

  fs::create_directories(out_dir);
  std::ofstream agg(out_dir / "aggregates.csv");
  agg << "algorithm,metric,value,ci_low,ci_high\n";
  json ci = json::object();
  for (std::size_t i = 0; i < out.algorithms.size(); ++i) {
    const auto& m = out.matrices[i];
    write_score_matrix(m, out_dir / ("scores-" + out.algorithms[i] + ".csv"));
    for (Metric metric : all_metrics()) {
      if (metric == Metric::iqm && m.scores.size() < 4) continue;
      SeededRng rng = SeededRng(seed).derive(fnv1a64(out.algorithms[i] + "/" + to_string(metric)));
      const double value = aggregate(m, metric, eta);
      const Interval iv = stratified_bootstrap_ci(m, metric, rng, n_resamples, 0.95, eta);
      agg << out.algorithms[i] << ',' << to_string(metric) << ',' << format_double(value) << ','
          << format_double(iv.low) << ',' << format_double(iv.high) << '\n';
      ci[out.algorithms[i]][to_string(metric)] = {{"value", value}, {"low", iv.low}, {"high", iv.high}};
    }
  }
  write_json(ci, out_dir / "ci.json");

  std::vector<double> taus;
  const std::size_t n_tau = 101;
  for (std::size_t k = 0; k < n_tau; ++k) {
    taus.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n_tau - 1));
  }
  std::ofstream prof(out_dir / "profiles.csv");
  prof << "algorithm,tau,fraction\n";
  for (std::size_t i = 0; i < out.algorithms.size(); ++i) {
    const auto f = performance_profile(out.matrices[i], taus);
    for (std::size_t k = 0; k < taus.size(); ++k) {
      prof << out.algorithms[i] << ',' << format_double(taus[k]) << ',' << format_double(f[k]) << '\n';
    }
  }
  return out;
}

}  // namespace pbrl
