#include "cds/bench.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

namespace cds {

namespace fs = std::filesystem;

// ------------------------------------------------------------ Utilities --

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

static_assert(std::endian::native == std::endian::little, "sample files assume a little-endian host");

std::vector<double> row_major(const Mat& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
  return out;
}

std::string str_hash(const std::string& s) { return hex64(fnv1a(s.data(), s.size())); }

double num(const json& h, const char* key, double fallback) {
  auto it = h.find(key);
  if (it == h.end() || it->is_null()) return fallback;
  if (!it->is_number()) throw ConfigError(std::string("expected a number for ") + key);
  return it->get<double>();
}

std::size_t count(const json& h, const char* key, std::size_t fallback) {
  auto it = h.find(key);
  if (it == h.end() || it->is_null()) return fallback;
  if (!it->is_number_integer() || it->get<long long>() < 0)
    throw ConfigError(std::string("expected a non-negative integer for ") + key);
  return it->get<std::size_t>();
}

bool flag(const json& h, const char* key, bool fallback) {
  auto it = h.find(key);
  if (it == h.end() || it->is_null()) return fallback;
  if (!it->is_boolean()) throw ConfigError(std::string("expected a boolean for ") + key);
  return it->get<bool>();
}

std::string text(const json& h, const char* key, const std::string& fallback) {
  auto it = h.find(key);
  if (it == h.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw ConfigError(std::string("expected a string for ") + key);
  return it->get<std::string>();
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

bool is_particle_task(const Target& t) { return t.name().rfind("lj", 0) == 0; }

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

std::string sample_hash(const Mat& m) {
  const auto v = row_major(m);
  return hex64(fnv1a(v.data(), v.size() * sizeof(double)));
}

std::string save_samples(const Mat& m, const fs::path& stem) {
  fs::create_directories(stem.parent_path());
  const auto v = row_major(m);
  {
    std::ofstream f(stem.string() + ".f64", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + stem.string() + ".f64");
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  const std::string h = hex64(fnv1a(v.data(), v.size() * sizeof(double)));
  json side{{"rows", m.rows()}, {"cols", m.cols()}, {"dtype", "float64-le"}, {"order", "row-major"}, {"fnv1a64", h}};
  std::ofstream(stem.string() + ".json") << side.dump(2) << "\n";
  return h;
}

Mat load_samples(const fs::path& stem) {
  std::ifstream sf(stem.string() + ".json");
  if (!sf) throw std::runtime_error("missing sidecar " + stem.string() + ".json");
  const json side = json::parse(sf);
  const auto rows = side.at("rows").get<Eigen::Index>(), cols = side.at("cols").get<Eigen::Index>();
  std::vector<double> v(static_cast<std::size_t>(rows * cols));
  std::ifstream f(stem.string() + ".f64", std::ios::binary);
  if (!f) throw std::runtime_error("missing sample file " + stem.string() + ".f64");
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(v.size() * sizeof(double)))
    throw std::runtime_error("truncated sample file " + stem.string() + ".f64");
  if (hex64(fnv1a(v.data(), v.size() * sizeof(double))) != side.at("fnv1a64").get<std::string>())
    throw std::runtime_error("hash mismatch in " + stem.string() + ".f64");
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[k++];
  return m;
}

// --------------------------------------------------------------- Config --

json method_defaults(const std::string& method) {
  if (method == "CDS")
    return {{"t0", 0.01},          {"integration_steps", 100}, {"corrector_steps", 0},   {"replicas", 5},
            {"beta_min", 0.01},    {"sigma", nullptr},         {"transport", "SDE"},     {"kernel", "MALA"},
            {"leapfrog_steps", 5}, {"optimize_schedule", true}, {"pilot_fraction", 0.2}, {"anchor", "mean"},
            {"deterministic_init", false}, {"time_grid", "uniform"}, {"optimize_t0", false}, {"t0_burn_in", 0},
            {"t0_lr", 1e-3}};
  if (method == "NRPT")
    return {{"replicas", 5}, {"beta_min", 0.01}, {"kernel", "MALA"}, {"leapfrog_steps", 5},
            {"optimize_schedule", true}, {"pilot_fraction", 0.2}};
  if (method == "MALA") return {{"step_size", nullptr}};
  if (method == "HMC") return {{"step_size", nullptr}, {"leapfrog_steps", 5}};
  throw ConfigError("unknown method: " + method);
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"task",         "method",     "grid",         "budgets",   "replicates",
                                           "seed",         "n_samples",  "output_dir",   "base_step", "tau",
                                           "mode_steps",   "metrics",    "reference_file", "truth_seed", "threads",
                                           "save_samples", "bootstrap_iterations", "t0_values"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key: " + k);
  ExperimentConfig c;
  try {
    c.task = j.value("task", c.task);
    c.method = j.value("method", c.method);
    c.grid = j.value("grid", json::object());
    c.budgets = j.value("budgets", c.budgets);
    c.replicates = j.value("replicates", c.replicates);
    c.seed = j.value("seed", c.seed);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.output_dir = j.value("output_dir", env_or("CDS_OUTPUT_ROOT", c.output_dir));
    c.base_step = j.value("base_step", c.base_step);
    c.tau = j.value("tau", c.tau);
    c.mode_steps = j.value("mode_steps", c.mode_steps);
    c.metrics = j.value("metrics", c.metrics);
    c.reference_file = j.value("reference_file", c.reference_file);
    c.truth_seed = j.value("truth_seed", c.truth_seed);
    c.threads = j.value("threads", static_cast<std::size_t>(std::stoul(env_or("CDS_THREADS", "1"))));
    c.save_samples = j.value("save_samples", c.save_samples);
    c.bootstrap_iterations = j.value("bootstrap_iterations", c.bootstrap_iterations);
    c.t0_values = j.value("t0_values", c.t0_values);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot open config " + p.string());
  json j;
  try {
    j = json::parse(f, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  return {{"task", task},
          {"method", method},
          {"grid", grid},
          {"budgets", budgets},
          {"replicates", replicates},
          {"seed", seed},
          {"n_samples", n_samples},
          {"output_dir", output_dir},
          {"base_step", base_step},
          {"tau", tau},
          {"mode_steps", mode_steps},
          {"metrics", metrics},
          {"reference_file", reference_file},
          {"truth_seed", truth_seed},
          {"threads", threads},
          {"save_samples", save_samples},
          {"bootstrap_iterations", bootstrap_iterations},
          {"t0_values", t0_values}};
}

void ExperimentConfig::validate() const {
  try {
    make_task(task);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  method_defaults(method);
  if (budgets.empty()) throw ConfigError("budgets must not be empty");
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (budgets[i] == 0) throw ConfigError("budgets must be positive");
    if (i > 0 && budgets[i] <= budgets[i - 1]) throw ConfigError("budgets must be strictly increasing");
  }
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  if (n_samples < 2) throw ConfigError("n_samples must be >= 2");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!grid.is_object()) throw ConfigError("grid must be an object of value lists");
  static const std::set<std::string> metric_names{"w2", "mmd", "tv", "rel_mae"};
  for (const auto& m : metrics)
    if (!metric_names.count(m)) throw ConfigError("unknown metric: " + m);
  if (bootstrap_iterations < 1) throw ConfigError("bootstrap_iterations must be >= 1");
  for (const json& h : expand_grid()) {
    if (method == "CDS") {
      try {
        cds_config_from(h, resolved_base_step()).validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid CDS grid point: ") + e.what());
      }
    }
  }
}

double ExperimentConfig::resolved_base_step() const {
  if (base_step > 0.0) return base_step;
  return task.rfind("LJ", 0) == 0 ? 1e-4 : 0.1;
}

std::vector<json> ExperimentConfig::expand_grid() const {
  const json defaults = method_defaults(method);
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  for (const auto& [k, v] : grid.items()) {
    if (!defaults.contains(k)) throw ConfigError("unknown hyperparameter for " + method + ": " + k);
    std::vector<json> vals;
    if (v.is_array()) vals.assign(v.begin(), v.end());
    else vals.push_back(v);
    if (vals.empty()) throw ConfigError("empty value list for " + k);
    axes.emplace_back(k, std::move(vals));
  }
  std::vector<json> out{defaults};
  for (const auto& [k, vals] : axes) {
    std::vector<json> next;
    for (const json& base : out)
      for (const json& v : vals) {
        json p = base;
        p[k] = v;
        next.push_back(std::move(p));
      }
    out = std::move(next);
  }
  return out;
}

// ------------------------------------------------------------- Manifests --

json RunManifest::to_json() const {
  json m = json::object();
  for (const auto& [k, v] : metrics) m[k] = v;
  return {{"kind", kind},
          {"config_hash", config_hash},
          {"task", task},
          {"method", method},
          {"label", label},
          {"hyper", hyper},
          {"budget", budget},
          {"grid_index", grid_index},
          {"replicate", replicate},
          {"seed", seed},
          {"realized_evaluations", realized_evaluations},
          {"total_evaluations", total_evaluations},
          {"counter_evaluations", counter_evaluations},
          {"measurement_evaluations", measurement_evaluations},
          {"n_chains", n_chains},
          {"failed_chains", failed_chains},
          {"wall_time", wall_time},
          {"metrics", m},
          {"diagnostics", diagnostics},
          {"sample_file", sample_file},
          {"sample_hash", sample_hash}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest r;
  r.kind = j.value("kind", r.kind);
  r.config_hash = j.value("config_hash", "");
  r.task = j.at("task").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.label = j.value("label", r.method);
  r.hyper = j.value("hyper", json::object());
  r.budget = j.value("budget", std::uint64_t{0});
  r.grid_index = j.value("grid_index", std::size_t{0});
  r.replicate = j.value("replicate", std::size_t{0});
  r.seed = j.value("seed", std::uint64_t{0});
  r.realized_evaluations = j.value("realized_evaluations", std::uint64_t{0});
  r.total_evaluations = j.value("total_evaluations", std::uint64_t{0});
  r.counter_evaluations = j.value("counter_evaluations", std::uint64_t{0});
  r.measurement_evaluations = j.value("measurement_evaluations", std::uint64_t{0});
  r.n_chains = j.value("n_chains", std::size_t{0});
  r.failed_chains = j.value("failed_chains", std::size_t{0});
  r.wall_time = j.value("wall_time", 0.0);
  const json metrics = j.value("metrics", json::object());
  for (const auto& [k, v] : metrics.items())
    r.metrics[k] = v.is_number() ? v.get<double>() : std::nan("");
  r.diagnostics = j.value("diagnostics", json::object());
  r.sample_file = j.value("sample_file", "");
  r.sample_hash = j.value("sample_hash", "");
  return r;
}

void append_manifests(const fs::path& dir, const std::vector<RunManifest>& ms) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  fs::create_directories(dir);
  std::ofstream f(dir / "manifests.jsonl", std::ios::app);
  for (const RunManifest& m : ms) f << m.to_json().dump() << "\n";
}

std::vector<RunManifest> read_manifests(const fs::path& dir) {
  std::vector<RunManifest> out;
  std::ifstream f(dir / "manifests.jsonl");
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(RunManifest::from_json(json::parse(line)));
  return out;
}

// ---------------------------------------------------------------- Runs --

Vec default_initial_point(const Target& target) {
  if (!is_particle_task(target)) return Vec::Zero(static_cast<Eigen::Index>(target.dim()));
  // 3x3x3 lattice with spacing 1.1, filled in order
  const std::size_t n = target.dim() / 3;
  const std::size_t side = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(n))));
  Vec x(static_cast<Eigen::Index>(target.dim()));
  for (std::size_t i = 0; i < n; ++i) {
    x[static_cast<Eigen::Index>(3 * i)] = 1.1 * static_cast<double>(i % side);
    x[static_cast<Eigen::Index>(3 * i + 1)] = 1.1 * static_cast<double>((i / side) % side);
    x[static_cast<Eigen::Index>(3 * i + 2)] = 1.1 * static_cast<double>(i / (side * side));
  }
  return x;
}

std::optional<Mat> ground_truth(const ExperimentConfig& cfg, const Target& target) {
  const auto d = static_cast<Eigen::Index>(target.dim());
  const auto n = static_cast<Eigen::Index>(cfg.n_samples);
  Rng rng(cfg.truth_seed, 0);
  if (const auto* gm = dynamic_cast<const GaussianMixtureTarget*>(&target)) {
    Mat m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) m.row(i) = gm->sample(rng).transpose();
    return m;
  }
  if (const auto* g = dynamic_cast<const GaussianTarget*>(&target)) {
    Mat m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) m.row(i) = g->sample(rng).transpose();
    return m;
  }
  if (cfg.reference_file.empty()) return std::nullopt;
  fs::path stem = cfg.reference_file;
  if (stem.extension() == ".f64" || stem.extension() == ".json") stem.replace_extension();
  Mat m = load_samples(stem);
  if (m.cols() != d) throw ConfigError("reference file dimension does not match the task");
  return m;
}

LocalRun run_local_chains(const Target& target, const Vec& x_init, const KernelConfig& kernel, std::size_t steps,
                          std::size_t n_chains, std::uint64_t seed) {
  LocalRun r;
  r.samples.resize(static_cast<Eigen::Index>(n_chains), x_init.size());
  r.evaluations.assign(n_chains, 0);
  r.step_sizes.assign(n_chains, 0.0);
  r.failed.assign(n_chains, 0);
  const DensityFn density = target_density(target);
  for (std::size_t c = 0; c < n_chains; ++c) {
    ChainState s = ChainState::start(x_init, density, kernel.step_size, Rng(seed, c));
    std::uint64_t evals = 1;
    for (std::size_t k = 0; k < steps; ++k) evals += kernel_step(s, density, kernel).evaluations;
    r.evaluations[c] = evals;
    r.step_sizes[c] = s.step_size;
    r.failed[c] = !s.position.allFinite() || !std::isfinite(s.log_density);
    r.samples.row(static_cast<Eigen::Index>(c)) = s.position.transpose();
  }
  return r;
}

NrptRun run_nrpt_chains(const Target& target, const Vec& x_init, const NrptConfig& cfg, std::size_t sweeps,
                        std::size_t pilot, std::size_t n_chains, std::uint64_t seed) {
  std::vector<std::unique_ptr<ReplicaEnsemble>> ens;
  for (std::size_t c = 0; c < n_chains; ++c)
    ens.push_back(std::make_unique<ReplicaEnsemble>(target_density(target), std::nullopt, cfg, x_init, Rng(seed, c)));
  const std::size_t first = std::min(pilot, sweeps);
  for (auto& e : ens) e->run(first);
  if (pilot > 0 && pilot < sweeps) optimize_pooled_schedule(ens);
  for (auto& e : ens) e->run(sweeps - first);
  NrptRun r;
  r.samples.resize(static_cast<Eigen::Index>(n_chains), x_init.size());
  for (std::size_t c = 0; c < n_chains; ++c) {
    const std::size_t top = ens[c]->size() - 1;
    r.samples.row(static_cast<Eigen::Index>(c)) = ens[c]->position(top).transpose();
    r.evaluations.push_back(ens[c]->evaluations());
    r.diagnostics.push_back(ens[c]->diagnostics());
  }
  return r;
}

CdsConfig cds_config_from(const json& h, double base_step) {
  CdsConfig c;
  c.t0 = num(h, "t0", 0.01);
  c.integration_steps = count(h, "integration_steps", 100);
  c.corrector_steps = count(h, "corrector_steps", 0);
  c.sigma = num(h, "sigma", base_step);
  try {
    c.transport = transport_from_string(text(h, "transport", "SDE"));
    const KernelKind kind = kernel_kind_from_string(text(h, "kernel", "MALA"));
    const int lf = static_cast<int>(count(h, "leapfrog_steps", 5));
    c.stage1.kernel = kind == KernelKind::HMC ? KernelConfig::hmc(base_step, lf)
                      : kind == KernelKind::RWMH ? KernelConfig::rwmh(base_step)
                                                 : KernelConfig::mala(base_step);
    c.stage1.schedule = AnnealingSchedule::geometric(count(h, "replicas", 5), num(h, "beta_min", 0.01), true);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.corrector = KernelConfig::mala(base_step);
  c.schedule_pilot_fraction = flag(h, "optimize_schedule", true) ? num(h, "pilot_fraction", 0.2) : 0.0;
  const std::string anchor = text(h, "anchor", "mean");
  if (anchor != "mean" && anchor != "sample") throw ConfigError("anchor must be 'mean' or 'sample'");
  c.anchor = anchor == "mean" ? AnchorMode::ReferenceMean : AnchorMode::Sampled;
  c.deterministic_init = flag(h, "deterministic_init", false);
  const std::string grid = text(h, "time_grid", "uniform");
  if (grid != "uniform" && grid != "geometric") throw ConfigError("time_grid must be 'uniform' or 'geometric'");
  c.grid = grid == "uniform" ? TimeGrid::Uniform : TimeGrid::Geometric;
  c.optimize_t0 = flag(h, "optimize_t0", false);
  c.t0_burn_in = count(h, "t0_burn_in", 0);
  c.t0_learning_rate = num(h, "t0_lr", 1e-3);
  return c;
}

namespace {

struct Prepared {
  Vec mode;
  std::optional<Mat> truth;
  std::vector<double> truth_energy;
};

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p;
  auto target = make_task(cfg.task);
  const bool particles = is_particle_task(*target);
  const ModeSearch ms = find_mode(*target, default_initial_point(*target), cfg.mode_steps,
                                  particles ? 1e-3 : 0.1, particles ? 0.05 : std::numeric_limits<double>::infinity());
  p.mode = ms.mode;
  p.truth = ground_truth(cfg, *target);
  if (p.truth) p.truth_energy = energies(SampleSet(*p.truth), *target);
  return p;
}

void compute_metrics(const ExperimentConfig& cfg, const Target& target, const Prepared& prep, const Mat& samples,
                     RunManifest& m) {
  const SampleSet s = SampleSet::finite_rows(samples);
  if (!prep.truth) {
    std::cerr << "warning: no ground truth for " << cfg.task << "; metrics skipped\n";
    return;
  }
  if (s.size() < 2) return;
  const SampleSet truth(*prep.truth);
  std::uint64_t measure = 0;
  std::vector<double> e;
  auto energy = [&]() -> const std::vector<double>& {
    if (e.empty()) e = energies(s, target, &measure);
    return e;
  };
  for (const std::string& name : cfg.metrics) {
    if (name == "w2") m.metrics["w2"] = wasserstein2(s, truth, is_particle_task(target));
    else if (name == "mmd")
      m.metrics["mmd"] = mmd_squared(energy(), prep.truth_energy, median_bandwidth(energy(), prep.truth_energy));
    else if (name == "tv") {
      const auto [lo, hi] = std::minmax_element(prep.truth_energy.begin(), prep.truth_energy.end());
      m.metrics["tv"] = tv_histogram(energy(), prep.truth_energy, 100, std::make_pair(*lo, *hi));
    } else if (name == "rel_mae") {
      try {
        m.metrics["rel_mae"] = relative_mae(s, truth);
      } catch (const std::invalid_argument&) {
      }
    }
  }
  m.measurement_evaluations = measure;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

RunManifest run_job(const ExperimentConfig& cfg, const Prepared& prep, const json& hyper, std::size_t grid_index,
                    std::uint64_t budget, std::size_t replicate, bool& feasible) {
  feasible = true;
  auto target = make_task(cfg.task);
  const double h = cfg.resolved_base_step();
  RunManifest m;
  m.task = cfg.task;
  m.method = cfg.method;
  m.label = cfg.method;
  m.hyper = hyper;
  m.budget = budget;
  m.grid_index = grid_index;
  m.replicate = replicate;
  const json ident{{"task", cfg.task},   {"method", cfg.method},     {"hyper", hyper},          {"budget", budget},
                   {"seed", cfg.seed},   {"n_samples", cfg.n_samples}, {"base_step", h},       {"tau", cfg.tau},
                   {"mode_steps", cfg.mode_steps}, {"replicate", replicate}};
  const std::string dump = ident.dump();
  m.config_hash = str_hash(dump);
  m.seed = splitmix64(cfg.seed ^ fnv1a(dump.data(), dump.size()));
  m.n_chains = cfg.n_samples;

  const auto start = std::chrono::steady_clock::now();
  Mat samples;
  std::vector<std::uint64_t> ledger;
  if (cfg.method == "MALA" || cfg.method == "HMC") {
    const double step = num(hyper, "step_size", h);
    const KernelConfig k = cfg.method == "MALA" ? KernelConfig::mala(step)
                                                : KernelConfig::hmc(step, static_cast<int>(count(hyper, "leapfrog_steps", 5)));
    if (budget < 1 + k.cost_per_step()) {
      feasible = false;
      return m;
    }
    const std::size_t steps = (budget - 1) / k.cost_per_step();
    LocalRun r = run_local_chains(*target, prep.mode, k, steps, cfg.n_samples, m.seed);
    samples = std::move(r.samples);
    ledger = std::move(r.evaluations);
    for (char f : r.failed) m.failed_chains += f ? 1 : 0;
    m.diagnostics = {{"steps", steps}, {"mean_step_size", mean_of(r.step_sizes)}};
  } else if (cfg.method == "NRPT") {
    NrptConfig nc;
    const std::size_t reps = count(hyper, "replicas", 5);
    nc.schedule = AnnealingSchedule::geometric(reps, num(hyper, "beta_min", 0.01), false);
    const KernelKind kind = kernel_kind_from_string(text(hyper, "kernel", "MALA"));
    const int lf = static_cast<int>(count(hyper, "leapfrog_steps", 5));
    nc.kernel = kind == KernelKind::HMC ? KernelConfig::hmc(h, lf) : KernelConfig::mala(h);
    for (double b : nc.schedule.betas) nc.step_sizes.push_back(h / std::sqrt(b));
    const std::size_t per_sweep = reps * nc.kernel.cost_per_step();
    if (budget < 1 + per_sweep) {
      feasible = false;
      return m;
    }
    const std::size_t sweeps = (budget - 1) / per_sweep;
    const std::size_t pilot = flag(hyper, "optimize_schedule", true) && reps >= 3
                                  ? static_cast<std::size_t>(num(hyper, "pilot_fraction", 0.2) * static_cast<double>(sweeps))
                                  : 0;
    NrptRun r = run_nrpt_chains(*target, prep.mode, nc, sweeps, pilot, cfg.n_samples, m.seed);
    samples = std::move(r.samples);
    ledger = std::move(r.evaluations);
    std::uint64_t rt = 0;
    std::vector<double> gcb;
    for (const auto& d : r.diagnostics) {
      rt += d.round_trips;
      if (std::isfinite(d.gcb_estimate)) gcb.push_back(d.gcb_estimate);
    }
    m.diagnostics = {{"sweeps", sweeps}, {"round_trips", rt}, {"gcb", mean_of(gcb)},
                     {"betas", r.diagnostics.front().betas}, {"step_sizes", r.diagnostics.front().step_sizes}};
  } else {
    const CdsConfig base = cds_config_from(hyper, h);
    if (base.transport != Transport::SDE) m.label = std::string("CDS-") + to_string(base.transport);
    const auto fitted = fit_to_budget(base, budget);
    if (!fitted) {
      feasible = false;
      return m;
    }
    const ReferenceDistribution ref{prep.mode, cfg.tau};
    CdsRun r = run_cds(*target, ref, *fitted, cfg.n_samples, m.seed);
    samples = std::move(r.samples);
    for (const ChainLedger& l : r.ledgers) ledger.push_back(l.total());
    for (bool f : r.failed) m.failed_chains += f ? 1 : 0;
    std::uint64_t s1 = 0, s2 = 0;
    for (const ChainLedger& l : r.ledgers) {
      s1 += l.stage1;
      s2 += l.stage2;
    }
    m.diagnostics = {{"pt_steps", fitted->pt_steps},
                     {"integration_steps", fitted->times().size() - 1},
                     {"round_trips", r.round_trips()},
                     {"gcb", r.mean_gcb()},
                     {"t0", r.t0},
                     {"betas", r.schedule.betas},
                     {"step_sizes", r.stage1_diagnostics.front().step_sizes},
                     {"stage1_evaluations", s1},
                     {"stage2_evaluations", s2}};
  }
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.counter_evaluations = target->evaluations();
  for (std::uint64_t l : ledger) {
    m.total_evaluations += l;
    m.realized_evaluations = std::max(m.realized_evaluations, l);
  }
  compute_metrics(cfg, *target, prep, samples, m);
  if (cfg.save_samples) {
    const std::string stem = cfg.task + "_" + m.label + "_b" + std::to_string(budget) + "_g" +
                             std::to_string(grid_index) + "_r" + std::to_string(replicate);
    m.sample_hash = save_samples(samples, fs::path(cfg.output_dir) / "samples" / stem);
    m.sample_file = stem;
  } else {
    m.sample_hash = sample_hash(samples);
  }
  return m;
}

}  // namespace

std::vector<RunManifest> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Prepared prep = prepare(cfg);
  const std::vector<json> points = cfg.expand_grid();
  struct Job {
    std::uint64_t budget;
    std::size_t grid;
    std::size_t rep;
  };
  std::vector<Job> jobs;
  for (std::uint64_t b : cfg.budgets)
    for (std::size_t g = 0; g < points.size(); ++g)
      for (std::size_t r = 0; r < cfg.replicates; ++r) jobs.push_back({b, g, r});
  std::vector<std::optional<RunManifest>> results(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
    bool feasible = true;
    RunManifest m = run_job(cfg, prep, points[jobs[i].grid], jobs[i].grid, jobs[i].budget, jobs[i].rep, feasible);
    if (feasible) results[i] = std::move(m);
  });
  std::vector<RunManifest> out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (results[i]) out.push_back(std::move(*results[i]));
    else if (jobs[i].rep == 0)
      std::cerr << "warning: grid point " << jobs[i].grid << " does not fit budget " << jobs[i].budget << "; skipped\n";
  }
  append_manifests(cfg.output_dir, out);
  return out;
}

// --------------------------------------------------------------- t0 sweep --

std::vector<T0Point> sweep_t0(const ExperimentConfig& cfg, const std::vector<double>& t0_values) {
  if (t0_values.size() < 2) throw ConfigError("t0 sweep needs at least two values");
  if (cfg.method != "CDS") throw ConfigError("t0 sweep runs the CDS method");
  const Prepared prep = prepare(cfg);
  const double h = cfg.resolved_base_step();
  const json hyper = cfg.expand_grid().front();
  const std::uint64_t budget = cfg.budgets.back();
  const ReferenceDistribution ref{prep.mode, cfg.tau};
  std::vector<T0Point> out;
  for (std::size_t i = 0; i < t0_values.size(); ++i) {
    auto target = make_task(cfg.task);
    T0Point p;
    p.t0 = t0_values[i];
    json ph = hyper;
    ph["t0"] = p.t0;
    ph["replicas"] = 10;
    ph["pilot_fraction"] = 0.5;
    ph["optimize_schedule"] = true;
    ph["transport"] = "INVERSE_MAP";
    const std::uint64_t seed = splitmix64(cfg.seed + 1000003ULL * i);
    const auto pilot_cfg = fit_to_budget(cds_config_from(ph, h), budget);
    if (!pilot_cfg) throw ConfigError("t0 sweep budget too small");
    const CdsRun pilot = run_cds(*target, ref, *pilot_cfg, cfg.n_samples, seed, cfg.threads);
    p.pilot_gcb = pilot.mean_gcb();
    p.replicas = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(std::isfinite(p.pilot_gcb) ? p.pilot_gcb : 2.0)));

    json mh = hyper;
    mh["t0"] = p.t0;
    mh["replicas"] = p.replicas;
    mh["optimize_schedule"] = true;
    mh["transport"] = "SDE";
    const auto main_cfg = fit_to_budget(cds_config_from(mh, h), budget);
    if (!main_cfg) throw ConfigError("t0 sweep budget too small");
    const CdsRun run = run_cds(*target, ref, *main_cfg, cfg.n_samples, seed ^ 0x9e3779b97f4a7c15ULL, cfg.threads);
    p.round_trips = run.round_trips();
    p.gcb = run.mean_gcb();
    const SampleSet s = SampleSet::finite_rows(run.samples);
    p.w2 = prep.truth && s.size() > 0 ? wasserstein2(s, SampleSet(*prep.truth), is_particle_task(*target))
                                      : std::nan("");
    out.push_back(p);
  }
  return out;
}

std::vector<RunManifest> t0_manifests(const ExperimentConfig& cfg, const std::vector<T0Point>& pts) {
  std::vector<RunManifest> out;
  for (const T0Point& p : pts) {
    RunManifest m;
    m.kind = "t0_sweep";
    m.task = cfg.task;
    m.method = "CDS";
    m.label = "CDS";
    m.budget = cfg.budgets.back();
    m.seed = cfg.seed;
    m.n_chains = cfg.n_samples;
    m.hyper = {{"t0", p.t0}, {"replicas", p.replicas}};
    m.config_hash = str_hash(json{{"config", cfg.to_json()}, {"t0", p.t0}}.dump());
    m.metrics["w2"] = p.w2;
    m.diagnostics = {{"t0", p.t0},
                     {"replicas", p.replicas},
                     {"pilot_gcb", p.pilot_gcb},
                     {"gcb", p.gcb},
                     {"round_trips", p.round_trips}};
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------- Figures --

std::vector<fs::path> emit_figures(const std::vector<RunManifest>& manifests, const fs::path& sample_dir,
                                   const fs::path& out_dir, std::size_t bootstrap_iterations) {
  std::vector<fs::path> written;
  if (manifests.empty()) return written;
  fs::create_directories(out_dir);

  // task -> label -> metric -> (grid, budget) -> replicate values, plus cost
  struct Cell {
    std::vector<double> values;
    std::vector<double> costs;
  };
  std::map<std::string, std::map<std::string, std::map<std::string, std::map<std::pair<std::size_t, std::uint64_t>, Cell>>>> runs;
  std::map<std::string, std::vector<const RunManifest*>> sweeps;
  std::set<std::string> warned;
  for (const RunManifest& m : manifests) {
    if (m.kind == "t0_sweep") {
      sweeps[m.task].push_back(&m);
      continue;
    }
    for (const char* metric : {"w2", "mmd", "tv", "rel_mae"}) {
      auto it = m.metrics.find(metric);
      if (it == m.metrics.end() || !std::isfinite(it->second)) {
        const std::string key = m.task + "/" + m.label + "/" + metric;
        bool any = false;
        for (const RunManifest& o : manifests)
          if (o.task == m.task && o.label == m.label && o.metrics.count(metric)) any = true;
        if (any && warned.insert(key).second)
          std::cerr << "warning: metric " << metric << " missing in some " << key << " manifests\n";
        continue;
      }
      Cell& c = runs[m.task][m.label][metric][{m.grid_index, m.budget}];
      c.values.push_back(it->second);
      c.costs.push_back(static_cast<double>(m.budget));
    }
  }

  std::ofstream hvr_file;
  for (const auto& [task, labels] : runs) {
    const fs::path pareto_path = out_dir / ("pareto_" + task + ".csv");
    std::ofstream pf(pareto_path);
    pf << "task,method,metric,cost,median,p5,p95\n";
    std::map<std::string, std::map<std::string, ParetoRecord>> records;  // metric -> label -> record
    for (const auto& [label, metrics] : labels)
      for (const auto& [metric, cells] : metrics) {
        std::vector<ReplicateGroup> groups;
        for (const auto& [key, cell] : cells) {
          double cost = 0.0;
          for (double c : cell.costs) cost += c;
          groups.push_back({cost / static_cast<double>(cell.costs.size()), cell.values, {}});
        }
        const std::string seed_key = task + label + metric;
        ParetoRecord rec = bootstrap_front(groups, bootstrap_iterations, fnv1a(seed_key.data(), seed_key.size()));
        for (std::size_t i = 0; i < rec.grid.size(); ++i)
          pf << task << "," << label << "," << metric << "," << fmt(rec.grid[i]) << "," << fmt(rec.median[i]) << ","
             << fmt(rec.p5[i]) << "," << fmt(rec.p95[i]) << "\n";
        records[metric][label] = std::move(rec);
      }
    written.push_back(pareto_path);

    // transport comparison
    std::size_t cds_labels = 0;
    for (const auto& [label, metrics] : labels) cds_labels += label.rfind("CDS", 0) == 0 ? 1 : 0;
    if (cds_labels >= 2 && records.count("w2")) {
      const fs::path tp = out_dir / ("transport_" + task + ".csv");
      std::ofstream tf(tp);
      tf << "task,method,metric,cost,median,p5,p95\n";
      for (const auto& [label, rec] : records["w2"]) {
        if (label.rfind("CDS", 0) != 0) continue;
        for (std::size_t i = 0; i < rec.grid.size(); ++i)
          tf << task << "," << label << ",w2," << fmt(rec.grid[i]) << "," << fmt(rec.median[i]) << ","
             << fmt(rec.p5[i]) << "," << fmt(rec.p95[i]) << "\n";
      }
      written.push_back(tp);
    }

    // hypervolume ratios from the median fronts
    if (!hvr_file.is_open()) {
      hvr_file.open(out_dir / "hvr_summary.csv");
      hvr_file << "task,metric,method,hvr\n";
      written.push_back(out_dir / "hvr_summary.csv");
    }
    std::map<std::string, std::vector<double>> per_label;
    for (const auto& [metric, recs] : records) {
      std::vector<std::string> names;
      std::vector<std::vector<ParetoPoint>> fronts;
      for (const auto& [label, rec] : recs) {
        std::vector<ParetoPoint> pts;
        for (std::size_t i = 0; i < rec.grid.size(); ++i)
          if (std::isfinite(rec.median[i])) pts.push_back({rec.grid[i], rec.median[i], label});
        if (pts.empty()) continue;
        names.push_back(label);
        fronts.push_back(std::move(pts));
      }
      if (fronts.empty()) continue;
      const std::vector<double> hv = hypervolume_ratio(fronts);
      for (std::size_t i = 0; i < names.size(); ++i) {
        hvr_file << task << "," << metric << "," << names[i] << "," << fmt(hv[i]) << "\n";
        per_label[names[i]].push_back(hv[i]);
      }
    }
    for (const auto& [label, v] : per_label) hvr_file << task << ",mean," << label << "," << fmt(mean_of(v)) << "\n";

    // scatter files for planar tasks: best configuration per label and budget
    std::map<std::pair<std::string, std::uint64_t>, std::pair<double, const RunManifest*>> best;
    for (const RunManifest& m : manifests) {
      if (m.kind != "run" || m.task != task || m.sample_file.empty()) continue;
      auto it = m.metrics.find("w2");
      if (it == m.metrics.end()) continue;
      double mean = 0.0;
      int n = 0;
      for (const RunManifest& o : manifests)
        if (o.kind == "run" && o.task == task && o.label == m.label && o.budget == m.budget &&
            o.grid_index == m.grid_index && o.metrics.count("w2")) {
          mean += o.metrics.at("w2");
          ++n;
        }
      mean /= n;
      auto key = std::make_pair(m.label, m.budget);
      auto cur = best.find(key);
      const bool better = cur == best.end() || mean < cur->second.first ||
                          (mean == cur->second.first && (m.grid_index < cur->second.second->grid_index ||
                                                         (m.grid_index == cur->second.second->grid_index &&
                                                          m.replicate < cur->second.second->replicate)));
      if (better) best[key] = {mean, &m};
    }
    for (const auto& [key, val] : best) {
      Mat s;
      try {
        s = load_samples(sample_dir / val.second->sample_file);
      } catch (const std::exception& e) {
        std::cerr << "warning: " << e.what() << "\n";
        continue;
      }
      if (s.cols() != 2) break;
      const fs::path sp = out_dir / ("samples_" + task + "_" + key.first + "_b" + std::to_string(key.second) + ".csv");
      std::ofstream sf(sp);
      sf << "x,y\n";
      for (Eigen::Index i = 0; i < s.rows(); ++i) sf << fmt(s(i, 0)) << "," << fmt(s(i, 1)) << "\n";
      written.push_back(sp);
    }
  }

  for (auto& [task, ms] : sweeps) {
    std::vector<const RunManifest*> sorted = ms;
    std::stable_sort(sorted.begin(), sorted.end(), [](const RunManifest* a, const RunManifest* b) {
      return a->diagnostics.value("t0", 0.0) > b->diagnostics.value("t0", 0.0);
    });
    const fs::path p = out_dir / ("t0_sweep_" + task + ".csv");
    std::ofstream f(p);
    f << "task,t0,replicas,pilot_gcb,gcb,round_trips,w2\n";
    for (const RunManifest* m : sorted) {
      const json& d = m->diagnostics;
      auto get = [&](const char* k) { return d.contains(k) && d[k].is_number() ? d[k].get<double>() : std::nan(""); };
      f << task << "," << fmt(get("t0")) << "," << fmt(get("replicas")) << "," << fmt(get("pilot_gcb")) << ","
        << fmt(get("gcb")) << "," << fmt(get("round_trips")) << ","
        << fmt(m->metrics.count("w2") ? m->metrics.at("w2") : std::nan("")) << "\n";
    }
    written.push_back(p);
  }
  return written;
}

}  // namespace cds
