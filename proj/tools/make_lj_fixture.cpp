// Long-run LJ-13 reference samples for the energy-histogram checks.
//
// Independent NRPT ensembles (flat reference) start from a located minimum;
// the beta = 1 replica is thinned after burn-in. Prints the TV distance
// between the energy histograms of the two halves of the ensembles as a
// convergence check.
#include <iostream>

#include <CLI11.hpp>

#include "cds/bench.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the LJ-13 long-run reference fixture"};
  std::string out = "tests/fixtures/lj13_reference";
  std::uint64_t seed = 2026;
  std::size_t ensembles = 20, sweeps = 60000, burn_in = 10000, thin = 200, replicas = 8;
  double beta_min = 0.3;
  app.add_option("--out", out, "output stem (.f64 and .json are appended)");
  app.add_option("--seed", seed);
  app.add_option("--ensembles", ensembles);
  app.add_option("--sweeps", sweeps);
  app.add_option("--burn-in", burn_in);
  app.add_option("--thin", thin);
  app.add_option("--replicas", replicas);
  app.add_option("--beta-min", beta_min);
  CLI11_PARSE(app, argc, argv);

  auto target = cds::make_task("LJ-13");
  const cds::ModeSearch ms = cds::find_mode(*target, cds::default_initial_point(*target), 5000, 1e-3, 0.05);

  cds::NrptConfig cfg;
  cfg.schedule = cds::AnnealingSchedule::geometric(replicas, beta_min, false);
  cfg.kernel = cds::KernelConfig::mala(1e-3);
  for (double b : cfg.schedule.betas) cfg.step_sizes.push_back(1e-2 / std::sqrt(b));

  std::vector<cds::Vec> rows;
  std::vector<std::size_t> owner;
  std::uint64_t evals = 0, round_trips = 0;
  for (std::size_t e = 0; e < ensembles; ++e) {
    std::vector<std::unique_ptr<cds::ReplicaEnsemble>> one;
    one.push_back(std::make_unique<cds::ReplicaEnsemble>(cds::target_density(*target), std::nullopt, cfg, ms.mode,
                                                         cds::Rng(seed, e)));
    // one schedule update from the first half of burn-in
    one.front()->run(burn_in / 2);
    cds::optimize_pooled_schedule(one);
    cds::ReplicaEnsemble& r = *one.front();
    r.run(burn_in - burn_in / 2);
    for (std::size_t s = burn_in; s < sweeps; s += thin) {
      r.run(thin);
      rows.push_back(r.position(r.size() - 1));
      owner.push_back(e);
    }
    evals += r.evaluations();
    round_trips += r.round_trips();
  }

  cds::Mat m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  std::vector<double> ea, eb;
  for (std::size_t i = 0; i < rows.size(); ++i)
    (owner[i] < ensembles / 2 ? ea : eb).push_back(-target->log_density_uncounted(rows[i]));

  const std::string hash = cds::save_samples(m, out);
  std::cout << "samples " << m.rows() << " evaluations " << evals << " round_trips " << round_trips << "\n"
            << "half-split energy TV " << cds::tv_histogram(ea, eb, 100) << "\n"
            << "hash " << hash << "\n";
  return 0;
}
