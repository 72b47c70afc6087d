#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oem/errors.hpp"
#include "oem/experiment.hpp"
#include "oem/oracle_battery.hpp"
#include "oem/output.hpp"

namespace {

using json = nlohmann::json;

std::vector<double> parse_grid(const std::string& spec) {
  // a:b:n
  const auto first = spec.find(':');
  const auto second = spec.find(':', first == std::string::npos ? first : first + 1);
  if (first == std::string::npos || second == std::string::npos) {
    throw oem::ConfigurationError("grid '" + spec + "' is not of the form a:b:n");
  }
  try {
    std::size_t used = 0;
    const double a = std::stod(spec.substr(0, first));
    const double b = std::stod(spec.substr(first + 1, second - first - 1));
    const std::string count = spec.substr(second + 1);
    const long n = std::stol(count, &used);
    if (used != count.size() || n < 1) throw std::invalid_argument("count");
    return oem::linspace(a, b, static_cast<std::size_t>(n));
  } catch (const std::logic_error&) {
    throw oem::ConfigurationError("grid '" + spec + "' is not of the form a:b:n");
  }
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::size_t> reps, std::optional<std::uint64_t> seed) {
  oem::ExperimentConfig cfg = oem::load_config(config_path);
  if (reps) cfg.repetitions = *reps;
  if (seed) cfg.seed = *seed;
  oem::validate(cfg);
  const auto results = oem::run_experiment(cfg);
  oem::write_experiment(out_dir, cfg, results);
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (r.failed) {
      ++failed;
      std::cout << "repetition " << r.repetition << " failed: " << r.error << '\n';
      continue;
    }
    const auto s = oem::summarize(r.q_final);
    std::cout << "repetition " << r.repetition << ": qdiag " << oem::format_double(s.diag_mean)
              << " qneigh " << oem::format_double(s.neighbor_mean) << " qfar "
              << oem::format_double(s.far_mean) << " rdiag "
              << oem::format_double(r.r_final.diagonal().mean()) << " rmse "
              << oem::format_double(r.rmse) << '\n';
  }
  std::cout << "wrote " << results.size() << " repetition(s) to " << out_dir << '\n';
  // Failed repetitions are reported, not fatal, unless all of them failed.
  if (failed == results.size()) {
    print_error("all-repetitions-failed", "every repetition failed");
    return 1;
  }
  return 0;
}

int cmd_surface(const std::string& config_path, const std::string& qgrid,
                const std::string& rgrid, const std::string& out) {
  const oem::ExperimentConfig cfg = oem::load_config(config_path);
  const auto q = parse_grid(qgrid);
  const auto r = parse_grid(rgrid);
  const oem::SeededRng root(cfg.seed, 0);
  oem::SeededRng truth_rng = root.substream({1});
  const oem::Trajectory data = oem::generate_truth_and_obs(cfg, truth_rng);
  const oem::Matrix ll = oem::loglik_surface(q, r, data, cfg, root.substream({4}));
  const std::string csv = oem::surface_csv(q, r, ll);
  if (out.empty()) {
    std::cout << csv;
  } else {
    oem::write_text(out, csv);
  }
  return 0;
}

int cmd_oracle() {
  bool ok = true;
  for (const auto& check : oem::run_oracle_battery()) {
    std::cout << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.detail << '\n';
    ok = ok && check.passed;
  }
  if (!ok) print_error("oracle-failure", "at least one oracle check failed");
  return ok ? 0 : 1;
}

int cmd_reference(const std::string& config_path, const std::string& out) {
  const oem::ExperimentConfig cfg = oem::load_config(config_path);
  oem::SeededRng rng(cfg.seed, 5);
  const oem::ReferenceCovariance ref = oem::reference_covariance_two_scale(cfg, rng);
  json scores = json::array();
  for (const auto& s : ref.scores) {
    scores.push_back({{"multiple", s.multiple},
                      {"loglik", s.failed ? json() : json(s.loglik)},
                      {"rmse", s.failed ? json() : json(s.rmse)}});
  }
  json rows = json::array();
  for (Eigen::Index i = 0; i < ref.q.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < ref.q.cols(); ++j) row.push_back(ref.q(i, j));
    rows.push_back(std::move(row));
  }
  const json doc = {{"base_scale", ref.base_scale},
                    {"multiple", ref.multiple},
                    {"q", rows},
                    {"scores", scores}};
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    oem::write_text(out, doc.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online EM estimation of model and observation error covariances"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir = "oem_out";
  std::optional<std::size_t> reps;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run a twin experiment");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--reps", reps, "Override the number of repetitions");
  run->add_option("--seed", seed, "Override the base seed");

  std::string qgrid;
  std::string rgrid;
  std::string surface_out;
  auto* surface = app.add_subcommand("loglik-surface", "EnKF loglikelihood over a (sigma_q^2, sigma_r^2) grid");
  surface->add_option("--config", config, "Experiment config (JSON)")->required();
  surface->add_option("--qgrid", qgrid, "a:b:n grid of sigma_q^2")->required();
  surface->add_option("--rgrid", rgrid, "a:b:n grid of sigma_r^2")->required();
  surface->add_option("--out", surface_out, "CSV path (default stdout)");

  auto* oracle = app.add_subcommand("oracle-check", "Run the linear-Gaussian oracle battery");

  std::string ref_out;
  auto* reference = app.add_subcommand("reference-q", "Reference Q for the two-scale experiment");
  reference->add_option("--config", config, "Experiment config (JSON)")->required();
  reference->add_option("--out", ref_out, "JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*run) return cmd_run(config, out_dir, reps, seed);
    if (*surface) return cmd_surface(config, qgrid, rgrid, surface_out);
    if (*oracle) return cmd_oracle();
    if (*reference) return cmd_reference(config, ref_out);
  } catch (const oem::Error& e) {
    print_error(e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
