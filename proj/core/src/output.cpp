#include "oem/output.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "oem/errors.hpp"

namespace oem {

using json = nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json matrices_to_json(const std::map<std::size_t, Matrix>& ms) {
  json out = json::object();
  for (const auto& [k, m] : ms) out[std::to_string(k)] = matrix_to_json(m);
  return out;
}

std::string rep_stem(std::size_t rep) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "rep_%03zu", rep);
  return buf.data();
}

}  // namespace

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), res.ptr);
}

std::string cycle_csv(const std::vector<CycleRecord>& records) {
  std::string out = "k,gamma,qdiag_mean,qneigh_mean,qfar_mean,rdiag_mean,rmse,ess,ms\n";
  for (const CycleRecord& r : records) {
    out += std::to_string(r.k);
    for (double v : {r.gamma, r.qdiag_mean, r.qneigh_mean, r.qfar_mean, r.rdiag_mean, r.rmse,
                     r.ess, r.ms}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::string matrices_json(const RepetitionResult& result) {
  json j;
  j["repetition"] = result.repetition;
  j["seed"] = result.seed;
  j["failed"] = result.failed;
  if (result.failed) {
    j["error"] = {{"code", result.error_code}, {"message", result.error}};
  }
  j["q"] = matrices_to_json(result.q_matrices);
  j["r"] = matrices_to_json(result.r_matrices);
  if (!result.failed) {
    j["q_tail_mean"] = matrix_to_json(result.q_tail_mean);
    j["r_tail_mean"] = matrix_to_json(result.r_tail_mean);
  }
  return j.dump(1);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigurationError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigurationError("failed writing '" + path.string() + "'");
}

void write_experiment(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                      const std::vector<RepetitionResult>& results) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", to_json(cfg) + "\n");
  json summary = json::array();
  for (const RepetitionResult& r : results) {
    const std::string stem = rep_stem(r.repetition);
    write_text(dir / (stem + ".csv"), cycle_csv(r.records));
    write_text(dir / (stem + "_matrices.json"), matrices_json(r) + "\n");
    json entry = {{"repetition", r.repetition}, {"seed", r.seed}, {"failed", r.failed},
                  {"cycles", r.records.size()}};
    if (r.failed) {
      entry["error"] = {{"code", r.error_code}, {"message", r.error}};
    } else {
      const CovarianceSummary qs = summarize(r.q_final);
      entry["q_final"] = {{"diag_mean", qs.diag_mean},
                          {"neighbor_mean", std::isnan(qs.neighbor_mean) ? json() : json(qs.neighbor_mean)},
                          {"far_mean", std::isnan(qs.far_mean) ? json() : json(qs.far_mean)}};
      entry["r_final_diag_mean"] = r.r_final.diagonal().mean();
      entry["rmse"] = std::isnan(r.rmse) ? json() : json(r.rmse);
    }
    summary.push_back(std::move(entry));
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

std::string surface_csv(const std::vector<double>& q_grid, const std::vector<double>& r_grid,
                        const Matrix& loglik) {
  std::string out = "q,r,loglik\n";
  for (std::size_t i = 0; i < q_grid.size(); ++i) {
    for (std::size_t j = 0; j < r_grid.size(); ++j) {
      out += format_double(q_grid[i]) + ',' + format_double(r_grid[j]) + ',' +
             format_double(loglik(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) +
             '\n';
    }
  }
  return out;
}

}  // namespace oem
