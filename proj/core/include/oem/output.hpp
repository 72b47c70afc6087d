#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oem/experiment.hpp"

namespace oem {

/// Shortest round-trip decimal form; "nan", "inf" and "-inf" for
/// non-finite values.
std::string format_double(double value);

/// Per-cycle CSV with the columns
/// k,gamma,qdiag_mean,qneigh_mean,qfar_mean,rdiag_mean,rmse,ess,ms
std::string cycle_csv(const std::vector<CycleRecord>& records);

/// Sidecar JSON with the stored full Q and R matrices keyed by cycle.
std::string matrices_json(const RepetitionResult& result);

/// Writes rep_NNN.csv and rep_NNN_matrices.json for every repetition, plus
/// config.json and summary.json, into `dir` (created when missing).
void write_experiment(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                      const std::vector<RepetitionResult>& results);

/// Long-format CSV q,r,loglik of a loglik surface.
std::string surface_csv(const std::vector<double>& q_grid, const std::vector<double>& r_grid,
                        const Matrix& loglik);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace oem
