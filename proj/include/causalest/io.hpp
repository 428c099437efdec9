#pragma once

#include "causalest/bound.hpp"
#include "causalest/common.hpp"
#include "causalest/estimators.hpp"
#include "causalest/learner.hpp"
#include "causalest/model.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace causalest::io {

/// printf "%.12g".
std::string format_number(double x);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t x);

MatrixXd matrix_from_json(const nlohmann::json& j, std::string_view what);
nlohmann::json matrix_to_json(const MatrixXd& m);

/// {"A": [[...]], "H": ..., "Q": ..., "R": ...}, validated.
LinearSystem<double> system_from_json(const nlohmann::json& j);
nlohmann::json system_to_json(const LinearSystem<double>& sys);
nlohmann::json kalman_to_json(const SteadyStateKalman<double>& kal);

// CSV emitters. Header row first, one record per line.
std::string trajectory_csv(const Trajectory<double>& traj);  // k, x_*, z_*, ztilde_*, u_*
std::string estimates_csv(const std::vector<EstimateSequence<double>>& estimates);  // k, xhat_*, kind
std::string matrix_csv(const MatrixXd& m);  // row-major, header c0, c1, ...
std::string sweep_csv(const GammaSweep<double>& sweep);  // gamma, i_n_mean, std_err, delta_alpha, num_realizations
std::string learning_curve_csv(const std::vector<learner::EpochRecord>& curve);

struct TableRow {
  std::string estimator;
  double accurate_mse, accurate_se;
  double misspecified_mse, misspecified_se;
};
std::string table_csv(const std::vector<TableRow>& rows);  // + degradation_pct
std::string table_text(const std::vector<TableRow>& rows, double gamma_hat, double trace_q);

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
  std::vector<double> err;  // optional half-widths
};
struct PlotSpec {
  std::string title, x_label, y_label;
  bool zero_line = false;
};
/// Self-contained SVG line plot.
std::string svg_plot(const std::vector<PlotSeries>& series, const PlotSpec& spec);

}  // namespace causalest::io
