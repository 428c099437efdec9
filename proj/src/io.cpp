#include "causalest/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

namespace causalest::io {

namespace fs = std::filesystem;

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    detail::require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    detail::require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  detail::require(!ec, ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

MatrixXd matrix_from_json(const nlohmann::json& j, std::string_view what) {
  const std::string name(what);
  detail::require(j.is_array() && !j.empty(), ErrorCode::Config, name + " must be a non-empty array of rows");
  const Index rows = static_cast<Index>(j.size());
  detail::require(j[0].is_array() && !j[0].empty(), ErrorCode::Config, name + " rows must be non-empty arrays");
  const Index cols = static_cast<Index>(j[0].size());
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    detail::require(row.is_array() && static_cast<Index>(row.size()) == cols, ErrorCode::Config,
                    name + " rows must all have " + std::to_string(cols) + " entries");
    for (Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      detail::require(v.is_number(), ErrorCode::Config, name + " entries must be numbers");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

nlohmann::json matrix_to_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

LinearSystem<double> system_from_json(const nlohmann::json& j) {
  detail::require(j.is_object(), ErrorCode::Config, "system must be an object");
  for (const char* key : {"A", "H", "Q", "R"})
    detail::require(j.contains(key), ErrorCode::Config, std::string("system is missing ") + key);
  return validate_system(matrix_from_json(j["A"], "system.A"), matrix_from_json(j["H"], "system.H"),
                         matrix_from_json(j["Q"], "system.Q"), matrix_from_json(j["R"], "system.R"));
}

nlohmann::json system_to_json(const LinearSystem<double>& sys) {
  return {{"A", matrix_to_json(sys.A)},
          {"H", matrix_to_json(sys.H)},
          {"Q", matrix_to_json(sys.Q)},
          {"R", matrix_to_json(sys.R)}};
}

nlohmann::json kalman_to_json(const SteadyStateKalman<double>& kal) {
  return {{"sigma_bar", matrix_to_json(kal.sigma_bar)},
          {"K", matrix_to_json(kal.K)},
          {"A_tilde", matrix_to_json(kal.A_tilde)},
          {"trace_sigma_bar", kal.sigma_bar.trace()},
          {"riccati_residual", kal.riccati_residual},
          {"iterations", kal.iterations}};
}

namespace {

void header(std::ostringstream& os, std::string_view prefix, Index count) {
  for (Index i = 0; i < count; ++i) os << ',' << prefix << i;
}

void row(std::ostringstream& os, const auto& col) {
  for (Index i = 0; i < col.size(); ++i) os << ',' << format_number(col[i]);
}

}  // namespace

std::string trajectory_csv(const Trajectory<double>& traj) {
  std::ostringstream os;
  os << 'k';
  header(os, "x_", traj.states.rows());
  header(os, "z_", traj.clean.rows());
  header(os, "ztilde_", traj.corrupted.rows());
  header(os, "u_", traj.adversary.rows());
  os << '\n';
  for (Index k = 0; k < traj.horizon(); ++k) {
    os << k;
    row(os, traj.states.col(k));
    row(os, traj.clean.col(k));
    row(os, traj.corrupted.col(k));
    row(os, traj.adversary.col(k));
    os << '\n';
  }
  return os.str();
}

std::string estimates_csv(const std::vector<EstimateSequence<double>>& estimates) {
  std::ostringstream os;
  os << 'k';
  header(os, "xhat_", estimates.empty() ? 0 : estimates.front().values.rows());
  os << ",kind\n";
  for (const auto& e : estimates) {
    const char* kind = e.kind == EstimateKind::Filter ? "filter" : "smoother";
    for (Index k = 0; k < e.horizon(); ++k) {
      os << k;
      row(os, e.values.col(k));
      os << ',' << kind << '\n';
    }
  }
  return os.str();
}

std::string matrix_csv(const MatrixXd& m) {
  std::ostringstream os;
  for (Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << 'c' << c;
  os << '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << format_number(m(r, c));
    os << '\n';
  }
  return os.str();
}

std::string sweep_csv(const GammaSweep<double>& sweep) {
  std::ostringstream os;
  os << "gamma,i_n_mean,std_err,delta_alpha,num_realizations\n";
  for (const auto& p : sweep.points)
    os << format_number(p.gamma) << ',' << format_number(p.i_n_mean)
       << ',' << format_number(p.std_err) << ',' << format_number(p.delta_alpha) << ',' << p.num_realizations
       << '\n';
  return os.str();
}

std::string learning_curve_csv(const std::vector<learner::EpochRecord>& curve) {
  std::ostringstream os;
  os << "epoch,train_loss,eval_mse_states,eval_mse_targets\n";
  for (const auto& r : curve)
    os << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.eval_mse_states) << ','
       << format_number(r.eval_mse_targets) << '\n';
  return os.str();
}

namespace {
double degradation_pct(const TableRow& r) { return 100.0 * (r.misspecified_mse / r.accurate_mse - 1.0); }
}  // namespace

std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os << "estimator,accurate_mse,accurate_se,misspecified_mse,misspecified_se,degradation_pct\n";
  for (const auto& r : rows)
    os << r.estimator << ',' << format_number(r.accurate_mse) << ',' << format_number(r.accurate_se) << ','
       << format_number(r.misspecified_mse) << ',' << format_number(r.misspecified_se) << ','
       << format_number(degradation_pct(r)) << '\n';
  return os.str();
}

std::string table_text(const std::vector<TableRow>& rows, double gamma_hat, double trace_q) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %-22s %-30s\n", "estimator", "accurate", "misspecified");
  os << buf;
  for (const auto& r : rows) {
    char acc[48], mis[64];
    std::snprintf(acc, sizeof acc, "%.3f +- %.3f", r.accurate_mse, r.accurate_se);
    std::snprintf(mis, sizeof mis, "%.3f +- %.3f (%+.0f%%)", r.misspecified_mse, r.misspecified_se,
                  degradation_pct(r));
    std::snprintf(buf, sizeof buf, "%-16s %-22s %-30s\n", r.estimator.c_str(), acc, mis);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "gamma_hat = %.4g = %.3f tr(Q)\n", gamma_hat, gamma_hat / trace_q);
  os << buf;
  return os.str();
}

namespace {

std::string escape_xml(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// 1-2-5 tick spacing with roughly `target` intervals.
double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

}  // namespace

std::string svg_plot(const std::vector<PlotSeries>& series, const PlotSpec& spec) {
  constexpr double W = 640, H = 420, left = 70, right = 20, top = 40, bottom = 55;
  constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i] - e);
      ymax = std::max(ymax, s.y[i] + e);
    }
  if (spec.zero_line) {
    ymin = std::min(ymin, 0.0);
    ymax = std::max(ymax, 0.0);
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (W - left - right); };
  const auto py = [&](double y) { return H - bottom - (y - ymin) / (ymax - ymin) * (H - top - bottom); };
  const auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
     << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(spec.title)
     << "</text>\n";

  const double xs = nice_step(xmax - xmin, 8), ys = nice_step(ymax - ymin, 6);
  for (double t = std::ceil(xmin / xs) * xs; t <= xmax + 1e-9 * xs; t += xs) {
    os << "<line x1=\"" << f(px(t)) << "\" y1=\"" << f(top) << "\" x2=\"" << f(px(t)) << "\" y2=\"" << f(H - bottom)
       << "\" stroke=\"#eee\"/>\n";
    os << "<text x=\"" << f(px(t)) << "\" y=\"" << f(H - bottom + 16) << "\" text-anchor=\"middle\">"
       << format_number(std::abs(t) < 1e-12 * xs ? 0.0 : t) << "</text>\n";
  }
  for (double t = std::ceil(ymin / ys) * ys; t <= ymax + 1e-9 * ys; t += ys) {
    os << "<line x1=\"" << f(left) << "\" y1=\"" << f(py(t)) << "\" x2=\"" << f(W - right) << "\" y2=\"" << f(py(t))
       << "\" stroke=\"#eee\"/>\n";
    os << "<text x=\"" << f(left - 6) << "\" y=\"" << f(py(t) + 4) << "\" text-anchor=\"end\">"
       << format_number(std::abs(t) < 1e-12 * ys ? 0.0 : t) << "</text>\n";
  }
  os << "<rect x=\"" << f(left) << "\" y=\"" << f(top) << "\" width=\"" << f(W - left - right) << "\" height=\""
     << f(H - top - bottom) << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (spec.zero_line && ymin < 0 && ymax > 0)
    os << "<line x1=\"" << f(left) << "\" y1=\"" << f(py(0)) << "\" x2=\"" << f(W - right) << "\" y2=\"" << f(py(0))
       << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape_xml(spec.x_label)
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << H / 2 << ")\">"
     << escape_xml(spec.y_label) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* color = palette[s % std::size(palette)];
    for (std::size_t i = 0; i < ser.err.size() && i < ser.x.size(); ++i)
      os << "<line x1=\"" << f(px(ser.x[i])) << "\" y1=\"" << f(py(ser.y[i] - ser.err[i])) << "\" x2=\""
         << f(px(ser.x[i])) << "\" y2=\"" << f(py(ser.y[i] + ser.err[i])) << "\" stroke=\"" << color
         << "\" stroke-opacity=\"0.5\"/>\n";
    os << "<path fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" d=\"";
    bool pen_down = false;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) {
        pen_down = false;
        continue;
      }
      os << (pen_down ? " L" : " M") << f(px(ser.x[i])) << ' ' << f(py(ser.y[i]));
      pen_down = true;
    }
    os << "\"/>\n";
    const double ly = top + 16 + 16 * static_cast<double>(s);
    os << "<line x1=\"" << f(W - right - 150) << "\" y1=\"" << f(ly - 4) << "\" x2=\"" << f(W - right - 130)
       << "\" y2=\"" << f(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << f(W - right - 124) << "\" y=\"" << f(ly) << "\">" << escape_xml(ser.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace causalest::io
