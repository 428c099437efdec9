// causalest: config-driven runner for the estimation library.
//
//   causalest riccati   [--config c.json]
//   causalest simulate  [--config c.json] [--seed s] [--out dir]
//   causalest bound     [--config c.json] [--svg]
//   causalest train     [--config c.json] [--threads k] [--svg]
//   causalest evaluate  --params params.json [--config c.json]
//   causalest reproduce fig2|table1 [--config overrides.json]
//
// Exit codes: 0 success, 2 invalid config or input, 3 numerical failure,
// 4 training divergence.

#include "causalest/bound.hpp"
#include "causalest/config.hpp"
#include "causalest/estimators.hpp"
#include "causalest/io.hpp"
#include "causalest/learner.hpp"
#include "causalest/model.hpp"
#include "causalest/rng.hpp"

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace causalest;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitDivergence = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Divergence:
      return kExitDivergence;
    case ErrorCode::Config:
    case ErrorCode::Io:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::LengthMismatch:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnstableSystem:
    case ErrorCode::NonPSDNoise:
      return kExitConfig;
    default:
      return kExitNumerical;
  }
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool svg = false;
  std::string params_path;
  std::string target;
};

/// Output bookkeeping for one command: files, seeds and timings end up in
/// manifest.json.
class Run {
 public:
  Run(std::string command, const config::ExperimentConfig& cfg, bool svg)
      : command_(std::move(command)), cfg_(cfg), svg_(svg), start_(Clock::now()) {}

  const config::ExperimentConfig& cfg() const { return cfg_; }
  bool svg() const { return svg_; }

  std::uint64_t seed(const std::string& path) {
    const std::uint64_t s = derive_seed(cfg_.seed, path);
    seeds_[path] = s;
    return s;
  }

  void write(const std::string& name, const std::string& content) {
    io::write_file_atomic(cfg_.output_dir / name, content);
    outputs_.push_back({{"file", name}, {"bytes", content.size()}, {"fnv1a64", io::hex64(io::fnv1a64(content))}});
  }

  template <typename Fn>
  auto timed(const std::string& label, Fn&& fn) {
    const auto t0 = Clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timings_[label] = std::chrono::duration<double>(Clock::now() - t0).count();
    } else {
      auto result = fn();
      timings_[label] = std::chrono::duration<double>(Clock::now() - t0).count();
      return result;
    }
  }

  void note(const std::string& key, json value) { summary_[key] = std::move(value); }

  void finish() {
    timings_["total"] = std::chrono::duration<double>(Clock::now() - start_).count();
    const std::string canonical = cfg_.document.dump();
    json manifest = {{"tool", "causalest"},
                     {"version", CAUSALEST_VERSION},
                     {"command", command_},
                     {"config_hash", io::hex64(io::fnv1a64(canonical))},
                     {"config", cfg_.document},
                     {"seed", cfg_.seed},
                     {"derived_seeds", seeds_},
                     {"threads", cfg_.threads},
                     {"timings_seconds", timings_},
                     {"summary", summary_},
                     {"outputs", outputs_}};
    io::write_file_atomic(cfg_.output_dir / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  using Clock = std::chrono::steady_clock;
  std::string command_;
  const config::ExperimentConfig& cfg_;
  bool svg_;
  Clock::time_point start_;
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, double> timings_;
  json summary_ = json::object();
  json outputs_ = json::array();
};

void print_matrix(const char* name, const MatrixXd& m) {
  std::printf("%s =\n", name);
  for (Index r = 0; r < m.rows(); ++r) {
    std::printf("  ");
    for (Index c = 0; c < m.cols(); ++c) std::printf(" % .9f", m(r, c));
    std::printf("\n");
  }
}

SteadyStateKalman<double> kalman_for(Run& run) {
  const auto& c = run.cfg();
  return run.timed("riccati", [&] { return solve_riccati(c.system, c.riccati.tol, c.riccati.max_iter); });
}

void cmd_riccati(Run& run) {
  const auto kal = kalman_for(run);
  print_matrix("Sigma_bar", kal.sigma_bar);
  print_matrix("K", kal.K);
  print_matrix("A_tilde", kal.A_tilde);
  std::printf("trace(Sigma_bar) = %.9g\nresidual = %.3e\niterations = %ld\n", kal.sigma_bar.trace(),
              kal.riccati_residual, kal.iterations);
  json doc = io::kalman_to_json(kal);
  doc["system"] = io::system_to_json(kal.system);
  run.write("riccati.json", doc.dump(2) + "\n");
  run.note("trace_sigma_bar", kal.sigma_bar.trace());
}

void cmd_simulate(Run& run) {
  const auto& c = run.cfg();
  const auto kal = kalman_for(run);
  InitialState<double> init = InitialState<double>::zero(c.system.n());
  if (c.simulate.init == config::InitKind::FilterPrior)
    init = InitialState<double>::filter_prior(kal.sigma_bar);
  else if (c.simulate.init == config::InitKind::Stationary)
    init = InitialState<double>::stationary(stationary_state_covariance(c.system), c.simulate.burn_in);
  const auto traj = simulate(c.system, c.simulate.horizon, init, c.simulate.injector, run.seed("simulate"));
  const auto filt = filter_run(kal, traj.corrupted);
  const auto smth = smoother_run_recursive(kal, traj.corrupted, filt);
  const auto e = error_energies(traj, filt, smth);
  run.write("trajectory.csv", io::trajectory_csv(traj));
  run.write("estimates.csv", io::estimates_csv({filt, smth}));
  std::printf("N = %lld\nfilter MSE = %.6f\nsmoother MSE = %.6f\n", static_cast<long long>(traj.horizon()),
              e.filter_mse, e.smoother_mse);
  run.note("filter_mse", e.filter_mse);
  run.note("smoother_mse", e.smoother_mse);
}

void cmd_bound(Run& run) {
  const auto& c = run.cfg();
  const auto kal = kalman_for(run);
  const double trace_q = c.system.Q.trace();
  std::vector<double> grid = c.bound.gamma_grid;
  if (c.bound.relative_to_trace_q)
    for (double& g : grid) g *= trace_q;
  run.note("realization_seed_path", "bound/realization/<i>");
  const auto sweep = run.timed("sweep", [&] {
    return gamma_sweep(kal, c.system, c.bound.horizon, grid, c.bound.realizations, c.seed, c.threads);
  });
  run.write("bound.csv", io::sweep_csv(sweep));
  const auto ops = build_block_operators(kal, c.bound.horizon);
  run.write("operator_filter.csv", io::matrix_csv(ops.xi_filter));
  run.write("operator_smoother.csv", io::matrix_csv(ops.xi_smoother));

  std::printf("N = %lld, realizations = %zu, delta_alpha = %.6f +- %.6f\n",
              static_cast<long long>(c.bound.horizon), c.bound.realizations, sweep.nominal.delta_alpha,
              sweep.nominal.delta_alpha_se);
  for (const auto& p : sweep.points)
    std::printf("  gamma = %-10.6g (%.4f tr(Q))  I_N = % .6f +- %.6f\n", p.gamma, p.gamma / trace_q, p.i_n_mean,
                p.std_err);
  if (sweep.zero_crossing) {
    std::printf("zero crossing: gamma = %.6g = %.4f tr(Q)\n", *sweep.zero_crossing, *sweep.zero_crossing / trace_q);
    run.note("zero_crossing_gamma", *sweep.zero_crossing);
    run.note("zero_crossing_over_trace_q", *sweep.zero_crossing / trace_q);
  } else {
    std::printf("zero crossing: none on this grid\n");
    run.note("zero_crossing_gamma", nullptr);
  }
  run.note("delta_alpha", sweep.nominal.delta_alpha);

  if (run.svg()) {
    io::PlotSeries s{"I_N(gamma)", {}, {}, {}};
    for (const auto& p : sweep.points) {
      s.x.push_back(p.gamma / trace_q);
      s.y.push_back(p.i_n_mean);
      s.err.push_back(p.std_err);
    }
    run.write("bound.svg",
              io::svg_plot({s}, {"Smoothing advantage bound, N = " + std::to_string(c.bound.horizon),
                                 "gamma / tr(Q)", "I_N(gamma)", true}));
  }
}

void write_curve(Run& run, const std::string& stem, const std::vector<learner::EpochRecord>& curve) {
  run.write(stem + ".csv", io::learning_curve_csv(curve));
  if (!run.svg()) return;
  io::PlotSeries train{"train loss", {}, {}, {}}, states{"eval MSE vs states", {}, {}, {}},
      targets{"eval MSE vs targets", {}, {}, {}};
  for (const auto& r : curve) {
    train.x.push_back(r.epoch);
    train.y.push_back(r.train_loss);
    states.x.push_back(r.epoch);
    states.y.push_back(r.eval_mse_states);
    targets.x.push_back(r.epoch);
    targets.y.push_back(r.eval_mse_targets);
  }
  run.write(stem + ".svg", io::svg_plot({train, states, targets}, {"Learning curve", "epoch", "MSE", false}));
}

std::string evaluation_csv(const learner::Evaluation& ev, const learner::KalmanBaseline& kb) {
  std::string out = "metric,value,std_err\n";
  auto line = [&](const char* name, double v, double se) {
    out += std::string(name) + "," + io::format_number(v) + "," + io::format_number(se) + "\n";
  };
  line("learned_mse_states", ev.mse_states, ev.se_states);
  line("learned_mse_targets", ev.mse_targets, ev.se_targets);
  line("kalman_filter_mse_states", kb.filter_mse, kb.filter_se);
  line("kalman_smoother_mse_states", kb.smoother_mse, kb.smoother_se);
  return out;
}

// Train and evaluate share the test-set derivation so a saved model can be
// re-scored on exactly the data seen at training time.
learner::Dataset test_dataset(Run& run, const SteadyStateKalman<double>& kal, const Injector<double>& injector,
                              std::size_t size, Index horizon) {
  return run.timed("test_dataset", [&] {
    return learner::build_dataset(run.cfg().system, kal, injector, size, horizon, run.seed("learner/test"),
                                  run.cfg().threads);
  });
}

void cmd_train(Run& run) {
  const auto& c = run.cfg();
  const auto kal = kalman_for(run);
  auto tc = c.train.training;
  tc.seed = run.seed("learner/train");
  tc.threads = c.threads;
  const auto data = run.timed("dataset", [&] {
    return learner::build_dataset(c.system, kal, c.train.injector, tc.dataset_size, tc.sequence_length,
                                  run.seed("learner/dataset"), c.threads);
  });
  const auto test = test_dataset(run, kal, c.train.injector, c.train.test_size, tc.sequence_length);
  const auto result = run.timed("training", [&] { return learner::train(data, tc, &test); });
  const auto ev = learner::evaluate(result.params, test, c.threads);
  const auto kb = learner::kalman_baseline(kal, test);

  run.write("params.json", learner::to_json(result.params).dump(2) + "\n");
  write_curve(run, "learning_curve", result.curve);
  run.write("evaluation.csv", evaluation_csv(ev, kb));
  std::printf("final train loss = %.6f\n", result.curve.back().train_loss);
  std::printf("test MSE vs states = %.6f +- %.6f (Kalman filter %.6f, smoother %.6f)\n", ev.mse_states,
              ev.se_states, kb.filter_mse, kb.smoother_mse);
  std::printf("test MSE vs smoother targets = %.6f +- %.6f\n", ev.mse_targets, ev.se_targets);
  run.note("final_train_loss", result.curve.back().train_loss);
  run.note("mse_states", ev.mse_states);
  run.note("mse_targets", ev.mse_targets);
}

void cmd_evaluate(Run& run, const std::string& params_flag) {
  const auto& c = run.cfg();
  fs::path path;
  if (!params_flag.empty())
    path = params_flag;
  else if (c.evaluate.params)
    path = *c.evaluate.params;
  else
    throw Error(ErrorCode::Config, "evaluate needs --params or evaluate.params in the config");
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Io, path.string() + " is not valid JSON: " + e.what());
  }
  const auto params = learner::params_from_json(doc);
  const auto kal = kalman_for(run);
  const auto test = test_dataset(run, kal, c.evaluate.injector, c.evaluate.test_size, c.evaluate.horizon);
  const auto ev = learner::evaluate(params, test, c.threads);
  const auto kb = learner::kalman_baseline(kal, test);
  run.write("evaluation.csv", evaluation_csv(ev, kb));
  std::printf("test MSE vs states = %.6f +- %.6f (Kalman filter %.6f, smoother %.6f)\n", ev.mse_states,
              ev.se_states, kb.filter_mse, kb.smoother_mse);
  std::printf("test MSE vs smoother targets = %.6f +- %.6f\n", ev.mse_targets, ev.se_targets);
  run.note("mse_states", ev.mse_states);
  run.note("mse_targets", ev.mse_targets);
}

void cmd_table1(Run& run) {
  const auto& c = run.cfg();
  const auto& t1 = c.table1;
  const auto kal = kalman_for(run);
  const double trace_q = c.system.Q.trace();
  const auto misspecified = t1.training.injector;
  const auto accurate = Injector<double>::none();

  const auto gamma = run.timed("gamma", [&] {
    return measure_gamma(c.system, misspecified, static_cast<long>(t1.gamma_samples), run.seed("table1/gamma"));
  });

  struct Column {
    learner::KalmanBaseline baseline;
    learner::Evaluation learned;
    std::vector<learner::EpochRecord> curve;
  };
  auto column = [&](const std::string& name, const Injector<double>& injector) {
    Column col;
    const auto eval = run.timed(name + "/eval_dataset", [&] {
      return learner::build_dataset(c.system, kal, injector, t1.eval_sequences, t1.horizon, run.seed("table1/eval"),
                                    c.threads);
    });
    col.baseline = learner::kalman_baseline(kal, eval);
    const auto train = run.timed(name + "/train_dataset", [&] {
      return learner::build_dataset(c.system, kal, injector, t1.training.training.dataset_size, t1.horizon,
                                    run.seed("table1/train"), c.threads);
    });
    const auto test = learner::build_dataset(c.system, kal, injector, t1.training.test_size, t1.horizon,
                                             run.seed("table1/test"), c.threads);
    auto tc = t1.training.training;
    tc.seed = run.seed("table1/learner/" + name);
    tc.threads = c.threads;
    const auto result = run.timed(name + "/training", [&] { return learner::train(train, tc, &test); });
    col.learned = learner::evaluate(result.params, eval, c.threads);
    col.curve = result.curve;
    run.write("params_" + name + ".json", learner::to_json(result.params).dump(2) + "\n");
    write_curve(run, "learning_curve_" + name, result.curve);
    return col;
  };
  const Column acc = column("accurate", accurate);
  const Column mis = column("misspecified", misspecified);

  const std::vector<io::TableRow> rows{
      {"kalman_filter", acc.baseline.filter_mse, acc.baseline.filter_se, mis.baseline.filter_mse,
       mis.baseline.filter_se},
      {"kalman_smoother", acc.baseline.smoother_mse, acc.baseline.smoother_se, mis.baseline.smoother_mse,
       mis.baseline.smoother_se},
      {"learned_filter", acc.learned.mse_states, acc.learned.se_states, mis.learned.mse_states,
       mis.learned.se_states}};
  run.write("table1.csv", io::table_csv(rows));
  const std::string text = io::table_text(rows, gamma.mean, trace_q);
  run.write("table1.txt", text);
  std::string summary = "quantity,value,std_err\n";
  summary += "gamma_hat," + io::format_number(gamma.mean) + "," + io::format_number(gamma.std_err) + "\n";
  summary += "gamma_hat_over_trace_q," + io::format_number(gamma.mean / trace_q) + "," +
             io::format_number(gamma.std_err / trace_q) + "\n";
  summary += "trace_sigma_bar," + io::format_number(kal.sigma_bar.trace()) + ",0\n";
  run.write("table1_summary.csv", summary);
  std::fputs(text.c_str(), stdout);
  run.note("gamma_hat", gamma.mean);
  run.note("learned_misspecified_mse", mis.learned.mse_states);
  run.note("learned_accurate_mse", acc.learned.mse_states);
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, path + " is not valid JSON: " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
}

int dispatch(const std::string& command, const Options& opt) {
  config::ExperimentConfig cfg;
  try {
    json doc = read_config(opt.config_path);
    if (command == "reproduce") {
      json preset = opt.target == "fig2" ? config::fig2_preset() : config::table1_preset();
      preset.merge_patch(doc);
      doc = std::move(preset);
    }
    if (!doc.is_object()) throw Error(ErrorCode::Config, "config root must be an object");
    if (opt.seed) doc["seed"] = *opt.seed;
    if (opt.threads) doc["threads"] = *opt.threads;
    if (opt.out) doc["output_dir"] = *opt.out;
    const fs::path base = opt.config_path.empty() ? fs::path{} : fs::path(opt.config_path).parent_path();
    cfg = config::load(doc, base);
  } catch (const Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }

  const std::string label = command == "reproduce" ? "reproduce " + opt.target : command;
  Run run(label, cfg, opt.svg);
  try {
    if (command == "riccati")
      cmd_riccati(run);
    else if (command == "simulate")
      cmd_simulate(run);
    else if (command == "bound" || (command == "reproduce" && opt.target == "fig2"))
      cmd_bound(run);
    else if (command == "train")
      cmd_train(run);
    else if (command == "evaluate")
      cmd_evaluate(run, opt.params_path);
    else
      cmd_table1(run);
    run.finish();
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal state estimation: Kalman filter/smoother, smoothing bounds, learned filters"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CAUSALEST_VERSION));
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Root seed (overrides the config)");
    sub->add_option("--out", opt.out, "Output directory (overrides the config)");
    sub->add_option("--threads", opt.threads, "Worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--svg", opt.svg, "Also write SVG plots");
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"riccati", "Solve the steady-state Riccati equation"},
           {"simulate", "Simulate one trajectory and run the filter and smoother"},
           {"bound", "Sweep the smoothing-advantage bound over a gamma grid"},
           {"train", "Train the learned causal filter on smoother targets"},
           {"evaluate", "Evaluate saved learned-filter parameters"},
           {"reproduce", "Run a preset experiment"}}) {
    subs[name] = app.add_subcommand(name, help);
    add_common(subs[name]);
  }
  subs["evaluate"]->add_option("--params", opt.params_path, "Parameter JSON written by train")
      ->check(CLI::ExistingFile);
  subs["reproduce"]
      ->add_option("target", opt.target, "fig2 or table1")
      ->required()
      ->check(CLI::IsMember({"fig2", "table1"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) return dispatch(name, opt);
  return kExitConfig;
}
