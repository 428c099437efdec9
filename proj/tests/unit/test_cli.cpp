#include "doctest.h"

#include "causalest/io.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using causalest::io::read_file;
using causalest::io::write_file_atomic;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "causalest_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(CAUSALEST_CLI_PATH) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh(const std::string& name) {
  const fs::path p = kRoot / name;
  fs::remove_all(p);
  fs::create_directories(kRoot);
  return p;
}

fs::path write_config(const std::string& name, const json& doc) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / name;
  write_file_atomic(p, doc.dump());
  return p;
}

std::map<std::string, double> read_metrics(const fs::path& csv) {
  std::map<std::string, double> out;
  std::istringstream is(read_file(csv));
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  return out;
}

}  // namespace

TEST_CASE("riccati on a scalar system") {
  const auto cfg = write_config("scalar.json", {{"system", {{"A", {{0.5}}}, {"H", {{1}}}, {"Q", {{1}}}, {"R", {{1}}}}}});
  const auto out = fresh("riccati");
  REQUIRE(run("riccati --config " + cfg.string() + " --out " + out.string()) == 0);
  const json doc = json::parse(read_file(out / "riccati.json"));
  CHECK(doc["sigma_bar"][0][0].get<double>() == doctest::Approx((0.25 + std::sqrt(4.0625)) / 2.0).epsilon(1e-12));
  const json manifest = json::parse(read_file(out / "manifest.json"));
  CHECK(manifest["command"] == "riccati");
  CHECK(manifest["outputs"].is_array());
  CHECK(manifest.contains("config_hash"));
}

TEST_CASE("exit codes") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("reproduce fig3") == 2);
  CHECK(run("riccati --threads 0") == 2);

  const auto bad_schema = write_config("bad_schema.json", {{"bound", {{"realizations", 0}}}});
  CHECK(run("bound --config " + bad_schema.string() + " --out " + fresh("x").string()) == 2);
  CHECK(read_file(kRoot / "last.log").find("/bound/realizations") != std::string::npos);

  const auto unstable = write_config("unstable.json", {{"system", {{"A", {{1.2}}}, {"H", {{1}}}, {"Q", {{1}}}, {"R", {{1}}}}}});
  CHECK(run("riccati --config " + unstable.string() + " --out " + fresh("x").string()) == 2);

  const auto not_json = kRoot / "not.json";
  write_file_atomic(not_json, "{ nope");
  CHECK(run("riccati --config " + not_json.string()) == 2);

  const auto slow = write_config("slow.json", {{"riccati", {{"max_iter", 1}}}});
  CHECK(run("riccati --config " + slow.string() + " --out " + fresh("x").string()) == 3);

  const auto diverge = write_config("diverge.json", {{"train",
                                                      {{"dataset_size", 20},
                                                       {"test_size", 2},
                                                       {"sequence_length", 10},
                                                       {"epochs", 5},
                                                       {"batch_size", 5},
                                                       {"learning_rate", 1e6}}}});
  CHECK(run("train --config " + diverge.string() + " --out " + fresh("x").string()) == 4);

  CHECK(run("evaluate --out " + fresh("x").string()) == 2);
}

TEST_CASE("simulate and bound outputs are byte-identical across runs and thread counts") {
  const auto a = fresh("sim_a"), b = fresh("sim_b");
  REQUIRE(run("simulate --seed 5 --out " + a.string()) == 0);
  REQUIRE(run("simulate --seed 5 --threads 3 --out " + b.string()) == 0);
  for (const char* f : {"trajectory.csv", "estimates.csv"}) CHECK(read_file(a / f) == read_file(b / f));

  const auto cfg = write_config("small_bound.json",
                                {{"bound", {{"horizon", 10}, {"realizations", 30}, {"gamma_grid", {0.0, 0.1, 0.3}}}}});
  const auto c = fresh("bound_a"), d = fresh("bound_b");
  REQUIRE(run("bound --config " + cfg.string() + " --seed 4 --threads 1 --svg --out " + c.string()) == 0);
  REQUIRE(run("bound --config " + cfg.string() + " --seed 4 --threads 4 --out " + d.string()) == 0);
  CHECK(read_file(c / "bound.csv") == read_file(d / "bound.csv"));
  CHECK(fs::exists(c / "bound.svg"));
  CHECK_FALSE(fs::exists(d / "bound.svg"));
  CHECK(read_file(c / "bound.csv").rfind("gamma,i_n_mean,std_err,delta_alpha,num_realizations\n", 0) == 0);
}

TEST_CASE("a grid of only zero gives the nominal gap and no crossing") {
  const auto cfg = write_config("zero_grid.json",
                                {{"bound", {{"horizon", 10}, {"realizations", 20}, {"gamma_grid", {0.0}}}}});
  const auto out = fresh("zero_grid");
  REQUIRE(run("bound --config " + cfg.string() + " --out " + out.string()) == 0);
  std::istringstream is(read_file(out / "bound.csv"));
  std::string header, row, extra;
  std::getline(is, header);
  std::getline(is, row);
  CHECK_FALSE(std::getline(is, extra));
  // gamma, i_n_mean, std_err, delta_alpha, count
  std::vector<std::string> cells;
  std::stringstream rs(row);
  for (std::string c; std::getline(rs, c, ',');) cells.push_back(c);
  REQUIRE(cells.size() == 5);
  CHECK(cells[0] == "0");
  CHECK(cells[1] == cells[3]);
  const json manifest = json::parse(read_file(out / "manifest.json"));
  CHECK(manifest["summary"]["zero_crossing_gamma"].is_null());
}

TEST_CASE("train memorizes one sequence and evaluate reproduces its test score") {
  const auto cfg = write_config("memorize.json", {{"train",
                                                   {{"dataset_size", 1},
                                                    {"test_size", 3},
                                                    {"sequence_length", 5},
                                                    {"epochs", 1500},
                                                    {"batch_size", 1},
                                                    {"learning_rate", 0.01}}},
                                                  {"evaluate", {{"test_size", 3}, {"horizon", 5}}}});
  const auto out = fresh("memorize");
  REQUIRE(run("train --config " + cfg.string() + " --seed 3 --out " + out.string()) == 0);
  std::istringstream curve(read_file(out / "learning_curve.csv"));
  std::string line, last;
  while (std::getline(curve, line)) last = line;
  CHECK(std::stod(last.substr(last.find(',') + 1)) < 1e-3);

  const auto ev = fresh("memorize_eval");
  REQUIRE(run("evaluate --config " + cfg.string() + " --seed 3 --params " + (out / "params.json").string() +
              " --out " + ev.string()) == 0);
  const auto trained = read_metrics(out / "evaluation.csv");
  const auto again = read_metrics(ev / "evaluation.csv");
  CHECK(again.at("learned_mse_states") == trained.at("learned_mse_states"));
  CHECK(again.at("kalman_filter_mse_states") == trained.at("kalman_filter_mse_states"));
}
