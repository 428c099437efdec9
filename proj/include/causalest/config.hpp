#pragma once

#include "causalest/learner.hpp"
#include "causalest/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace causalest::config {

using nlohmann::json;

struct ValidationIssue {
  std::string path;  // JSON pointer, "" for the root
  std::string message;
};

/// Checks `doc` against a JSON Schema using the keywords type, properties,
/// required, additionalProperties (boolean), items, minItems, maxItems,
/// minimum, maximum, exclusiveMinimum, enum and local "#/$defs/..." refs.
std::vector<ValidationIssue> validate(const json& doc, const json& schema);

/// The experiment config schema; also published as docs/config.schema.json.
const json& schema();
std::string_view schema_text();

enum class InitKind { Zero, FilterPrior, Stationary };

struct SimulateSection {
  Index horizon = 100;
  Injector<double> injector;
  InitKind init = InitKind::Stationary;
  int burn_in = kDefaultBurnIn;
};

struct RiccatiSection {
  double tol = 1e-12;
  long max_iter = 1'000'000;
};

struct BoundSection {
  Index horizon = 50;
  std::size_t realizations = 200;
  std::vector<double> gamma_grid;  // as given
  bool relative_to_trace_q = true;
};

struct TrainingSection {
  learner::TrainingConfig training;
  std::size_t test_size = 1000;
  Injector<double> injector = Injector<double>::nonlinear_square();
};

struct EvaluateSection {
  std::optional<std::filesystem::path> params;
  std::size_t test_size = 1000;
  Index horizon = 100;
  Injector<double> injector = Injector<double>::nonlinear_square();
};

struct Table1Section {
  std::size_t gamma_samples = 100'000;
  std::size_t eval_sequences = 10'000;
  Index horizon = 100;
  TrainingSection training;
};

struct ExperimentConfig {
  json document;  // validated input, before defaults
  std::uint64_t seed = 0;
  int threads = 1;
  std::filesystem::path output_dir = "out";
  LinearSystem<double> system;
  RiccatiSection riccati;
  SimulateSection simulate;
  BoundSection bound;
  TrainingSection train;
  EvaluateSection evaluate;
  Table1Section table1;
};

/// Validates against schema() (Config error listing every issue with its
/// path), then resolves the system and fills defaults. Relative file
/// references resolve against `base_dir`. System validation failures keep
/// their own error code.
ExperimentConfig load(const json& doc, const std::filesystem::path& base_dir = {});

Injector<double> parse_injector(const json& j);

/// Presets used by `reproduce`; user configs are merged over them.
json fig2_preset();
json table1_preset();

}  // namespace causalest::config
