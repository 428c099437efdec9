#include "causalest/config.hpp"

#include "causalest/io.hpp"

#include "config_schema.hpp"

#include <cmath>
#include <sstream>

namespace causalest::config {

namespace fs = std::filesystem;

namespace {

std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

bool matches_type(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  if (type == "number") return v.is_number();
  if (type == "integer") {
    if (v.is_number_integer()) return true;
    if (!v.is_number_float()) return false;
    const double d = v.get<double>();
    return std::isfinite(d) && std::floor(d) == d;
  }
  return false;
}

std::string number_text(const json& v) { return v.dump(); }

class Validator {
 public:
  explicit Validator(const json& root) : root_(root) {}

  void check(const json& doc, const json& s, const std::string& path) {
    if (auto ref = s.find("$ref"); ref != s.end()) {
      const std::string target = ref->get<std::string>();
      const std::string prefix = "#/$defs/";
      if (target.rfind(prefix, 0) != 0 || !root_.contains("$defs") ||
          !root_["$defs"].contains(target.substr(prefix.size()))) {
        issue(path, "schema reference " + target + " cannot be resolved");
        return;
      }
      check(doc, root_["$defs"][target.substr(prefix.size())], path);
      return;
    }

    if (auto t = s.find("type"); t != s.end()) {
      std::vector<std::string> types;
      if (t->is_array())
        for (const auto& x : *t) types.push_back(x.get<std::string>());
      else
        types.push_back(t->get<std::string>());
      bool ok = false;
      for (const auto& ty : types) ok = ok || matches_type(doc, ty);
      if (!ok) {
        std::string want;
        for (const auto& ty : types) want += (want.empty() ? "" : " or ") + ty;
        issue(path, "expected " + want + ", got " + std::string(doc.type_name()));
        return;
      }
    }

    if (auto e = s.find("enum"); e != s.end()) {
      bool found = false;
      for (const auto& option : *e) found = found || option == doc;
      if (!found) issue(path, "must be one of " + e->dump() + ", got " + doc.dump());
    }

    if (doc.is_number()) {
      const double v = doc.get<double>();
      if (auto m = s.find("minimum"); m != s.end() && v < m->get<double>())
        issue(path, "must be >= " + number_text(*m));
      if (auto m = s.find("maximum"); m != s.end() && v > m->get<double>())
        issue(path, "must be <= " + number_text(*m));
      if (auto m = s.find("exclusiveMinimum"); m != s.end() && !(v > m->get<double>()))
        issue(path, "must be > " + number_text(*m));
      if (auto m = s.find("exclusiveMaximum"); m != s.end() && !(v < m->get<double>()))
        issue(path, "must be < " + number_text(*m));
    }

    if (doc.is_array()) {
      if (auto m = s.find("minItems"); m != s.end() && doc.size() < m->get<std::size_t>())
        issue(path, "needs at least " + number_text(*m) + " items");
      if (auto m = s.find("maxItems"); m != s.end() && doc.size() > m->get<std::size_t>())
        issue(path, "allows at most " + number_text(*m) + " items");
      if (auto items = s.find("items"); items != s.end())
        for (std::size_t i = 0; i < doc.size(); ++i) check(doc[i], *items, path + "/" + std::to_string(i));
    }

    if (doc.is_object()) {
      if (auto req = s.find("required"); req != s.end())
        for (const auto& key : *req)
          if (!doc.contains(key.get<std::string>()))
            issue(path + "/" + escape_pointer(key.get<std::string>()), "is required");
      const auto props = s.find("properties");
      const auto extra = s.find("additionalProperties");
      for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string child = path + "/" + escape_pointer(it.key());
        if (props != s.end() && props->contains(it.key()))
          check(it.value(), (*props)[it.key()], child);
        else if (extra != s.end() && extra->is_boolean() && !extra->get<bool>())
          issue(child, "is not an allowed property");
      }
    }
  }

  std::vector<ValidationIssue> take() { return std::move(issues_); }

 private:
  void issue(const std::string& path, std::string message) { issues_.push_back({path, std::move(message)}); }

  const json& root_;
  std::vector<ValidationIssue> issues_;
};

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  return obj[key].get<T>();
}

LinearSystem<double> load_system(const json& doc, const fs::path& base_dir) {
  if (!doc.contains("system")) return reference_system();
  const json& s = doc["system"];
  const bool has_preset = s.contains("preset");
  const bool has_file = s.contains("file");
  const bool has_inline = s.contains("A") || s.contains("H") || s.contains("Q") || s.contains("R");
  detail::require(int(has_preset) + int(has_file) + int(has_inline) == 1, ErrorCode::Config,
                  "/system: give exactly one of preset, file, or inline A/H/Q/R");
  if (has_preset) return reference_system();
  if (has_file) {
    fs::path p = s["file"].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    json file_doc;
    try {
      file_doc = json::parse(io::read_file(p));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::Config, "/system/file: " + p.string() + " is not valid JSON: " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, "/system/file: " + std::string(e.what()));
    }
    return io::system_from_json(file_doc);
  }
  return io::system_from_json(s);
}

void load_training(const json& j, TrainingSection& out) {
  auto& t = out.training;
  t.dataset_size = get_or<std::size_t>(j, "dataset_size", t.dataset_size);
  out.test_size = get_or<std::size_t>(j, "test_size", out.test_size);
  t.sequence_length = get_or<Index>(j, "sequence_length", t.sequence_length);
  t.num_epochs = get_or<int>(j, "epochs", t.num_epochs);
  t.batch_size = get_or<std::size_t>(j, "batch_size", t.batch_size);
  t.adam.learning_rate = get_or<double>(j, "learning_rate", t.adam.learning_rate);
  t.adam.beta1 = get_or<double>(j, "beta1", t.adam.beta1);
  t.adam.beta2 = get_or<double>(j, "beta2", t.adam.beta2);
  t.adam.epsilon = get_or<double>(j, "epsilon", t.adam.epsilon);
  t.hidden = get_or<Index>(j, "hidden", t.hidden);
  t.layers = get_or<Index>(j, "layers", t.layers);
  t.clip_norm = get_or<double>(j, "clip_norm", t.clip_norm);
  if (j.is_object() && j.contains("injector")) out.injector = parse_injector(j["injector"]);
}

}  // namespace

std::vector<ValidationIssue> validate(const json& doc, const json& schema) {
  Validator v(schema);
  v.check(doc, schema, "");
  return v.take();
}

std::string_view schema_text() { return generated::kSchemaText; }

const json& schema() {
  static const json parsed = json::parse(generated::kSchemaText);
  return parsed;
}

Injector<double> parse_injector(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "none") return Injector<double>::none();
  if (kind == "nonlinear_square") return Injector<double>::nonlinear_square();
  detail::require(kind == "table", ErrorCode::Config, "unknown injector kind " + kind);
  detail::require(j.contains("table"), ErrorCode::Config, "table injector needs a \"table\" of u_k rows");
  return Injector<double>::from_table(io::matrix_from_json(j["table"], "injector.table").transpose());
}

ExperimentConfig load(const json& doc, const fs::path& base_dir) {
  const auto issues = validate(doc, schema());
  if (!issues.empty()) {
    std::ostringstream os;
    os << "config does not match the schema:";
    for (const auto& i : issues) os << "\n  " << (i.path.empty() ? "(root)" : i.path) << ": " << i.message;
    throw Error(ErrorCode::Config, os.str());
  }

  ExperimentConfig cfg;
  cfg.document = doc;
  cfg.seed = get_or<std::uint64_t>(doc, "seed", 0);
  cfg.threads = get_or<int>(doc, "threads", 1);
  cfg.output_dir = get_or<std::string>(doc, "output_dir", "out");
  cfg.system = load_system(doc, base_dir);

  if (doc.contains("riccati")) {
    const auto& r = doc["riccati"];
    cfg.riccati.tol = get_or<double>(r, "tol", cfg.riccati.tol);
    cfg.riccati.max_iter = get_or<long>(r, "max_iter", cfg.riccati.max_iter);
  }

  if (doc.contains("simulate")) {
    const auto& s = doc["simulate"];
    cfg.simulate.horizon = get_or<Index>(s, "horizon", cfg.simulate.horizon);
    if (s.contains("injector")) cfg.simulate.injector = parse_injector(s["injector"]);
    const std::string init = get_or<std::string>(s, "init", "stationary");
    cfg.simulate.init = init == "zero"           ? InitKind::Zero
                        : init == "filter_prior" ? InitKind::FilterPrior
                                                 : InitKind::Stationary;
    cfg.simulate.burn_in = get_or<int>(s, "burn_in", cfg.simulate.burn_in);
  }

  {
    const json b = doc.contains("bound") ? doc["bound"] : json::object();
    cfg.bound.horizon = get_or<Index>(b, "horizon", cfg.bound.horizon);
    cfg.bound.realizations = get_or<std::size_t>(b, "realizations", cfg.bound.realizations);
    cfg.bound.relative_to_trace_q = get_or<bool>(b, "relative_to_trace_q", cfg.bound.relative_to_trace_q);
    if (b.contains("gamma_grid")) {
      cfg.bound.gamma_grid = b["gamma_grid"].get<std::vector<double>>();
    } else {
      for (int i = 0; i <= 20; ++i) cfg.bound.gamma_grid.push_back(0.025 * i);
      cfg.bound.relative_to_trace_q = true;
    }
    for (std::size_t i = 1; i < cfg.bound.gamma_grid.size(); ++i)
      detail::require(cfg.bound.gamma_grid[i] > cfg.bound.gamma_grid[i - 1], ErrorCode::Config,
                      "/bound/gamma_grid/" + std::to_string(i) + ": grid must be strictly ascending");
  }

  if (doc.contains("train")) load_training(doc["train"], cfg.train);

  if (doc.contains("evaluate")) {
    const auto& e = doc["evaluate"];
    if (e.contains("params")) {
      fs::path p = e["params"].get<std::string>();
      cfg.evaluate.params = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    cfg.evaluate.test_size = get_or<std::size_t>(e, "test_size", cfg.evaluate.test_size);
    cfg.evaluate.horizon = get_or<Index>(e, "horizon", cfg.evaluate.horizon);
    if (e.contains("injector")) cfg.evaluate.injector = parse_injector(e["injector"]);
  }

  if (doc.contains("table1")) {
    const auto& t = doc["table1"];
    cfg.table1.gamma_samples = get_or<std::size_t>(t, "gamma_samples", cfg.table1.gamma_samples);
    cfg.table1.eval_sequences = get_or<std::size_t>(t, "eval_sequences", cfg.table1.eval_sequences);
    cfg.table1.horizon = get_or<Index>(t, "horizon", cfg.table1.horizon);
    if (t.contains("training")) load_training(t["training"], cfg.table1.training);
  }
  cfg.table1.training.training.sequence_length = cfg.table1.horizon;
  return cfg;
}

json fig2_preset() {
  json grid = json::array();
  for (int i = 0; i <= 20; ++i) grid.push_back(0.025 * i);
  return {{"seed", 2},
          {"system", {{"preset", "reference"}}},
          {"bound", {{"horizon", 50}, {"realizations", 2000}, {"gamma_grid", grid}, {"relative_to_trace_q", true}}}};
}

json table1_preset() {
  return {{"seed", 1},
          {"system", {{"preset", "reference"}}},
          {"table1",
           {{"gamma_samples", 100000},
            {"eval_sequences", 10000},
            {"horizon", 100},
            {"training",
             {{"dataset_size", 4000},
              {"test_size", 1000},
              {"epochs", 80},
              {"batch_size", 320},
              {"learning_rate", 1e-3},
              {"hidden", 10},
              {"layers", 2},
              {"clip_norm", 10.0},
              {"injector", {{"kind", "nonlinear_square"}}}}}}}};
}

}  // namespace causalest::config
