#include "edm2d/app/config.hpp"

#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <set>

namespace edm2d::app {

using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be reported as a typo.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  void read(const char* key, double& out) { read_with(key, [&](const json& v) { out = number(v, key); }); }

  void read(const char* key, int& out) {
    read_with(key, [&](const json& v) {
      if (!v.is_number_integer()) fail(key, "an integer");
      const auto x = v.get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(key, "a 32-bit integer");
      out = static_cast<int>(x);
    });
  }

  void read(const char* key, long& out) {
    read_with(key, [&](const json& v) {
      if (!v.is_number_integer()) fail(key, "an integer");
      out = v.get<long>();
    });
  }

  void read(const char* key, std::uint64_t& out) {
    read_with(key, [&](const json& v) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        fail(key, "a non-negative integer");
      }
      out = v.get<std::uint64_t>();
    });
  }

  void read(const char* key, bool& out) {
    read_with(key, [&](const json& v) {
      if (!v.is_boolean()) fail(key, "a boolean");
      out = v.get<bool>();
    });
  }

  void read(const char* key, std::string& out) {
    read_with(key, [&](const json& v) {
      if (!v.is_string()) fail(key, "a string");
      out = v.get<std::string>();
    });
  }

  void read(const char* key, std::vector<double>& out) {
    read_with(key, [&](const json& v) {
      if (!v.is_array()) fail(key, "an array of numbers");
      out.clear();
      for (const auto& e : v) out.push_back(number(e, key));
    });
  }

  void read(const char* key, std::vector<int>& out) {
    read_with(key, [&](const json& v) {
      if (!v.is_array()) fail(key, "an array of integers");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_number_integer()) fail(key, "an array of integers");
        out.push_back(e.get<int>());
      }
    });
  }

  template <typename T>
  void read(const char* key, std::optional<T>& out) {
    if (has(key) && j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    T value = out.value_or(T{});
    if (has(key)) {
      read(key, value);
      out = value;
    }
  }

  /// Parses a string field with `parse` when present.
  template <typename Enum, typename Parse>
  void read_enum(const char* key, Enum& out, Parse parse) {
    std::string name;
    if (!has(key)) return;
    read(key, name);
    out = parse(name);
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + path_ + "." + key);
    }
  }

  std::string where() const { return path_; }

 private:
  template <typename F>
  void read_with(const char* key, F f) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    f(j_.at(key));
  }

  // Numbers, plus "inf" / "-inf" strings since JSON has no infinity.
  double number(const json& v, const char* key) const {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "+inf") return kInf;
      if (s == "-inf") return -kInf;
    }
    fail(key, "a number");
    return 0.0;
  }

  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError(path_ + "." + key + " must be " + what);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Eigen::MatrixXd matrix_from(const json& rows, const std::string& where) {
  if (!rows.is_array() || rows.empty()) throw ConfigError(where + " must be a square array of arrays");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) throw ConfigError(where + " must be square");
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& e = row[static_cast<std::size_t>(j)];
      if (!e.is_number()) throw ConfigError(where + " entries must be numbers");
      m(i, j) = e.get<double>();
    }
  }
  return m;
}

void read_dataset(Section s, DatasetSpec& d) {
  s.read_enum("kind", d.kind, parse_dataset_kind);
  if (s.has("components")) {
    const json& comps = s.raw("components");
    if (!comps.is_array()) throw ConfigError("dataset.components must be an array");
    d.components.clear();
    for (std::size_t k = 0; k < comps.size(); ++k) {
      Section c(comps[k], "dataset.components[" + std::to_string(k) + "]");
      GaussianComponent g{1.0, Vector(), Eigen::MatrixXd()};
      c.read("weight", g.weight);
      std::vector<double> mean;
      c.read("mean", mean);
      if (mean.size() != 2) throw ConfigError(c.where() + ".mean must have two entries");
      g.mean = Eigen::Map<const Vector>(mean.data(), 2);
      if (!c.has("cov")) throw ConfigError(c.where() + ".cov is required");
      g.cov = matrix_from(c.raw("cov"), c.where() + ".cov");
      if (g.cov.rows() != 2) throw ConfigError(c.where() + ".cov must be 2 x 2");
      c.finish();
      d.components.push_back(std::move(g));
    }
  }
  s.read("tree_depth", d.tree_depth);
  s.read("branch_angle_deg", d.branch_angle_deg);
  s.read("length_decay", d.length_decay);
  s.read("components_per_branch", d.components_per_branch);
  s.read("spiral_turns", d.spiral_turns);
  s.read("spiral_r_min", d.spiral_r_min);
  s.read("spiral_r_max", d.spiral_r_max);
  s.read("spiral_noise", d.spiral_noise);
  s.read_enum("pair_layout", d.pair_layout, parse_pair_layout);
  s.read("pair_member", d.pair_member);
  s.finish();
}

void read_schedule(Section s, RunConfig& c) {
  s.read("sigma_min", c.schedule.sigma_min);
  s.read("sigma_max", c.schedule.sigma_max);
  if (s.has("sigma_data") && !s.raw("sigma_data").is_null()) {
    s.read("sigma_data", c.schedule.sigma_data);
    c.sigma_data_given = true;
  } else if (s.has("sigma_data")) {
    s.raw("sigma_data");
  }
  s.read("n_steps", c.schedule.n_steps);
  s.read("rho", c.schedule.rho);
  s.finish();
}

void read_train(Section s, RunConfig& c) {
  TrainConfig& t = c.train;
  s.read("batch_size", t.batch_size);
  s.read("n_iters", t.n_iters);
  s.read("learning_rate", t.learning_rate);
  s.read("warmup_iters", t.warmup_iters);
  s.read("ema_rate", t.ema_rate);
  s.read("grad_clip_norm", t.grad_clip_norm);
  s.read("adam_beta1", t.adam_beta1);
  s.read("adam_beta2", t.adam_beta2);
  s.read("adam_eps", t.adam_eps);
  s.read("checkpoint_every", t.checkpoint_every);
  std::string distill = c.distill_on_score ? "score" : "denoiser";
  s.read("distill_loss", distill);
  if (distill != "score" && distill != "denoiser") throw ConfigError("train.distill_loss must be denoiser or score");
  c.distill_on_score = distill == "score";
  s.finish();
}

void read_sampler(Section s, SamplerSection& p) {
  s.read_enum("solver", p.solver, parse_solver);
  s.read("lambda", p.lambda);
  s.read("n_samples", p.n_samples);
  s.finish();
}

void read_smc(Section s, SmcSection& m) {
  s.read_enum("potential", m.potential, parse_potential_kind);
  if (s.has("gamma_schedule") && !s.raw("gamma_schedule").is_null()) {
    std::string shape;
    s.read("gamma_schedule", shape);
    if (shape == "constant") {
      m.gamma_shape = GammaShape::Constant;
    } else if (shape == "linear") {
      m.gamma_shape = GammaShape::Linear;
    } else {
      throw ConfigError("smc.gamma_schedule must be constant or linear");
    }
  }
  s.read("gamma", m.gamma);
  s.read("gamma_start", m.gamma_start);
  s.read_enum("temperature_variant", m.temperature_variant, parse_temperature_variant);
  s.read_enum("composition_variant", m.composition_variant, parse_composition_variant);
  s.read("kernel_correction", m.kernel_correction);
  if (s.has("box")) {
    Section b = s.child("box");
    b.read("lower", m.box.lower);
    b.read("upper", m.box.upper);
    b.finish();
  }
  s.read("delta", m.delta);
  s.read("resample_floor_sigma", m.resample_floor_sigma);
  s.read("energy_sigma_floor", m.energy_sigma_floor);
  s.read("n_particles", m.n_particles);
  s.read("tau", m.tau);
  s.finish();
}

void read_diagnose(Section s, DiagnoseSection& d) {
  s.read("sigmas", d.sigmas);
  s.read("n_points", d.n_points);
  s.read("n_probes", d.n_probes);
  s.finish();
}

void read_eval(Section s, EvalSection& e) {
  if (s.has("grid") && !s.raw("grid").is_null()) {
    Section g = s.child("grid");
    GridSpec spec;
    g.read("x_min", spec.x_min);
    g.read("x_max", spec.x_max);
    g.read("y_min", spec.y_min);
    g.read("y_max", spec.y_max);
    g.read("resolution", spec.resolution);
    g.finish();
    e.grid = spec;
  }
  s.read("sigma", e.sigma);
  s.read("n_projections", e.n_projections);
  s.read("n_reference", e.n_reference);
  s.finish();
}

json bound_json(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return json(v);
}

}  // namespace

void RunConfig::validate() const {
  if (run_name.empty() || run_name.find_first_of("/\\") != std::string::npos || run_name == "." || run_name == "..") {
    throw ConfigError("run_name must be a plain directory name");
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (data_samples < 0) throw ConfigError("data_samples must be >= 0");
  dataset.validate();
  (void)analytic_oracle(dataset);  // surfaces bad weights or covariances at load time
  schedule.validate();
  if (model.hidden.empty()) throw ConfigError("model.hidden must list at least one width");
  for (int w : model.hidden) {
    if (w < 1) throw ConfigError("model.hidden widths must be >= 1");
  }
  if (!(model.omega0 > 0.0)) throw ConfigError("model.omega0 must be > 0");
  train.validate();
  step_plan().validate();
  if (sampler.n_samples < 0) throw ConfigError("sampler.n_samples must be >= 0");
  smc_config().validate();
  potential_spec().validate(sigma_grid(schedule).size(), 2);
  for (double s : diagnose.sigmas) {
    if (!(s > 0.0)) throw ConfigError("diagnose.sigmas must be > 0");
  }
  if (diagnose.n_points < 1 || diagnose.n_probes < 1) throw ConfigError("diagnose needs n_points, n_probes >= 1");
  if (eval.grid) eval.grid->validate();
  if (!(eval.sigma >= 0.0)) throw ConfigError("eval.sigma must be >= 0");
  if (eval.n_projections < 1) throw ConfigError("eval.n_projections must be >= 1");
  if (eval.n_reference < 2) throw ConfigError("eval.n_reference must be >= 2");
}

StepPlan RunConfig::step_plan() const { return StepPlan{sigma_grid(schedule), sampler.lambda, sampler.solver}; }

PotentialSpec RunConfig::potential_spec() const {
  PotentialSpec p;
  p.kind = smc.potential;
  const std::size_t levels = sigma_grid(schedule).size();
  const GammaShape shape = smc.gamma_shape.value_or(
      smc.potential == PotentialKind::CompositionProduct ? GammaShape::Linear : GammaShape::Constant);
  p.gamma = shape == GammaShape::Constant ? constant_gamma_schedule(levels, smc.gamma)
                                          : linear_gamma_schedule(levels, smc.gamma_start, smc.gamma);
  p.temperature_variant = smc.temperature_variant;
  p.composition_variant = smc.composition_variant;
  p.kernel_correction = smc.kernel_correction;
  p.box = smc.box;
  p.delta = smc.delta;
  p.resample_floor_sigma = smc.resample_floor_sigma.value_or(
      smc.potential == PotentialKind::CompositionProduct ? 0.1 * schedule.sigma_data : 0.0);
  p.energy_sigma_floor = smc.energy_sigma_floor;
  return p;
}

SmcConfig RunConfig::smc_config() const {
  SmcConfig c;
  c.sigmas = sigma_grid(schedule);
  c.n_particles = smc.n_particles;
  c.tau = smc.tau;
  c.seed = seed;
  c.dim = 2;
  return c;
}

RunConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    Section s(doc, "config");
    s.read("run_name", c.run_name);
    s.read("seed", c.seed);
    std::optional<std::string> out;
    s.read("output_dir", out);
    if (out) c.output_dir = *out;
    s.read("workers", c.workers);
    s.read("data_samples", c.data_samples);
    if (s.has("dataset")) read_dataset(s.child("dataset"), c.dataset);
    if (s.has("schedule")) read_schedule(s.child("schedule"), c);
    if (s.has("model")) {
      Section m = s.child("model");
      m.read("hidden", c.model.hidden);
      m.read("omega0", c.model.omega0);
      m.finish();
    }
    if (s.has("train")) read_train(s.child("train"), c);
    if (s.has("sampler")) read_sampler(s.child("sampler"), c.sampler);
    if (s.has("smc")) read_smc(s.child("smc"), c.smc);
    if (s.has("diagnose")) read_diagnose(s.child("diagnose"), c.diagnose);
    if (s.has("eval")) read_eval(s.child("eval"), c.eval);
    s.finish();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.train.seed = c.seed;
  c.train.workers = c.workers;
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_file(path)); }

std::string config_to_json(const RunConfig& c) {
  json j;
  j["run_name"] = c.run_name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir ? json(c.output_dir->string()) : json(nullptr);
  j["workers"] = c.workers;
  j["data_samples"] = c.data_samples;

  json d;
  d["kind"] = to_string(c.dataset.kind);
  json comps = json::array();
  for (const auto& g : c.dataset.components) {
    json cov = json::array();
    for (Eigen::Index i = 0; i < g.cov.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index k = 0; k < g.cov.cols(); ++k) row.push_back(g.cov(i, k));
      cov.push_back(row);
    }
    comps.push_back({{"weight", g.weight}, {"mean", std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size())},
                     {"cov", cov}});
  }
  d["components"] = comps;
  d["tree_depth"] = c.dataset.tree_depth;
  d["branch_angle_deg"] = c.dataset.branch_angle_deg;
  d["length_decay"] = c.dataset.length_decay;
  d["components_per_branch"] = c.dataset.components_per_branch;
  d["spiral_turns"] = c.dataset.spiral_turns;
  d["spiral_r_min"] = c.dataset.spiral_r_min;
  d["spiral_r_max"] = c.dataset.spiral_r_max;
  d["spiral_noise"] = c.dataset.spiral_noise;
  d["pair_layout"] = to_string(c.dataset.pair_layout);
  d["pair_member"] = c.dataset.pair_member;
  j["dataset"] = d;

  j["schedule"] = {{"sigma_min", c.schedule.sigma_min},
                   {"sigma_max", c.schedule.sigma_max},
                   {"sigma_data", c.sigma_data_given ? json(c.schedule.sigma_data) : json(nullptr)},
                   {"n_steps", c.schedule.n_steps},
                   {"rho", c.schedule.rho}};
  j["model"] = {{"hidden", c.model.hidden}, {"omega0", c.model.omega0}};

  const TrainConfig& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"n_iters", t.n_iters},
                {"learning_rate", t.learning_rate},
                {"warmup_iters", t.warmup_iters},
                {"ema_rate", t.ema_rate},
                {"grad_clip_norm", t.grad_clip_norm ? json(*t.grad_clip_norm) : json(nullptr)},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"checkpoint_every", t.checkpoint_every},
                {"distill_loss", c.distill_on_score ? "score" : "denoiser"}};
  j["sampler"] = {{"solver", to_string(c.sampler.solver)},
                  {"lambda", c.sampler.lambda},
                  {"n_samples", c.sampler.n_samples}};

  const SmcSection& m = c.smc;
  json lower = json::array(), upper = json::array();
  for (double v : m.box.lower) lower.push_back(bound_json(v));
  for (double v : m.box.upper) upper.push_back(bound_json(v));
  j["smc"] = {{"potential", to_string(m.potential)},
              {"gamma_schedule", !m.gamma_shape                               ? json(nullptr)
                                 : *m.gamma_shape == GammaShape::Constant ? json("constant")
                                                                          : json("linear")},
              {"gamma", m.gamma},
              {"gamma_start", m.gamma_start},
              {"temperature_variant", to_string(m.temperature_variant)},
              {"composition_variant", to_string(m.composition_variant)},
              {"kernel_correction", m.kernel_correction},
              {"box", {{"lower", lower}, {"upper", upper}}},
              {"delta", m.delta},
              {"resample_floor_sigma", m.resample_floor_sigma ? json(*m.resample_floor_sigma) : json(nullptr)},
              {"energy_sigma_floor", m.energy_sigma_floor},
              {"n_particles", m.n_particles},
              {"tau", m.tau}};
  j["diagnose"] = {{"sigmas", c.diagnose.sigmas},
                   {"n_points", c.diagnose.n_points},
                   {"n_probes", c.diagnose.n_probes}};
  json grid = nullptr;
  if (c.eval.grid) {
    grid = {{"x_min", c.eval.grid->x_min},
            {"x_max", c.eval.grid->x_max},
            {"y_min", c.eval.grid->y_min},
            {"y_max", c.eval.grid->y_max},
            {"resolution", c.eval.grid->resolution}};
  }
  j["eval"] = {{"grid", grid},
               {"sigma", c.eval.sigma},
               {"n_projections", c.eval.n_projections},
               {"n_reference", c.eval.n_reference}};
  return j.dump(2) + "\n";
}

}  // namespace edm2d::app
