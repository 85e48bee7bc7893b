#include "edm2d/app/commands.hpp"

#include "edm2d/checkpoint.hpp"
#include "edm2d/diagnostics.hpp"
#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>

namespace edm2d::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Purposes for the sequential data draws made outside training.
constexpr std::uint64_t kDataDraw = 0xDA7A;
constexpr std::uint64_t kReferenceDraw = 0xE7A1;
constexpr std::uint64_t kSigmaDataDraw = 0x5D;

Tensor draw_data(const RunConfig& c, Eigen::Index n, std::uint64_t purpose) {
  Rng rng(derive_seed(c.seed, purpose));
  return sample(c.dataset, n, rng);
}

DataSource data_source(const DatasetSpec& spec) {
  return [spec](Eigen::Index n, Rng& rng) { return sample(spec, n, rng); };
}

SineMlp config_net(const RunConfig& c) { return SineMlp(2, c.model.hidden, c.model.omega0); }

TrainConfig train_config(const RunConfig& c, LossKind kind) {
  TrainConfig t = c.train;
  t.seed = c.seed;
  t.workers = c.workers;
  t.loss_kind = kind;
  return t;
}

fs::path relative(const RunDir& dir, const fs::path& p) { return p.lexically_relative(dir.path()); }

struct TrainJob {
  LossKind loss;
  ModelKind kind;
  std::string stem;  // checkpoint and trace file names
  SineMlp net;
  double sigma_data;
  std::vector<double> init;
  const DiffusionField* teacher = nullptr;
};

CommandOutput run_training(const RunConfig& c, const TrainJob& job) {
  const RunDir dir = run_dir(c);
  dir.create();
  CommandOutput out;
  const TrainConfig t = train_config(c, job.loss);
  const TrainProblem problem{job.net, job.sigma_data, [&] {
                               NoiseSchedule s = c.schedule;
                               s.sigma_data = job.sigma_data;
                               return s;
                             }(),
                             data_source(c.dataset), job.teacher};
  const auto hook = [&](int iter, std::span<const double> ema) {
    const fs::path p = dir.checkpoints() / (job.stem + "_iter" + std::to_string(iter) + ".ckpt");
    make_checkpoint(job.kind, job.net, job.sigma_data, {ema.begin(), ema.end()}).save(p);
    out.files.push_back(relative(dir, p));
  };
  const TrainOutcome result = train(t, problem, job.init, hook);
  const fs::path ckpt = dir.checkpoints() / (job.stem + ".ckpt");
  make_checkpoint(job.kind, job.net, job.sigma_data, result.ema).save(ckpt);
  const fs::path trace = dir.traces() / (job.stem + "_trace.csv");
  result.trace.save(trace);
  out.files.push_back(relative(dir, ckpt));
  out.files.push_back(relative(dir, trace));
  return out;
}

// Keeps records up to and including `last_iter`.
LossTrace truncate(const LossTrace& trace, std::int64_t last_iter) {
  LossTrace out;
  for (const auto& r : trace.records()) {
    if (r.iter <= last_iter) out.append(r);
  }
  return out;
}

std::int64_t last_iter(const LossTrace& trace) {
  std::int64_t m = 0;
  for (const auto& r : trace.records()) m = std::max(m, r.iter);
  return m;
}

/// Common iterations of two traces, compared bucket by bucket.
std::vector<BucketVariance> paired_report(const LossTrace& a, const LossTrace& b) {
  const std::int64_t n = std::min(last_iter(a), last_iter(b));
  return loss_variance_report(truncate(a, n), truncate(b, n));
}

using FieldPtr = std::unique_ptr<DiffusionField>;

FieldPtr load_field(const fs::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.kind == ModelKind::Teacher) return std::make_unique<TeacherModel>(ck.teacher());
  return std::make_unique<EnergyModel>(ck.energy());
}

AnalyticGMM require_oracle(const DatasetSpec& spec) {
  auto o = analytic_oracle(spec);
  if (!o) throw ConfigError("dataset " + to_string(spec.kind) + " has no analytic model");
  return *o;
}

/// Checkpoints from the command line, or the dataset's analytic model(s). A
/// composition pair with pair_member 0 yields both factors.
std::vector<FieldPtr> input_fields(const RunConfig& c, const CommandInputs& in) {
  std::vector<FieldPtr> out;
  if (in.oracle && !in.checkpoints.empty()) throw ConfigError("use either --checkpoint or --oracle, not both");
  if (in.oracle) {
    if (c.dataset.kind == DatasetKind::CompositionPair && c.dataset.pair_member == 0) {
      auto [a, b] = composition_pair(c.dataset.pair_layout);
      out.push_back(std::make_unique<AnalyticGMM>(std::move(a)));
      out.push_back(std::make_unique<AnalyticGMM>(std::move(b)));
    } else {
      out.push_back(std::make_unique<AnalyticGMM>(require_oracle(c.dataset)));
    }
    return out;
  }
  if (in.checkpoints.empty()) throw ConfigError("this command needs --checkpoint or --oracle");
  for (const auto& p : in.checkpoints) out.push_back(load_field(p));
  return out;
}

std::vector<const DiffusionField*> raw(const std::vector<FieldPtr>& fields) {
  std::vector<const DiffusionField*> out;
  for (const auto& f : fields) out.push_back(f.get());
  return out;
}

ScoreFn proposal_for(const std::vector<const DiffusionField*>& models) {
  return models.size() == 1 ? score_of(*models[0]) : composed_score(models);
}

GridSpec eval_grid(const RunConfig& c) {
  if (c.eval.grid) return *c.eval.grid;
  return grid_for(draw_data(c, std::max<Eigen::Index>(c.eval.n_reference, 2), kReferenceDraw));
}

/// exp(log_density) rescaled so that the lattice Riemann sum is 1.
DensityGrid normalized_density(const PointFn& log_density, const GridSpec& spec) {
  DensityGrid g = evaluate_grid(log_density, spec);
  const double m = g.values.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("density grid has no finite mass");
  g.values = (g.values.array() - m).exp();
  g.values /= g.values.sum() * spec.x_step() * spec.y_step();
  return g;
}

std::vector<double> rmse_sigmas() {
  std::vector<double> s;
  for (int i = 0; i < 8; ++i) s.push_back(0.1 * std::pow(20.0, i / 7.0));
  return s;
}

json moments_json(const Moments& m) {
  json cov = json::array();
  for (Eigen::Index i = 0; i < m.cov.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cov.cols(); ++k) row.push_back(m.cov(i, k));
    cov.push_back(row);
  }
  return {{"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())}, {"cov", cov}};
}

void save_samples(const fs::path& path, const Tensor& x) { io::write_samples_csv(path, x); }

}  // namespace

void RunDir::create() const {
  for (const auto& d : {checkpoints(), traces(), samples(), grids(), reports()}) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
  }
}

fs::path output_root(const RunConfig& config) {
  if (config.output_dir) return *config.output_dir;
  if (const char* env = std::getenv("EDM2D_OUTPUT_DIR"); env && *env) return env;
  return "runs";
}

RunDir run_dir(const RunConfig& config) { return RunDir(output_root(config) / config.run_name); }

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void record_manifest(const RunDir& dir, const std::string& command, const RunConfig& config,
                     const std::vector<fs::path>& outputs) {
  json m = json::object();
  if (fs::exists(dir.manifest())) {
    try {
      m = json::parse(io::read_file(dir.manifest()));
    } catch (const json::exception& e) {
      throw IoError("malformed manifest " + dir.manifest().string() + ": " + e.what());
    }
  }
  json files = json::array();
  for (const auto& p : outputs) files.push_back(p.generic_string());
  m["run_name"] = config.run_name;
  m["commands"][command] = {{"outputs", files}, {"seed", config.seed}, {"config_hash", config_hash(config)}};
  io::write_atomic(dir.manifest(), m.dump(2) + "\n");
}

double resolve_sigma_data(const RunConfig& config) {
  if (config.sigma_data_given) return config.schedule.sigma_data;
  return estimate_sigma_data(draw_data(config, 10000, kSigmaDataDraw));
}

CommandOutput cmd_train_teacher(const RunConfig& c) {
  const SineMlp net = config_net(c);
  Rng rng = init_rng(c.seed);
  return run_training(c, TrainJob{LossKind::Dsm, ModelKind::Teacher, "teacher", net, resolve_sigma_data(c),
                                  net.initialize(rng)});
}

CommandOutput cmd_train_edsm(const RunConfig& config) {
  RunConfig c = config;
  if (!c.train.grad_clip_norm) c.train.grad_clip_norm = 10.0;
  const SineMlp net = config_net(c);
  Rng rng = init_rng(c.seed);
  return run_training(c, TrainJob{LossKind::Edsm, ModelKind::Energy, "energy_edsm", net, resolve_sigma_data(c),
                                  net.initialize(rng)});
}

CommandOutput cmd_distill(const RunConfig& c, const CommandInputs& in) {
  if (!in.teacher) throw ConfigError("distill needs --teacher");
  const Checkpoint ck = Checkpoint::load(*in.teacher);
  const TeacherModel teacher = ck.teacher();
  if (!teacher.net().same_layout(config_net(c))) {
    throw ConfigError("teacher layout does not match the configured model");
  }
  const EnergyModel student = init_from_teacher(teacher);
  const LossKind loss = c.distill_on_score ? LossKind::DistillScore : LossKind::DistillDenoiser;
  CommandOutput out = run_training(
      c, TrainJob{loss, ModelKind::Energy, "energy_distill", student.net(), teacher.sigma_data(), student.params(),
                  &teacher});
  const RunDir dir = run_dir(c);
  const fs::path edsm = dir.traces() / "energy_edsm_trace.csv";
  if (fs::exists(edsm)) {
    const auto rows =
        paired_report(LossTrace::load(edsm), LossTrace::load(dir.traces() / "energy_distill_trace.csv"));
    const fs::path p = dir.reports() / "loss_variance.csv";
    io::write_atomic(p, variance_report_csv(rows));
    out.files.push_back(relative(dir, p));
  }
  return out;
}

CommandOutput cmd_sample(const RunConfig& c, const CommandInputs& in) {
  const auto fields = input_fields(c, in);
  const auto models = raw(fields);
  const Eigen::Index n = c.sampler.n_samples;
  const Tensor x = n == 0 ? Tensor(0, 2) : generate(proposal_for(models), c.step_plan(), n, 2, c.seed);
  const RunDir dir = run_dir(c);
  dir.create();
  const fs::path p = dir.samples() / "samples.csv";
  save_samples(p, x);
  return {{relative(dir, p)}};
}

CommandOutput cmd_smc(const RunConfig& c, const CommandInputs& in) {
  const auto fields = input_fields(c, in);
  const auto models = raw(fields);
  const PotentialSpec spec = c.potential_spec();
  if (spec.kind == PotentialKind::CompositionProduct && models.size() < 2) {
    throw ConfigError("composition_product needs at least two models");
  }
  if (spec.kind != PotentialKind::CompositionProduct && models.size() != 1) {
    throw ConfigError("potential " + to_string(spec.kind) + " takes exactly one model");
  }
  const SmcResult r = smc_run(proposal_for(models), models, spec, c.smc_config());
  const RunDir dir = run_dir(c);
  dir.create();
  const fs::path report = dir.reports() / "smc_report.csv";
  io::write_atomic(report, smc_report_csv(r.report));
  if (r.collapsed) throw NumericError("smc: every particle was killed; see " + report.string());
  const fs::path p = dir.samples() / "smc_samples.csv";
  save_samples(p, r.positions);
  return {{relative(dir, p), relative(dir, report)}};
}

CommandOutput cmd_diagnose(const RunConfig& c, const CommandInputs& in) {
  if (in.checkpoints.size() != 1 || in.oracle) throw ConfigError("diagnose needs exactly one --checkpoint");
  const Checkpoint ck = Checkpoint::load(in.checkpoints.front());
  std::vector<double> sigmas = c.diagnose.sigmas;
  if (sigmas.empty()) {
    for (double s : sigma_grid(c.schedule)) {
      if (s > 0.0) sigmas.push_back(s);
    }
  }
  const Tensor data = draw_data(c, std::max<Eigen::Index>(c.diagnose.n_points, 1), kDataDraw);
  const auto points = [&](std::size_t i) {
    return perturbed_points(data, sigmas[i], c.diagnose.n_points, c.seed, i);
  };
  std::vector<AsymmetryRow> rows;
  if (ck.kind == ModelKind::Teacher) {
    const TeacherModel m = ck.teacher();
    rows = asymmetry_sweep(score_field(m), sigmas, points, c.diagnose.n_probes, c.seed);
  } else {
    const EnergyModel m = ck.energy();
    rows = asymmetry_sweep(score_field(m), sigmas, points, c.diagnose.n_probes, c.seed);
  }
  const RunDir dir = run_dir(c);
  dir.create();
  const fs::path p = dir.reports() / ("asymmetry_" + in.checkpoints.front().stem().string() + ".csv");
  io::write_atomic(p, asymmetry_csv(rows));
  return {{relative(dir, p)}};
}

CommandOutput cmd_eval(const RunConfig& c, const CommandInputs& in) {
  const RunDir dir = run_dir(c);
  dir.create();
  CommandOutput out;
  json report = json::object();
  const std::optional<AnalyticGMM> oracle = analytic_oracle(c.dataset);

  std::optional<fs::path> samples_path = in.samples;
  if (!samples_path && fs::exists(dir.samples() / "samples.csv")) samples_path = dir.samples() / "samples.csv";
  if (samples_path) {
    const Tensor x = io::read_samples_csv(*samples_path);
    const Tensor ref = draw_data(c, c.eval.n_reference, kReferenceDraw);
    json s = {{"path", samples_path->generic_string()}, {"count", x.rows()}};
    if (x.rows() >= 2) {
      s["sliced_w1"] = sliced_w1(x, ref, c.eval.n_projections, c.seed);
      s["moments"] = moments_json(moments(x));
      s["reference_moments"] = moments_json(moments(ref));
    }
    report["samples"] = s;
  }

  if (!in.checkpoints.empty()) {
    const GridSpec grid = eval_grid(c);
    json models = json::object();
    for (const auto& path : in.checkpoints) {
      const Checkpoint ck = Checkpoint::load(path);
      const FieldPtr field = load_field(path);
      const std::string stem = path.stem().string();
      json m = {{"kind", ck.kind == ModelKind::Teacher ? "teacher" : "energy"}};
      if (oracle) {
        json per = json::array();
        double worst = 0.0;
        for (double s : rmse_sigmas()) {
          const double e = score_rmse(*field, *oracle, s, grid);
          worst = std::max(worst, e);
          per.push_back({{"sigma", s}, {"rmse", e}});
        }
        m["score_rmse"] = per;
        m["score_rmse_max"] = worst;
      }
      if (ck.kind == ModelKind::Energy) {
        const EnergyModel em = ck.energy();
        const double sigma = c.eval.sigma;
        const PointFn neg_energy = [&](const Tensor& x) -> Vector { return -em.energy(x, sigma); };
        const fs::path p = dir.grids() / (stem + "_density.csv");
        export_density_grid(normalized_density(neg_energy, grid), p);
        out.files.push_back(relative(dir, p));
        if (oracle) {
          const PointFn energy = [&](const Tensor& x) -> Vector { return em.energy(x, sigma); };
          const PointFn log_p = [&](const Tensor& x) { return oracle->perturbed_log_density(x, sigma); };
          m["grid_tv"] = grid_tv(energy, log_p, grid);
          m["grid_tv_sigma"] = sigma;
        }
      }
      models[stem] = m;
    }
    report["models"] = models;
  }

  if (in.trace_a || in.trace_b) {
    if (!in.trace_a || !in.trace_b) throw ConfigError("eval needs both --trace-a and --trace-b");
    const auto rows = paired_report(LossTrace::load(*in.trace_a), LossTrace::load(*in.trace_b));
    const fs::path p = dir.reports() / "loss_variance.csv";
    io::write_atomic(p, variance_report_csv(rows));
    out.files.push_back(relative(dir, p));
    json v = json::array();
    for (const auto& r : rows) {
      v.push_back({{"sigma_bucket", r.sigma_bucket}, {"var_a", r.var_a}, {"var_b", r.var_b}, {"ratio", r.ratio}});
    }
    report["loss_variance"] = v;
  }

  if (report.empty()) throw ConfigError("eval: nothing to evaluate (give --samples, --checkpoint or traces)");
  const fs::path p = dir.reports() / "eval.json";
  io::write_atomic(p, report.dump(2) + "\n");
  out.files.push_back(relative(dir, p));
  return out;
}

CommandOutput cmd_make_data(const RunConfig& c) {
  const RunDir dir = run_dir(c);
  dir.create();
  CommandOutput out;
  const fs::path p = dir.samples() / "data.csv";
  save_samples(p, draw_data(c, c.data_samples, kDataDraw));
  out.files.push_back(relative(dir, p));
  if (const auto oracle = analytic_oracle(c.dataset)) {
    const double sigma = c.eval.sigma;
    const PointFn log_p = [&](const Tensor& x) { return oracle->perturbed_log_density(x, sigma); };
    const fs::path g = dir.grids() / "oracle_density.csv";
    export_density_grid(normalized_density(log_p, eval_grid(c)), g);
    out.files.push_back(relative(dir, g));
  }
  return out;
}

CommandOutput run_command(const std::string& name, const RunConfig& config, const CommandInputs& inputs) {
  CommandOutput out;
  if (name == "train-teacher") {
    out = cmd_train_teacher(config);
  } else if (name == "train-edsm") {
    out = cmd_train_edsm(config);
  } else if (name == "distill") {
    out = cmd_distill(config, inputs);
  } else if (name == "sample") {
    out = cmd_sample(config, inputs);
  } else if (name == "smc") {
    out = cmd_smc(config, inputs);
  } else if (name == "diagnose") {
    out = cmd_diagnose(config, inputs);
  } else if (name == "eval") {
    out = cmd_eval(config, inputs);
  } else if (name == "make-data") {
    out = cmd_make_data(config);
  } else {
    throw ConfigError("unknown command " + name);
  }
  record_manifest(run_dir(config), name, config, out.files);
  return out;
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error)) return 2;
  if (dynamic_cast<const NumericError*>(&error)) return 3;
  if (dynamic_cast<const IoError*>(&error) || dynamic_cast<const fs::filesystem_error*>(&error)) return 4;
  return 1;
}

}  // namespace edm2d::app
