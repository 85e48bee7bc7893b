// edm2d: training, sampling, SMC control and diagnostics for 2D diffusion models.
#include "edm2d/app/commands.hpp"
#include "edm2d/app/figspec.hpp"
#include "edm2d/errors.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace edm2d;
using namespace edm2d::app;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> run_name;
  std::optional<std::string> output_dir;
  std::optional<int> workers;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("-c,--config", o.config, "JSON run configuration")->required();
  sub->add_option("--seed", o.seed, "Override the config seed");
  sub->add_option("--run-name", o.run_name, "Override the run name");
  sub->add_option("--output-dir", o.output_dir, "Override the output root");
  sub->add_option("--workers", o.workers, "Override the worker count");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.run_name) c.run_name = *o.run_name;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.workers) c.workers = *o.workers;
  c.train.seed = c.seed;
  c.train.workers = c.workers;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-parameterized 2D diffusion models: training, sampling and SMC control"};
  app.require_subcommand(1);

  Overrides o;
  CommandInputs in;
  std::vector<std::string> checkpoints;
  std::string teacher, samples, trace_a, trace_b;

  const auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(s, o);
    return s;
  };
  sub("make-data", "Write a dataset draw and its analytic density grid");
  sub("train-teacher", "Train an unconstrained denoiser with denoising score matching");
  sub("train-edsm", "Train an energy model directly with denoising score matching");
  CLI::App* distill = sub("distill", "Distill a teacher into an energy model");
  distill->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  CLI::App* sample = sub("sample", "Generate samples with the configured solver");
  CLI::App* smc = sub("smc", "Run Feynman-Kac SMC with the configured potential");
  CLI::App* diagnose = sub("diagnose", "Sweep the Jacobian asymmetry of a model's score");
  CLI::App* eval = sub("eval", "Score samples, models and loss traces");
  for (CLI::App* s : {sample, smc, diagnose, eval}) {
    s->add_option("--checkpoint", checkpoints, "Model checkpoint (repeat for compositions)");
  }
  for (CLI::App* s : {sample, smc}) {
    s->add_flag("--oracle", in.oracle, "Use the dataset's analytic model instead of a checkpoint");
  }
  eval->add_option("--samples", samples, "Samples CSV (default: the run's samples/samples.csv)");
  eval->add_option("--trace-a", trace_a, "Baseline loss trace for the variance report");
  eval->add_option("--trace-b", trace_b, "Comparison loss trace for the variance report");

  std::string figure, base = ".";
  CLI::App* check = app.add_subcommand("check-figure", "Check that a figure spec's CSV inputs exist and conform");
  check->add_option("spec", figure, "FigureSpec JSON")->required();
  check->add_option("--base", base, "Directory the spec's paths are relative to");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (check->parsed()) {
      validate_figure(load_figure_spec(figure), base);
      std::cout << "ok " << figure << "\n";
      return 0;
    }
    for (const auto& p : checkpoints) in.checkpoints.emplace_back(p);
    if (!teacher.empty()) in.teacher = teacher;
    if (!samples.empty()) in.samples = samples;
    if (!trace_a.empty()) in.trace_a = trace_a;
    if (!trace_b.empty()) in.trace_b = trace_b;
    const RunConfig config = resolve(o);
    const std::string name = app.get_subcommands().front()->get_name();
    const CommandOutput out = run_command(name, config, in);
    const RunDir dir = run_dir(config);
    for (const auto& f : out.files) std::cout << (dir.path() / f).string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
