#include "edm2d/app/config.hpp"
#include "edm2d/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace edm2d;
using namespace edm2d::app;

TEST(Config, EmptyDocumentTakesDefaults) {
  const RunConfig c = parse_config("{}");
  EXPECT_EQ(c.run_name, "run");
  EXPECT_EQ(c.schedule.n_steps, 40);
  EXPECT_EQ(c.schedule.sigma_min, 0.002);
  EXPECT_EQ(c.schedule.sigma_max, 10.0);
  EXPECT_EQ(c.schedule.rho, 7.0);
  EXPECT_FALSE(c.sigma_data_given);
  EXPECT_EQ(c.model.hidden, (std::vector<int>{128, 128, 128, 128}));
  EXPECT_EQ(c.sampler.solver, Solver::HeunOde);
  EXPECT_EQ(c.train.batch_size, 256);
  EXPECT_FALSE(c.train.grad_clip_norm.has_value());
}

TEST(Config, ReadsEverySection) {
  const RunConfig c = parse_config(R"({
    "run_name": "tree", "seed": 12345678901234, "output_dir": "out", "workers": 2, "data_samples": 50,
    "dataset": {"kind": "fractal_tree", "tree_depth": 3},
    "schedule": {"sigma_min": 0.01, "sigma_max": 5, "sigma_data": 0.4, "n_steps": 20, "rho": 5},
    "model": {"hidden": [32, 32], "omega0": 3},
    "train": {"n_iters": 7, "grad_clip_norm": 10, "distill_loss": "score"},
    "sampler": {"solver": "euler_sde", "lambda": 1, "n_samples": 9},
    "smc": {"potential": "bounded_region", "box": {"lower": [0.25, "-inf"], "upper": [1, "inf"]},
            "n_particles": 64, "tau": 0.3},
    "diagnose": {"sigmas": [0.1, 1], "n_points": 3, "n_probes": 5},
    "eval": {"grid": {"x_min": -2, "x_max": 2, "y_min": -1, "y_max": 3, "resolution": 50}, "sigma": 0.3}
  })");
  EXPECT_EQ(c.seed, 12345678901234ULL);
  EXPECT_EQ(c.output_dir->string(), "out");
  EXPECT_EQ(c.train.seed, c.seed);
  EXPECT_EQ(c.train.workers, 2);
  EXPECT_EQ(c.dataset.kind, DatasetKind::FractalTree);
  EXPECT_EQ(c.dataset.tree_depth, 3);
  EXPECT_TRUE(c.sigma_data_given);
  EXPECT_EQ(c.schedule.sigma_data, 0.4);
  EXPECT_EQ(c.model.hidden, (std::vector<int>{32, 32}));
  EXPECT_EQ(*c.train.grad_clip_norm, 10.0);
  EXPECT_TRUE(c.distill_on_score);
  EXPECT_EQ(c.sampler.solver, Solver::EulerSde);
  EXPECT_EQ(c.smc.box.lower[1], -INFINITY);
  EXPECT_EQ(c.smc.box.upper[1], INFINITY);
  EXPECT_EQ(c.diagnose.sigmas.size(), 2u);
  ASSERT_TRUE(c.eval.grid.has_value());
  EXPECT_EQ(c.eval.grid->resolution, 50);
  EXPECT_EQ(c.smc_config().sigmas.size(), 21u);
  EXPECT_EQ(c.smc_config().n_particles, 64);
}

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_THROW(parse_config(R"({"sed": 1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"lr": 1}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"smc": {"box": {"lower": [0], "upper": [1], "mid": 0}}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"dataset": {"components": [{"weight": 1, "mean": [0, 0],
                                 "cov": [[1, 0], [0, 1]], "scale": 2}]}})"),
               ConfigError);
}

TEST(Config, TypeErrors) {
  EXPECT_THROW(parse_config(R"({"seed": -1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seed": 1.5})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"workers": "2"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"hidden": [1.5]}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"smc": {"kernel_correction": 1}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"schedule": []})"), ConfigError);
  EXPECT_THROW(parse_config("{"), ConfigError);
  EXPECT_THROW(parse_config("[]"), ConfigError);
}

TEST(Config, CrossFieldChecks) {
  EXPECT_THROW(parse_config(R"({"sampler": {"solver": "heun_ode", "lambda": 1}})"), ConfigError);
  EXPECT_NO_THROW(parse_config(R"({"sampler": {"solver": "euler_sde", "lambda": 1}})"));
  EXPECT_THROW(parse_config(R"({"smc": {"potential": "bounded_region"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"smc": {"tau": 1.5}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"run_name": "a/b"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"workers": 0})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"schedule": {"sigma_min": 2, "sigma_max": 1}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"hidden": []}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"distill_loss": "kl"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"dataset": {"kind": "moons"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"dataset": {"components": [{"weight": 1, "mean": [0, 0],
                                 "cov": [[1, 2], [2, 1]]}]}})"),
               ConfigError);
  EXPECT_THROW(parse_config(R"({"eval": {"grid": {"resolution": 1}}})"), ConfigError);
}

TEST(Config, PotentialDefaults) {
  RunConfig c = parse_config(R"({"schedule": {"sigma_data": 0.5}, "smc": {"potential": "composition_product"}})");
  PotentialSpec p = c.potential_spec();
  EXPECT_DOUBLE_EQ(p.resample_floor_sigma, 0.05);
  EXPECT_EQ(p.gamma.size(), 41u);
  EXPECT_DOUBLE_EQ(p.gamma.front(), 0.05);
  EXPECT_DOUBLE_EQ(p.gamma.back(), 1.0);
  EXPECT_EQ(p.composition_variant, CompositionVariant::AnnealedRatio);
  EXPECT_EQ(parse_config(R"({"smc": {"potential": "temperature", "gamma": 0.5}})").potential_spec().gamma.front(), 0.5);
  c = parse_config(R"({"smc": {"potential": "temperature", "gamma_schedule": "linear",
                               "gamma_start": 0.2, "gamma": 2}})");
  p = c.potential_spec();
  EXPECT_DOUBLE_EQ(p.gamma.front(), 0.2);
  EXPECT_DOUBLE_EQ(p.gamma.back(), 2.0);
  EXPECT_EQ(p.resample_floor_sigma, 0.0);
}

TEST(Config, CanonicalJsonRoundTrips) {
  const RunConfig c = parse_config(R"({
    "seed": 4, "dataset": {"kind": "gmm", "components": [
      {"weight": 0.25, "mean": [1, 0], "cov": [[0.1, 0], [0, 0.2]]},
      {"weight": 0.75, "mean": [-1, 0.5], "cov": [[0.3, 0.1], [0.1, 0.3]]}]},
    "smc": {"box": {"lower": [0.25, "-inf"], "upper": [1, "inf"]}},
    "eval": {"grid": {"resolution": 30}}
  })");
  const std::string text = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_config(text)), text);
  // Key order and formatting are independent of the input document's.
  const RunConfig reordered = parse_config(R"({"eval": {"grid": {"resolution": 30}},
    "smc": {"box": {"upper": [1, "inf"], "lower": [0.25, "-inf"]}},
    "dataset": {"components": [
      {"mean": [1, 0], "weight": 0.25, "cov": [[0.1, 0], [0, 0.2]]},
      {"weight": 0.75, "mean": [-1, 0.5], "cov": [[0.3, 0.1], [0.1, 0.3]]}], "kind": "gmm"}, "seed": 4})");
  EXPECT_EQ(config_to_json(reordered), text);
  EXPECT_NE(config_to_json(parse_config(R"({"seed": 5})")), config_to_json(parse_config(R"({"seed": 4})")));
}

TEST(Config, NullMeansUnset) {
  const RunConfig c = parse_config(R"({"schedule": {"sigma_data": null}, "output_dir": null,
                                      "train": {"grad_clip_norm": null}, "eval": {"grid": null}})");
  EXPECT_FALSE(c.sigma_data_given);
  EXPECT_FALSE(c.output_dir.has_value());
  EXPECT_FALSE(c.train.grad_clip_norm.has_value());
  EXPECT_FALSE(c.eval.grid.has_value());
}
