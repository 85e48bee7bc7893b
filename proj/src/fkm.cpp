#include "edm2d/fkm.hpp"

#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace edm2d {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Vector& v) {
  const double m = v.size() ? v.maxCoeff() : kNegInf;
  if (m == kNegInf) return kNegInf;
  return m + std::log((v.array() - m).exp().sum());
}

Tensor gather_rows(const Tensor& x, const std::vector<Eigen::Index>& idx) {
  Tensor out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
  return out;
}

Vector gather(const Vector& v, const std::vector<Eigen::Index>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[idx[k]];
  return out;
}

std::vector<Eigen::Index> identity(Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  return idx;
}

bool uniform_weights(const Vector& lw) {
  return lw.size() == 0 || (lw.maxCoeff() == lw.minCoeff() && std::isfinite(lw[0]));
}

double effective_sigma(const PotentialSpec& spec, double sigma) {
  return sigma > 0.0 ? sigma : spec.energy_sigma_floor;
}

const DiffusionField& energy_model(const PotentialContext& ctx) {
  if (ctx.models.empty() || ctx.models[0] == nullptr) throw ConfigError("potential: missing model");
  if (!ctx.models[0]->has_energy()) throw ConfigError("potential: model carries no energy");
  return *ctx.models[0];
}

// Energy entering the potential: the single model for tempering, the sum for products.
Vector potential_energy(const PotentialSpec& spec, const PotentialContext& ctx, const Tensor& x, double sigma) {
  const double s = effective_sigma(spec, sigma);
  if (spec.kind == PotentialKind::Temperature) return energy_model(ctx).energy(x, s);
  if (ctx.models.empty()) throw ConfigError("potential: missing model");
  Vector total = Vector::Zero(x.rows());
  for (const DiffusionField* m : ctx.models) {
    if (m == nullptr || !m->has_energy()) throw ConfigError("potential: model carries no energy");
    total += m->energy(x, s);
  }
  return total;
}

Vector previous_energy(const PotentialSpec& spec, const PotentialContext& ctx) {
  if (ctx.prev_energy != nullptr) return *ctx.prev_energy;
  if (ctx.x_prev == nullptr) throw std::invalid_argument("potential: ratio form needs the previous state");
  return potential_energy(spec, ctx, *ctx.x_prev, ctx.sigma_prev);
}

// log L(x_prev | x) - log M(x | x_prev) for the noising kernel L and Euler proposal M.
Vector kernel_correction(const PotentialContext& ctx) {
  if (ctx.transition == nullptr || ctx.x_prev == nullptr) {
    throw std::invalid_argument("potential: kernel correction needs the transition");
  }
  const double var = ctx.sigma_prev * ctx.sigma_prev - ctx.sigma * ctx.sigma;
  const TransitionRecord backward{*ctx.x, std::sqrt(var)};
  return transition_log_density(backward, *ctx.x_prev) - transition_log_density(*ctx.transition, *ctx.x);
}

}  // namespace

double ess(const Vector& log_weights) {
  const double m = log_weights.size() ? log_weights.maxCoeff() : kNegInf;
  if (m == kNegInf) throw NumericError("ess: every weight is zero");
  const Eigen::ArrayXd w = (log_weights.array() - m).exp();
  const double s1 = w.sum();
  const double s2 = w.square().sum();
  return std::clamp(s1 * s1 / s2, 1.0, static_cast<double>(log_weights.size()));
}

Vector normalized_weights(const Vector& log_weights) {
  const double lse = log_sum_exp(log_weights);
  if (lse == kNegInf) throw NumericError("normalized_weights: every weight is zero");
  return (log_weights.array() - lse).exp().matrix();
}

std::vector<Eigen::Index> systematic_resample(const Vector& weights, double u, Eigen::Index n) {
  if (n < 0) n = weights.size();
  if (weights.size() == 0) throw std::invalid_argument("systematic_resample: no weights");
  if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("systematic_resample: u must be in [0, 1)");
  if ((weights.array() < 0.0).any() || !weights.allFinite() || std::abs(weights.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("systematic_resample: weights must be normalized");
  }
  Eigen::Index last = weights.size() - 1;
  while (last > 0 && weights[last] == 0.0) --last;

  std::vector<Eigen::Index> out(static_cast<std::size_t>(n));
  Eigen::Index j = 0;
  double cum = weights[0];
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = (u + static_cast<double>(k)) / static_cast<double>(n);
    while (j < last && cum <= t) cum += weights[++j];
    out[static_cast<std::size_t>(k)] = j;
  }
  return out;
}

bool maybe_resample(ParticleEnsemble& ensemble, double tau, double sigma, double floor, double u) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("resampling threshold must be in (0, 1]");
  const Eigen::Index k = ensemble.size();
  if (!(ess(ensemble.log_weights) < tau * static_cast<double>(k) && sigma > floor)) {
    ensemble.ancestry = identity(k);
    return false;
  }
  ensemble.ancestry = systematic_resample(normalized_weights(ensemble.log_weights), u);
  ensemble.positions = gather_rows(ensemble.positions, ensemble.ancestry);
  ensemble.log_weights = Vector::Zero(k);
  return true;
}

PotentialKind parse_potential_kind(const std::string& name) {
  if (name == "unit") return PotentialKind::Unit;
  if (name == "temperature") return PotentialKind::Temperature;
  if (name == "composition_product") return PotentialKind::CompositionProduct;
  if (name == "bounded_region") return PotentialKind::BoundedRegion;
  if (name == "bounded_denoiser") return PotentialKind::BoundedDenoiser;
  throw ConfigError("unknown potential kind: " + name);
}

std::string to_string(PotentialKind kind) {
  switch (kind) {
    case PotentialKind::Unit: return "unit";
    case PotentialKind::Temperature: return "temperature";
    case PotentialKind::CompositionProduct: return "composition_product";
    case PotentialKind::BoundedRegion: return "bounded_region";
    case PotentialKind::BoundedDenoiser: return "bounded_denoiser";
  }
  return "unit";
}

TemperatureVariant parse_temperature_variant(const std::string& name) {
  if (name == "simple") return TemperatureVariant::Simple;
  if (name == "ratio") return TemperatureVariant::Ratio;
  throw ConfigError("unknown temperature variant: " + name);
}

std::string to_string(TemperatureVariant v) { return v == TemperatureVariant::Simple ? "simple" : "ratio"; }

CompositionVariant parse_composition_variant(const std::string& name) {
  if (name == "simple") return CompositionVariant::Simple;
  if (name == "annealed_ratio") return CompositionVariant::AnnealedRatio;
  throw ConfigError("unknown composition variant: " + name);
}

std::string to_string(CompositionVariant v) { return v == CompositionVariant::Simple ? "simple" : "annealed_ratio"; }

bool Box::contains(const Tensor& x, Eigen::Index row) const {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double v = x(row, j);
    if (!(v >= lower[static_cast<std::size_t>(j)] && v <= upper[static_cast<std::size_t>(j)])) return false;
  }
  return true;
}

void PotentialSpec::validate(std::size_t n_levels, int dim) const {
  if (kind == PotentialKind::Temperature || kind == PotentialKind::CompositionProduct) {
    if (gamma.size() != n_levels) throw ConfigError("potential: gamma schedule length must equal the number of levels");
    for (double g : gamma) {
      if (!std::isfinite(g)) throw ConfigError("potential: gamma must be finite");
    }
  }
  if (kind == PotentialKind::BoundedRegion) {
    if (box.lower.size() != static_cast<std::size_t>(dim) || box.upper.size() != static_cast<std::size_t>(dim)) {
      throw ConfigError("potential: box needs one bound pair per dimension");
    }
    for (std::size_t j = 0; j < box.lower.size(); ++j) {
      if (!(box.lower[j] < box.upper[j])) throw ConfigError("potential: box lower must be < upper");
    }
  }
  if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("potential: delta must be in [0, 1)");
  if (!(resample_floor_sigma >= 0.0)) throw ConfigError("potential: resample floor must be >= 0");
  if (!(energy_sigma_floor >= 0.0)) throw ConfigError("potential: energy sigma floor must be >= 0");
}

std::vector<double> constant_gamma_schedule(std::size_t n_levels, double gamma) {
  return std::vector<double>(n_levels, gamma);
}

std::vector<double> linear_gamma_schedule(std::size_t n_levels, double start, double end) {
  std::vector<double> g(n_levels, end);
  for (std::size_t i = 0; i + 1 < n_levels; ++i) {
    g[i] = start + (end - start) * static_cast<double>(i) / static_cast<double>(n_levels - 1);
  }
  return g;
}

Vector potential_log_G(const PotentialSpec& spec, const PotentialContext& ctx) {
  if (ctx.x == nullptr) throw std::invalid_argument("potential: missing state");
  const Tensor& x = *ctx.x;
  const auto i = static_cast<std::size_t>(ctx.step);
  switch (spec.kind) {
    case PotentialKind::Unit:
      return Vector::Zero(x.rows());

    case PotentialKind::Temperature:
    case PotentialKind::CompositionProduct: {
      const Vector e = potential_energy(spec, ctx, x, ctx.sigma);
      Vector lg = -spec.gamma.at(i) * e;
      const bool ratio = spec.kind == PotentialKind::Temperature
                             ? spec.temperature_variant == TemperatureVariant::Ratio
                             : spec.composition_variant == CompositionVariant::AnnealedRatio;
      if (ratio && ctx.step > 0) {
        lg += spec.gamma.at(i - 1) * previous_energy(spec, ctx);
        if (spec.kind == PotentialKind::CompositionProduct && spec.kernel_correction) lg += kernel_correction(ctx);
      }
      return lg;
    }

    case PotentialKind::BoundedRegion: {
      Vector lg(x.rows());
      for (Eigen::Index r = 0; r < x.rows(); ++r) lg[r] = spec.box.contains(x, r) ? 0.0 : kNegInf;
      return lg;
    }

    case PotentialKind::BoundedDenoiser: {
      Tensor computed;
      if (ctx.denoised == nullptr) {
        if (ctx.models.empty() || ctx.models[0] == nullptr) throw ConfigError("potential: missing model");
        computed = ctx.models[0]->denoise(x, effective_sigma(spec, ctx.sigma));
      }
      const Tensor& d = ctx.denoised != nullptr ? *ctx.denoised : computed;
      const double bound = 1.0 - spec.delta;
      Vector lg(x.rows());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        lg[r] = (d.row(r).array().abs() <= bound).all() ? 0.0 : kNegInf;
      }
      return lg;
    }
  }
  return Vector::Zero(x.rows());
}

ScoreFn composed_score(std::vector<const DiffusionField*> models) {
  if (models.empty()) throw ConfigError("composed_score: no models");
  for (const DiffusionField* m : models) {
    if (m == nullptr) throw ConfigError("composed_score: null model");
    if (m->dim() != models[0]->dim()) throw ConfigError("composed_score: dimension mismatch");
  }
  return [models](const Tensor& x, double sigma) {
    Tensor s = models[0]->score(x, sigma);
    for (std::size_t k = 1; k < models.size(); ++k) s += models[k]->score(x, sigma);
    return s;
  };
}

void SmcConfig::validate() const {
  StepPlan{sigmas, 1.0, Solver::EulerSde}.validate();
  if (n_particles < 2) throw ConfigError("smc: need at least two particles");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("smc: tau must be in (0, 1]");
  if (dim < 1) throw ConfigError("smc: dim must be >= 1");
}

SmcResult smc_run(const ScoreFn& proposal, const std::vector<const DiffusionField*>& models,
                  const PotentialSpec& spec_in, const SmcConfig& config) {
  config.validate();
  const auto& sig = config.sigmas;
  spec_in.validate(sig.size(), config.dim);
  PotentialSpec spec = spec_in;
  if (spec.energy_sigma_floor == 0.0) spec.energy_sigma_floor = sig[sig.size() - 2];

  const Eigen::Index k = config.n_particles;
  const CounterRng resample_rng(config.seed, StreamPurpose::Resample);
  const bool ratio_energy = (spec.kind == PotentialKind::Temperature &&
                             spec.temperature_variant == TemperatureVariant::Ratio) ||
                            (spec.kind == PotentialKind::CompositionProduct &&
                             spec.composition_variant == CompositionVariant::AnnealedRatio);

  ParticleEnsemble ens;
  ens.positions = sample_prior(sig[0], k, config.dim, config.seed);

  PotentialContext ctx;
  ctx.models = models;
  ctx.x = &ens.positions;
  ctx.sigma = sig[0];
  ens.log_weights = potential_log_G(spec, ctx);
  Vector energy;
  if (ratio_energy) energy = potential_energy(spec, ctx, ens.positions, sig[0]);

  SmcResult result;
  const auto alive = [](const Vector& lw) { return (lw.array() > kNegInf).cast<double>().mean(); };
  const auto finish = [&](bool collapsed) {
    result.positions = ens.positions;
    result.log_weights = ens.log_weights;
    result.collapsed = collapsed;
    return result;
  };

  const double lse0 = log_sum_exp(ens.log_weights);
  const double inc0 = lse0 - std::log(static_cast<double>(k));
  result.log_z = inc0;
  if (lse0 == kNegInf) {
    result.report.push_back({0, sig[0], std::nan(""), false, inc0, 0.0});
    return finish(true);
  }

  const std::size_t n = sig.size() - 1;
  double pending_inc = inc0;
  for (std::size_t i = 0;; ++i) {
    // Weights for level i are complete: record, then resample if warranted.
    SmcStepRow row{static_cast<int>(i), sig[i], ess(ens.log_weights), false, pending_inc, alive(ens.log_weights)};
    const double u = resample_rng.uniform(0, i, 0);
    if (i < n) {
      row.resampled = maybe_resample(ens, config.tau, sig[i], spec.resample_floor_sigma, u);
    } else if (!uniform_weights(ens.log_weights)) {
      row.resampled = maybe_resample(ens, 1.0, std::numeric_limits<double>::infinity(), 0.0, u);
    }
    if (row.resampled && ratio_energy) energy = gather(energy, ens.ancestry);
    result.report.push_back(row);
    if (i == n) break;

    const Tensor noise = proposal_noise(k, config.dim, i + 1, config.seed);
    EulerResult step = euler_step(proposal, ens.positions, sig[i], sig[i + 1], 1.0, noise);

    ctx = PotentialContext{};
    ctx.models = models;
    ctx.step = static_cast<int>(i + 1);
    ctx.x = &step.x_next;
    ctx.x_prev = &ens.positions;
    ctx.sigma = sig[i + 1];
    ctx.sigma_prev = sig[i];
    ctx.transition = &step.record;
    if (ratio_energy) ctx.prev_energy = &energy;
    const Vector log_g = potential_log_G(spec, ctx);
    Vector next_energy;
    if (ratio_energy) next_energy = potential_energy(spec, ctx, step.x_next, sig[i + 1]);

    const Vector lw = ens.log_weights + log_g;
    const double inc = log_sum_exp(lw) - log_sum_exp(ens.log_weights);
    if (inc == kNegInf || std::isnan(inc)) {
      result.report.push_back({static_cast<int>(i + 1), sig[i + 1], std::nan(""), false, inc, alive(lw)});
      return finish(true);
    }
    ens.positions = std::move(step.x_next);
    ens.log_weights = lw;
    ens.step = static_cast<int>(i + 1);
    energy = std::move(next_energy);
    result.log_z += inc;
    pending_inc = inc;
  }
  return finish(false);
}

std::string smc_report_csv(const std::vector<SmcStepRow>& rows) {
  io::CsvWriter csv({"step", "sigma", "ess", "resampled", "logZ_increment", "alive_fraction"});
  for (const auto& r : rows) {
    csv.cell(r.step).cell(r.sigma).cell(r.ess).cell(r.resampled ? 1 : 0).cell(r.log_z_increment).cell(r.alive_fraction);
    csv.end_row();
  }
  return csv.str();
}

}  // namespace edm2d
