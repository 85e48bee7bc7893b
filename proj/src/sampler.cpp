#include "edm2d/sampler.hpp"

#include "edm2d/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace edm2d {

ScoreFn score_of(const DiffusionField& field) {
  return [&field](const Tensor& x, double sigma) { return field.score(x, sigma); };
}

Solver parse_solver(const std::string& name) {
  if (name == "euler_sde") return Solver::EulerSde;
  if (name == "heun_ode") return Solver::HeunOde;
  throw ConfigError("unknown solver: " + name);
}

std::string to_string(Solver solver) { return solver == Solver::EulerSde ? "euler_sde" : "heun_ode"; }

void StepPlan::validate() const {
  if (sigmas.size() < 2) throw ConfigError("step plan: need at least two levels");
  for (std::size_t i = 1; i < sigmas.size(); ++i) {
    if (!(sigmas[i] < sigmas[i - 1])) throw ConfigError("step plan: sigmas must be strictly decreasing");
  }
  if (sigmas.back() < 0.0) throw ConfigError("step plan: sigmas must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("step plan: lambda must be >= 0");
  if (solver == Solver::HeunOde && lambda != 0.0) throw ConfigError("step plan: heun_ode requires lambda = 0");
}

namespace {

void check_order(double sigma, double sigma_next) {
  if (!(sigma > sigma_next) || sigma_next < 0.0) {
    throw std::invalid_argument("sampler: need sigma > sigma_next >= 0");
  }
}

}  // namespace

EulerResult euler_step(const ScoreFn& score, const Tensor& x, double sigma, double sigma_next, double lambda,
                       const Tensor& noise) {
  check_order(sigma, sigma_next);
  if (noise.rows() != x.rows() || noise.cols() != x.cols()) throw std::invalid_argument("euler_step: noise shape");
  const double delta = sigma * sigma - sigma_next * sigma_next;
  EulerResult r;
  r.record.mean = x + (delta * (1.0 + lambda * lambda) / 2.0) * score(x, sigma);
  r.record.stdev = lambda * std::sqrt(delta);
  r.x_next = r.record.stdev > 0.0 ? Tensor(r.record.mean + r.record.stdev * noise) : r.record.mean;
  require_finite(r.x_next, "euler step");
  return r;
}

Tensor heun_step(const ScoreFn& score, const Tensor& x, double sigma, double sigma_next) {
  check_order(sigma, sigma_next);
  const double h = sigma_next - sigma;
  const Tensor d = -sigma * score(x, sigma);
  Tensor out = x + h * d;
  if (sigma_next > 0.0) {
    const Tensor d_next = -sigma_next * score(out, sigma_next);
    out = x + (h / 2.0) * (d + d_next);
  }
  require_finite(out, "heun step");
  return out;
}

Vector transition_log_density(const TransitionRecord& record, const Tensor& x_next) {
  if (!(record.stdev > 0.0)) throw std::invalid_argument("transition density needs stdev > 0");
  if (x_next.rows() != record.mean.rows() || x_next.cols() != record.mean.cols()) {
    throw std::invalid_argument("transition density: shape mismatch");
  }
  const double d = static_cast<double>(x_next.cols());
  const double var = record.stdev * record.stdev;
  const double norm = -0.5 * d * std::log(2.0 * std::numbers::pi * var);
  return (norm - ((x_next - record.mean).rowwise().squaredNorm().array() / (2.0 * var))).matrix();
}

Tensor sample_prior(const NoiseSchedule& schedule, Eigen::Index n, int dim, Rng& rng) {
  if (n < 0) throw std::invalid_argument("sample_prior: n must be >= 0");
  std::normal_distribution<double> normal(0.0, schedule.sigma_max);
  Tensor out(n, dim);
  for (Eigen::Index k = 0; k < out.size(); ++k) out.data()[k] = normal(rng);
  return out;
}

Tensor sample_prior(double sigma_max, Eigen::Index n, int dim, std::uint64_t seed) {
  return sigma_max * CounterRng(seed, StreamPurpose::Prior).normals(n, dim, 0);
}

Tensor proposal_noise(Eigen::Index n, int dim, std::uint64_t step, std::uint64_t seed) {
  return CounterRng(seed, StreamPurpose::Proposal).normals(n, dim, step);
}

Tensor integrate(const ScoreFn& score, const StepPlan& plan, Tensor x, std::uint64_t noise_seed) {
  plan.validate();
  for (std::size_t i = 1; i < plan.sigmas.size(); ++i) {
    const double s = plan.sigmas[i - 1];
    const double s_next = plan.sigmas[i];
    if (plan.solver == Solver::HeunOde) {
      x = heun_step(score, x, s, s_next);
    } else {
      const Tensor noise = plan.lambda > 0.0 ? proposal_noise(x.rows(), static_cast<int>(x.cols()), i, noise_seed)
                                             : Tensor::Zero(x.rows(), x.cols());
      x = euler_step(score, x, s, s_next, plan.lambda, noise).x_next;
    }
  }
  return x;
}

Tensor generate(const ScoreFn& score, const StepPlan& plan, Eigen::Index n, int dim, std::uint64_t seed) {
  plan.validate();
  return integrate(score, plan, sample_prior(plan.sigmas.front(), n, dim, seed), seed);
}

}  // namespace edm2d
