#include "edm2d/diagnostics.hpp"

#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"
#include "edm2d/rng.hpp"

#include <cmath>
#include <limits>

namespace edm2d {

namespace {

double sample_sd(const Eigen::ArrayXd& v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt((v - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

AsymmetryEstimate hutchinson_asymmetry(const ProbedField& field, const Tensor& x, int n_probes, std::uint64_t seed,
                                       std::uint64_t probe_step) {
  if (n_probes < 1) throw std::invalid_argument("hutchinson_asymmetry: n_probes must be >= 1");
  if (x.rows() != 1) throw std::invalid_argument("hutchinson_asymmetry: expects a single point");
  if (!x.allFinite()) throw NumericError("hutchinson_asymmetry: non-finite point");

  // Replicating the point lets one batched call serve every probe.
  const Tensor points = x.replicate(n_probes, 1);
  const Tensor probes = CounterRng(seed, StreamPurpose::Probe).normals(n_probes, x.cols(), probe_step);
  const Tensor jv = grad::jvp(field.field, points, field.params, probes);
  const Tensor vj = grad::vjp(field.field, points, field.params, probes);
  if (!jv.allFinite() || !vj.allFinite()) throw NumericError("hutchinson_asymmetry: non-finite field derivative");

  const Eigen::ArrayXd raw = (vj - jv).rowwise().squaredNorm().array();
  const Eigen::ArrayXd den = vj.rowwise().squaredNorm().array();
  const double n = static_cast<double>(n_probes);

  AsymmetryEstimate est;
  est.n_probes = n_probes;
  est.raw = raw.mean();
  est.raw_stderr = sample_sd(raw) / std::sqrt(n);
  const double den_mean = den.mean();
  if (den_mean > 0.0) {
    est.normalized = est.raw / den_mean;
    // Delta method for a ratio of means.
    est.normalized_stderr = sample_sd(raw - est.normalized * den) / (den_mean * std::sqrt(n));
  } else {
    est.normalized = std::numeric_limits<double>::quiet_NaN();
    est.normalized_stderr = std::numeric_limits<double>::quiet_NaN();
  }
  return est;
}

FieldAtSigma score_field(const TeacherModel& model) {
  return [&model](double sigma) { return ProbedField{model.score_builder(sigma), model.params()}; };
}

FieldAtSigma score_field(const EnergyModel& model) {
  return [&model](double sigma) { return ProbedField{model.score_builder(sigma), model.params()}; };
}

Tensor perturbed_points(const Tensor& data, double sigma, Eigen::Index n, std::uint64_t seed,
                        std::uint64_t sigma_index) {
  if (data.rows() == 0) throw std::invalid_argument("perturbed_points: empty data");
  const Tensor eps = CounterRng(derive_seed(seed, sigma_index), StreamPurpose::Probe).normals(n, data.cols(), 0);
  Tensor out(n, data.cols());
  for (Eigen::Index r = 0; r < n; ++r) out.row(r) = data.row(r % data.rows()) + sigma * eps.row(r);
  return out;
}

std::vector<AsymmetryRow> asymmetry_sweep(const FieldAtSigma& field, const std::vector<double>& sigmas,
                                          const std::function<Tensor(std::size_t)>& points, int n_probes,
                                          std::uint64_t seed) {
  std::vector<AsymmetryRow> rows;
  rows.reserve(sigmas.size());
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    if (!(sigmas[s] > 0.0)) throw ConfigError("asymmetry_sweep: sigma must be > 0");
    const ProbedField f = field(sigmas[s]);
    const Tensor xs = points(s);
    if (xs.rows() == 0) throw ConfigError("asymmetry_sweep: no evaluation points");
    double raw = 0.0, raw_var = 0.0, norm = 0.0, norm_var = 0.0;
    for (Eigen::Index p = 0; p < xs.rows(); ++p) {
      const std::uint64_t step = (static_cast<std::uint64_t>(s) << 32) | static_cast<std::uint64_t>(p);
      const AsymmetryEstimate e = hutchinson_asymmetry(f, xs.row(p), n_probes, seed, step);
      raw += e.raw;
      raw_var += e.raw_stderr * e.raw_stderr;
      norm += e.normalized;
      norm_var += e.normalized_stderr * e.normalized_stderr;
    }
    const double n = static_cast<double>(xs.rows());
    rows.push_back({sigmas[s], raw / n, std::sqrt(raw_var) / n, norm / n, std::sqrt(norm_var) / n,
                    static_cast<int>(xs.rows()), n_probes});
  }
  return rows;
}

std::string asymmetry_csv(const std::vector<AsymmetryRow>& rows) {
  io::CsvWriter csv({"sigma", "raw_mean", "raw_stderr", "norm_mean", "norm_stderr", "n_points", "n_probes"});
  for (const auto& r : rows) {
    csv.cell(r.sigma).cell(r.raw_mean).cell(r.raw_stderr).cell(r.norm_mean).cell(r.norm_stderr);
    csv.cell(r.n_points).cell(r.n_probes);
    csv.end_row();
  }
  return csv.str();
}

}  // namespace edm2d
