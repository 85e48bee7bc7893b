#include "edm2d/training.hpp"

#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>

namespace edm2d {

using grad::NodeId;
using grad::Tape;

LossKind parse_loss_kind(const std::string& name) {
  if (name == "dsm") return LossKind::Dsm;
  if (name == "edsm") return LossKind::Edsm;
  if (name == "distill_denoiser") return LossKind::DistillDenoiser;
  if (name == "distill_score") return LossKind::DistillScore;
  throw ConfigError("unknown loss kind: " + name);
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Dsm: return "dsm";
    case LossKind::Edsm: return "edsm";
    case LossKind::DistillDenoiser: return "distill_denoiser";
    case LossKind::DistillScore: return "distill_score";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (n_iters < 0) throw ConfigError("train: n_iters must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (warmup_iters < 0) throw ConfigError("train: warmup_iters must be >= 0");
  if (!(ema_rate >= 0.0 && ema_rate < 1.0)) throw ConfigError("train: ema_rate must be in [0, 1)");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("train: grad_clip_norm must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train: adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  if (workers < 1) throw ConfigError("train: workers must be >= 1");
}

Tensor TrainBatch::noisy() const {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols() || sigmas.size() != x0.rows()) {
    throw std::invalid_argument("batch: shape mismatch");
  }
  return x0 + (eps.array().colwise() * sigmas.array()).matrix();
}

namespace {

struct LossSetup {
  LossKind kind;
  const SineMlp& net;
  std::span<const double> params;
  double sigma_data;
};

// Records one chunk's contribution sum_i w_i |r_i|^2 / normalizer.
LossResult chunk_loss(const LossSetup& s, const Tensor& x_sigma, const Vector& sigmas, const Tensor& target,
                      double normalizer, bool with_grad) {
  Tape tape(s.params);
  NodeId residual;
  switch (s.kind) {
    case LossKind::Dsm: {
      const NodeId x = tape.input(x_sigma);
      residual = tape.sub(record_teacher_denoiser(tape, s.net, x, sigmas, s.sigma_data), tape.constant(target));
      break;
    }
    case LossKind::Edsm:
    case LossKind::DistillDenoiser:
      residual = tape.sub(record_student_denoiser(tape, s.net, x_sigma, sigmas, s.sigma_data), tape.constant(target));
      break;
    case LossKind::DistillScore: {
      const NodeId x = tape.input(x_sigma);
      const NodeId e = record_energy(tape, s.net, x, sigmas, s.sigma_data);
      const NodeId wrt[] = {x};
      residual = tape.add(tape.gradient(e, wrt)[0], tape.constant(target));
      break;
    }
  }
  Tensor weights(sigmas.size(), 1);
  for (Eigen::Index i = 0; i < sigmas.size(); ++i) {
    weights(i, 0) = s.kind == LossKind::DistillScore ? 1.0 : loss_weight(sigmas[i], s.sigma_data);
  }
  const NodeId per_sample = tape.mul(tape.squared_norm(residual), tape.constant(weights));
  const NodeId loss = tape.scale(tape.sum_rows(per_sample), 1.0 / normalizer);
  LossResult r;
  r.loss = tape.value(loss)(0, 0);
  r.per_sample = tape.value(per_sample).col(0);
  if (with_grad) r.grad = tape.parameter_gradient(loss);
  return r;
}

// Splits the batch into contiguous chunks, one per worker, and reduces the
// chunk results in index order so the sum does not depend on scheduling.
LossResult batch_loss(const LossSetup& s, const Tensor& x_sigma, const Vector& sigmas, const Tensor& target,
                      bool with_grad, int workers) {
  const Eigen::Index n = x_sigma.rows();
  if (n == 0) throw std::invalid_argument("loss: empty batch");
  const double normalizer = static_cast<double>(n);
  const int chunks = static_cast<int>(std::min<Eigen::Index>(std::max(workers, 1), n));
  LossResult total;
  if (chunks == 1) {
    total = chunk_loss(s, x_sigma, sigmas, target, normalizer, with_grad);
  } else {
    std::vector<LossResult> parts(static_cast<std::size_t>(chunks));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));
    const auto run = [&](int c) {
      const Eigen::Index begin = n * c / chunks;
      const Eigen::Index end = n * (c + 1) / chunks;
      try {
        parts[c] = chunk_loss(s, x_sigma.middleRows(begin, end - begin), sigmas.segment(begin, end - begin),
                              target.middleRows(begin, end - begin), normalizer, with_grad);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    };
    std::vector<std::thread> pool;
    for (int c = 1; c < chunks; ++c) pool.emplace_back(run, c);
    run(0);
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    total.per_sample.resize(n);
    Eigen::Index at = 0;
    for (auto& p : parts) {
      total.loss += p.loss;
      total.per_sample.segment(at, p.per_sample.size()) = p.per_sample;
      at += p.per_sample.size();
      if (with_grad) {
        if (total.grad.empty()) {
          total.grad = std::move(p.grad);
        } else {
          for (std::size_t k = 0; k < total.grad.size(); ++k) total.grad[k] += p.grad[k];
        }
      }
    }
  }
  require_finite(total.loss, to_string(s.kind) + " loss");
  return total;
}

Tensor teacher_scores(const DiffusionField& teacher, const Tensor& x, const Vector& sigmas) {
  Tensor d = teacher.denoise(x, sigmas);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    d.row(i) = (d.row(i) - x.row(i)) / (sigmas[i] * sigmas[i]);
  }
  return d;
}

void check_sigmas(const Tensor& x, const Vector& sigmas) {
  if (sigmas.size() != x.rows()) throw std::invalid_argument("loss: one sigma per row required");
}

}  // namespace

LossResult dsm_loss(const TeacherModel& teacher, const TrainBatch& batch, bool with_grad) {
  const LossSetup s{LossKind::Dsm, teacher.net(), teacher.params(), teacher.sigma_data()};
  return batch_loss(s, batch.noisy(), batch.sigmas, batch.x0, with_grad, 1);
}

LossResult edsm_loss(const EnergyModel& student, const TrainBatch& batch, bool with_grad) {
  const LossSetup s{LossKind::Edsm, student.net(), student.params(), student.sigma_data()};
  return batch_loss(s, batch.noisy(), batch.sigmas, batch.x0, with_grad, 1);
}

LossResult distill_loss_denoiser(const EnergyModel& student, const DiffusionField& teacher, const Tensor& x_sigma,
                                 const Vector& sigmas, bool with_grad) {
  check_sigmas(x_sigma, sigmas);
  const LossSetup s{LossKind::DistillDenoiser, student.net(), student.params(), student.sigma_data()};
  return batch_loss(s, x_sigma, sigmas, teacher.denoise(x_sigma, sigmas), with_grad, 1);
}

LossResult distill_loss_score(const EnergyModel& student, const DiffusionField& teacher, const Tensor& x_sigma,
                              const Vector& sigmas, bool with_grad) {
  check_sigmas(x_sigma, sigmas);
  const LossSetup s{LossKind::DistillScore, student.net(), student.params(), student.sigma_data()};
  return batch_loss(s, x_sigma, sigmas, teacher_scores(teacher, x_sigma, sigmas), with_grad, 1);
}

DistillResiduals distill_residuals(const EnergyModel& student, const DiffusionField& teacher, const Tensor& x_sigma,
                                   const Vector& sigmas) {
  check_sigmas(x_sigma, sigmas);
  Tape tape(student.params());
  const NodeId x = tape.input(x_sigma);
  const NodeId e = record_energy(tape, student.net(), x, sigmas, student.sigma_data());
  const NodeId wrt[] = {x};
  const Tensor grad_e = tape.value(tape.gradient(e, wrt)[0]);
  return DistillResiduals{student.denoise(x_sigma, sigmas) - teacher.denoise(x_sigma, sigmas),
                          grad_e + teacher_scores(teacher, x_sigma, sigmas)};
}

double effective_learning_rate(const TrainConfig& config, std::int64_t iter) {
  if (config.warmup_iters <= 0) return config.learning_rate;
  return config.learning_rate * std::min(1.0, static_cast<double>(iter) / config.warmup_iters);
}

void optimizer_step(std::vector<double>& params, std::span<const double> grads, OptimizerState& state,
                    const TrainConfig& config, std::int64_t iter) {
  if (grads.size() != params.size()) throw std::invalid_argument("optimizer: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = effective_learning_rate(config, iter);
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = b1 * state.m[k] + (1.0 - b1) * grads[k];
    state.v[k] = b2 * state.v[k] + (1.0 - b2) * grads[k] * grads[k];
    params[k] -= lr * (state.m[k] / c1) / (std::sqrt(state.v[k] / c2) + config.adam_eps);
  }
}

std::vector<double> clip_gradient(std::vector<double> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradient: max_norm must be > 0");
  double sq = 0.0;
  for (const double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  require_finite(norm, "gradient norm");
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (double& g : grads) g *= f;
  }
  return grads;
}

void ema_update(std::vector<double>& ema, std::span<const double> params, double rate) {
  if (ema.size() != params.size()) throw std::invalid_argument("ema: size mismatch");
  for (std::size_t k = 0; k < ema.size(); ++k) ema[k] = rate * ema[k] + (1.0 - rate) * params[k];
}

double sample_training_sigma(const NoiseSchedule& schedule, Rng& rng) {
  std::uniform_real_distribution<double> u(std::log(schedule.sigma_min), std::log(schedule.sigma_max));
  return std::exp(u(rng));
}

SigmaBuckets::SigmaBuckets(double sigma_min, double sigma_max, int count) {
  if (count < 1 || !(sigma_min > 0.0) || !(sigma_max > sigma_min)) throw ConfigError("buckets: invalid range");
  const double lo = std::log(sigma_min);
  const double hi = std::log(sigma_max);
  for (int k = 0; k <= count; ++k) edges_.push_back(std::exp(lo + (hi - lo) * k / count));
  edges_.front() = sigma_min;
  edges_.back() = sigma_max;
}

int SigmaBuckets::bucket_of(double sigma) const {
  const auto it = std::upper_bound(edges_.begin() + 1, edges_.end() - 1, sigma);
  return static_cast<int>(it - edges_.begin()) - 1;
}

std::string LossTrace::to_csv() const {
  io::CsvWriter csv({"iter", "sigma_bucket", "loss", "grad_norm"});
  for (const auto& r : records_) {
    csv.cell(static_cast<long long>(r.iter)).cell(r.sigma_bucket).cell(r.loss).cell(r.grad_norm);
    csv.end_row();
  }
  return csv.str();
}

void LossTrace::save(const std::filesystem::path& path) const { io::write_atomic(path, to_csv()); }

LossTrace LossTrace::load(const std::filesystem::path& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::size_t ci = t.column("iter");
  const std::size_t cb = t.column("sigma_bucket");
  const std::size_t cl = t.column("loss");
  const std::size_t cg = t.column("grad_norm");
  LossTrace trace;
  for (const auto& row : t.rows) {
    trace.append({static_cast<std::int64_t>(row[ci]), static_cast<int>(row[cb]), row[cl], row[cg]});
  }
  return trace;
}

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return m;
  double ss = 0.0;
  for (const double x : v) ss += (x - m.mean) * (x - m.mean);
  m.var = ss / static_cast<double>(v.size() - 1);
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

std::vector<BucketVariance> loss_variance_report(const LossTrace& a, const LossTrace& b, std::int64_t skip_iters) {
  using Key = std::pair<int, std::int64_t>;
  const auto index = [skip_iters](const LossTrace& t) {
    std::map<Key, const TraceRecord*> out;
    for (const auto& r : t.records()) {
      if (r.iter > skip_iters) out[{r.sigma_bucket, r.iter}] = &r;
    }
    return out;
  };
  const auto ia = index(a);
  const auto ib = index(b);
  const auto coverage = [](const std::map<Key, const TraceRecord*>& m) {
    std::pair<std::set<int>, std::set<std::int64_t>> c;
    for (const auto& [key, rec] : m) {
      c.first.insert(key.first);
      if (key.first == -1) c.second.insert(key.second);
    }
    return c;
  };
  if (coverage(ia) != coverage(ib)) {
    throw ConfigError("variance report: traces cover different iterations or sigma buckets");
  }
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> losses;
  std::vector<double> grads_a;
  std::vector<double> grads_b;
  for (const auto& [key, pa] : ia) {
    const auto pb = ib.find(key);
    // Bucket rows are missing for aborted iterations; nan losses mark them too.
    if (pb == ib.end()) continue;
    const TraceRecord& ra = *pa;
    const TraceRecord& rb = *pb->second;
    if (std::isfinite(ra.loss) && std::isfinite(rb.loss)) {
      losses[ra.sigma_bucket].first.push_back(ra.loss);
      losses[ra.sigma_bucket].second.push_back(rb.loss);
    }
    if (ra.sigma_bucket == -1) {
      if (std::isfinite(ra.grad_norm)) grads_a.push_back(ra.grad_norm);
      if (std::isfinite(rb.grad_norm)) grads_b.push_back(rb.grad_norm);
    }
  }
  const double med_a = median(grads_a);
  const double med_b = median(grads_b);
  const auto spikes = [](const std::vector<double>& g, double med) {
    return static_cast<int>(std::count_if(g.begin(), g.end(), [med](double x) { return x > 10.0 * med; }));
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<BucketVariance> rows;
  for (const auto& [bucket, pair] : losses) {
    const Moments ma = moments(pair.first);
    const Moments mb = moments(pair.second);
    BucketVariance row{bucket, pair.first.size(), ma.mean, ma.var, mb.mean, mb.var, 1.0, nan, nan, 0, 0};
    if (ma.var > 0.0) {
      row.ratio = mb.var / ma.var;
    } else if (mb.var > 0.0) {
      row.ratio = std::numeric_limits<double>::infinity();
    }
    if (bucket == -1) {
      row.max_grad_norm_a = grads_a.empty() ? nan : *std::max_element(grads_a.begin(), grads_a.end());
      row.max_grad_norm_b = grads_b.empty() ? nan : *std::max_element(grads_b.begin(), grads_b.end());
      row.spikes_a = spikes(grads_a, med_a);
      row.spikes_b = spikes(grads_b, med_b);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string variance_report_csv(const std::vector<BucketVariance>& rows) {
  io::CsvWriter csv({"sigma_bucket", "count", "mean_a", "var_a", "mean_b", "var_b", "var_ratio", "max_grad_norm_a",
                     "max_grad_norm_b", "spikes_a", "spikes_b"});
  for (const auto& r : rows) {
    csv.cell(r.sigma_bucket).cell(static_cast<long long>(r.count)).cell(r.mean_a).cell(r.var_a).cell(r.mean_b);
    csv.cell(r.var_b).cell(r.ratio).cell(r.max_grad_norm_a).cell(r.max_grad_norm_b).cell(r.spikes_a).cell(r.spikes_b);
    csv.end_row();
  }
  return csv.str();
}

Rng init_rng(std::uint64_t seed) { return Rng(derive_seed(seed, 3)); }

BatchStream::BatchStream(std::uint64_t seed, const DataSource& data, const NoiseSchedule& schedule, int dim)
    : data_(data),
      schedule_(schedule),
      dim_(dim),
      data_rng_(derive_seed(seed, 1)),
      noise_rng_(derive_seed(seed, 2)) {
  schedule_.validate();
}

TrainBatch BatchStream::next(int batch_size) {
  TrainBatch b;
  b.x0 = data_(batch_size, data_rng_);
  if (b.x0.rows() != batch_size || b.x0.cols() != dim_) throw std::invalid_argument("data source: wrong batch shape");
  b.sigmas.resize(batch_size);
  for (int i = 0; i < batch_size; ++i) b.sigmas[i] = sample_training_sigma(schedule_, noise_rng_);
  std::normal_distribution<double> normal;
  b.eps.resize(batch_size, dim_);
  for (Eigen::Index k = 0; k < b.eps.size(); ++k) b.eps.data()[k] = normal(noise_rng_);
  return b;
}

TrainOutcome train(const TrainConfig& config, const TrainProblem& problem, std::vector<double> init,
                   const CheckpointHook& hook) {
  config.validate();
  if (init.size() != problem.net.param_count()) throw ConfigError("train: initial parameters do not match layout");
  const bool distill = config.loss_kind == LossKind::DistillDenoiser || config.loss_kind == LossKind::DistillScore;
  if (distill && problem.teacher == nullptr) throw ConfigError("train: distillation needs a teacher");
  if (!problem.data) throw ConfigError("train: missing data source");

  TrainOutcome out;
  out.params = std::move(init);
  out.ema = out.params;
  OptimizerState opt;
  BatchStream stream(config.seed, problem.data, problem.schedule, problem.net.dim());
  const SigmaBuckets buckets(problem.schedule.sigma_min, problem.schedule.sigma_max);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  int consecutive_failures = 0;

  for (int iter = 1; iter <= config.n_iters; ++iter) {
    const TrainBatch batch = stream.next(config.batch_size);
    const Tensor x_sigma = batch.noisy();
    const LossSetup setup{config.loss_kind, problem.net, out.params, problem.sigma_data};
    LossResult result;
    double grad_norm = nan;
    try {
      Tensor target;
      switch (config.loss_kind) {
        case LossKind::Dsm:
        case LossKind::Edsm: target = batch.x0; break;
        case LossKind::DistillDenoiser: target = problem.teacher->denoise(x_sigma, batch.sigmas); break;
        case LossKind::DistillScore: target = teacher_scores(*problem.teacher, x_sigma, batch.sigmas); break;
      }
      result = batch_loss(setup, x_sigma, batch.sigmas, target, true, config.workers);
      double sq = 0.0;
      for (const double g : result.grad) sq += g * g;
      grad_norm = std::sqrt(sq);
      require_finite(grad_norm, "gradient norm");
      if (config.grad_clip_norm) result.grad = clip_gradient(std::move(result.grad), *config.grad_clip_norm);
    } catch (const NumericError&) {
      ++out.aborted_iters;
      out.trace.append({iter, -1, nan, grad_norm});
      if (++consecutive_failures >= 2) {
        throw NumericError("training diverged: non-finite loss or gradient at iterations " +
                           std::to_string(iter - 1) + " and " + std::to_string(iter));
      }
      continue;
    }
    consecutive_failures = 0;
    optimizer_step(out.params, result.grad, opt, config, iter);
    ema_update(out.ema, out.params, config.ema_rate);

    out.trace.append({iter, -1, result.loss, grad_norm});
    std::vector<double> sum(static_cast<std::size_t>(buckets.count()), 0.0);
    std::vector<int> count(static_cast<std::size_t>(buckets.count()), 0);
    for (Eigen::Index i = 0; i < batch.sigmas.size(); ++i) {
      const int b = buckets.bucket_of(batch.sigmas[i]);
      sum[b] += result.per_sample[i];
      ++count[b];
    }
    for (int b = 0; b < buckets.count(); ++b) {
      if (count[b] > 0) out.trace.append({iter, b, sum[b] / count[b], nan});
    }
    if (hook && config.checkpoint_every > 0 && iter % config.checkpoint_every == 0) hook(iter, out.ema);
  }
  return out;
}

}  // namespace edm2d
