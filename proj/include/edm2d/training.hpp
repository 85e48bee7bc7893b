#pragma once

#include "edm2d/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace edm2d {

enum class LossKind { Dsm, Edsm, DistillDenoiser, DistillScore };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

struct TrainConfig {
  int batch_size = 256;
  int n_iters = 20000;
  double learning_rate = 1e-4;  // sine backbones stall or diverge at 1e-3
  int warmup_iters = 1000;
  double ema_rate = 0.999;
  std::optional<double> grad_clip_norm;
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::Dsm;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  int workers = 1;

  void validate() const;
};

/// Clean points, their noise and one level per row. x_sigma = x0 + sigma * eps.
struct TrainBatch {
  Tensor x0;
  Tensor eps;
  Vector sigmas;

  Tensor noisy() const;
};

struct LossResult {
  double loss = 0.0;
  Vector per_sample;           // weighted squared residual per row; loss is its mean
  std::vector<double> grad;    // empty unless requested
};

/// mean lambda(s) |D_teacher(x_s, s) - x0|^2
LossResult dsm_loss(const TeacherModel& teacher, const TrainBatch& batch, bool with_grad = true);

/// DSM through the energy-parameterized denoiser; the gradient is second order.
LossResult edsm_loss(const EnergyModel& student, const TrainBatch& batch, bool with_grad = true);

/// mean lambda(s) |D_student(x_s, s) - D_teacher(x_s, s)|^2 with the teacher frozen.
LossResult distill_loss_denoiser(const EnergyModel& student, const DiffusionField& teacher, const Tensor& x_sigma,
                                 const Vector& sigmas, bool with_grad = true);

/// mean |grad_x E(x_s, s) + s_teacher(x_s, s)|^2, unweighted.
LossResult distill_loss_score(const EnergyModel& student, const DiffusionField& teacher, const Tensor& x_sigma,
                              const Vector& sigmas, bool with_grad = true);

/// Unweighted per-row residuals of the two distillation losses.
struct DistillResiduals {
  Tensor denoiser;  // D_student - D_teacher
  Tensor score;     // grad E + s_teacher
};
DistillResiduals distill_residuals(const EnergyModel& student, const DiffusionField& teacher, const Tensor& x_sigma,
                                   const Vector& sigmas);

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

/// base * min(1, iter / warmup); iterations count from 1.
double effective_learning_rate(const TrainConfig& config, std::int64_t iter);

/// One bias-corrected Adam update at the warm-up-scaled rate.
void optimizer_step(std::vector<double>& params, std::span<const double> grads, OptimizerState& state,
                    const TrainConfig& config, std::int64_t iter);

/// Rescales to max_norm when the norm exceeds it. Throws NumericError on
/// non-finite input.
std::vector<double> clip_gradient(std::vector<double> grads, double max_norm);

/// ema <- rate * ema + (1 - rate) * params
void ema_update(std::vector<double>& ema, std::span<const double> params, double rate);

/// Training noise levels: log-uniform on [sigma_min, sigma_max].
double sample_training_sigma(const NoiseSchedule& schedule, Rng& rng);

/// Equal-width buckets in log sigma, i.e. quantile buckets of the log-uniform
/// training distribution.
class SigmaBuckets {
 public:
  SigmaBuckets(double sigma_min, double sigma_max, int count = 4);
  int count() const { return static_cast<int>(edges_.size()) - 1; }
  int bucket_of(double sigma) const;
  const std::vector<double>& edges() const { return edges_; }

 private:
  std::vector<double> edges_;
};

struct TraceRecord {
  std::int64_t iter;
  int sigma_bucket;  // -1 for the whole batch
  double loss;
  double grad_norm;  // pre-clipping norm; nan on bucket rows
};

class LossTrace {
 public:
  void append(const TraceRecord& record) { records_.push_back(record); }
  const std::vector<TraceRecord>& records() const { return records_; }

  /// Columns: iter, sigma_bucket, loss, grad_norm.
  std::string to_csv() const;
  void save(const std::filesystem::path& path) const;
  static LossTrace load(const std::filesystem::path& path);

 private:
  std::vector<TraceRecord> records_;
};

struct BucketVariance {
  int sigma_bucket;
  std::size_t count;
  double mean_a, var_a;
  double mean_b, var_b;
  double ratio;            // var_b / var_a; 1 when both vanish
  double max_grad_norm_a;  // whole-batch row only, nan elsewhere
  double max_grad_norm_b;
  int spikes_a;            // whole-batch grad norms above 10x the trace median
  int spikes_b;
};

/// Per-bucket variance of the per-iteration losses of two traces recorded on
/// the same stream. Throws ConfigError if the (iter, bucket) keys differ.
std::vector<BucketVariance> loss_variance_report(const LossTrace& a, const LossTrace& b,
                                                 std::int64_t skip_iters = 0);
std::string variance_report_csv(const std::vector<BucketVariance>& rows);

/// Draws clean training points.
using DataSource = std::function<Tensor(Eigen::Index n, Rng& rng)>;

struct TrainProblem {
  SineMlp net;
  double sigma_data;
  NoiseSchedule schedule;
  DataSource data;
  const DiffusionField* teacher = nullptr;  // required by the distillation losses
};

struct TrainOutcome {
  std::vector<double> params;
  std::vector<double> ema;
  LossTrace trace;
  int aborted_iters = 0;
};

/// Called with (iteration, EMA parameters) every checkpoint_every iterations.
using CheckpointHook = std::function<void(int, std::span<const double>)>;

/// Rng for parameter initialization; separate from the data and noise streams.
Rng init_rng(std::uint64_t seed);

/// Successive batches from the matched data and noise streams.
/// Every run with the same seed sees the same batches regardless of loss.
class BatchStream {
 public:
  BatchStream(std::uint64_t seed, const DataSource& data, const NoiseSchedule& schedule, int dim);
  TrainBatch next(int batch_size);

 private:
  DataSource data_;
  NoiseSchedule schedule_;
  int dim_;
  Rng data_rng_;
  Rng noise_rng_;
};

/// Runs the optimization loop. Two consecutive non-finite iterations raise
/// NumericError; a single one is skipped and recorded with a nan loss.
TrainOutcome train(const TrainConfig& config, const TrainProblem& problem, std::vector<double> init,
                   const CheckpointHook& hook = {});

}  // namespace edm2d
