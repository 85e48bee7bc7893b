#pragma once

#include "edm2d/field.hpp"
#include "edm2d/graph.hpp"
#include "edm2d/rng.hpp"
#include "edm2d/schedule.hpp"

#include <span>
#include <vector>

namespace edm2d {

/// Fully connected network with sine activations and an affine output layer.
/// Input is the preconditioned point with c_noise appended as one extra column.
class SineMlp {
 public:
  SineMlp(int dim, std::vector<int> hidden, double omega0);

  /// `widths` lists every layer width including input (dim + 1) and output (dim).
  static SineMlp from_widths(const std::vector<int>& widths, double omega0);

  int dim() const { return dim_; }
  double omega0() const { return omega0_; }
  const std::vector<int>& widths() const { return widths_; }
  std::size_t param_count() const { return param_count_; }

  std::vector<double> initialize(Rng& rng) const;

  /// Records h(x_pre, c_noise) on the tape; parameters are read from the
  /// tape's parameter span. `c_noise` is a (B x 1) node.
  grad::NodeId record(grad::Tape& tape, grad::NodeId x_pre, grad::NodeId c_noise) const;

  bool same_layout(const SineMlp& other) const;

 private:
  int dim_;
  std::vector<int> widths_;
  double omega0_;
  std::size_t param_count_;
};

/// Preconditioning coefficients for a batch with one noise level per row.
struct PrecondColumns {
  Tensor c_skip, c_out, c_in, c_noise;  // each (B x 1)
  static PrecondColumns at(const Vector& sigmas, double sigma_data);
};

/// Records the preconditioned unconstrained denoiser c_skip x + c_out h(c_in x).
grad::NodeId record_teacher_denoiser(grad::Tape& tape, const SineMlp& net, grad::NodeId x,
                                     const Vector& sigmas, double sigma_data);

/// Records grad_{x_pre} F for F(x_pre) = h(x_pre) . x_pre through the engine.
grad::NodeId record_grad_f(grad::Tape& tape, const SineMlp& net, grad::NodeId x_pre, grad::NodeId c_noise);

/// Records c_skip x + c_out grad F(c_in x) for a constant batch `x`.
grad::NodeId record_student_denoiser(grad::Tape& tape, const SineMlp& net, const Tensor& x,
                                     const Vector& sigmas, double sigma_data);

/// Records the energy (1 - c_skip)/(2 s^2) |x|^2 - c_out/(c_in s^2) F(c_in x), one row per sample.
grad::NodeId record_energy(grad::Tape& tape, const SineMlp& net, grad::NodeId x, const Vector& sigmas,
                           double sigma_data);

/// Unconstrained teacher: D = c_skip x + c_out h_phi(c_in x, c_noise).
class TeacherModel final : public DiffusionField {
 public:
  TeacherModel(SineMlp net, std::vector<double> params, double sigma_data);

  int dim() const override { return net_.dim(); }
  Tensor denoise(const Tensor& x, double sigma) const override;
  Tensor denoise(const Tensor& x, const Vector& sigmas) const override;

  /// Raw backbone output.
  Tensor backbone(const Tensor& x_pre, double c_noise) const;

  /// Score field as a recordable function of x at fixed sigma.
  grad::Builder score_builder(double sigma) const;

  const SineMlp& net() const { return net_; }
  const std::vector<double>& params() const { return params_; }
  double sigma_data() const { return sigma_data_; }

 private:
  SineMlp net_;
  std::vector<double> params_;
  double sigma_data_;
};

/// Energy-parameterized student. Its score is the input gradient of its
/// energy, so the field is conservative by construction.
class EnergyModel final : public DiffusionField {
 public:
  EnergyModel(SineMlp net, std::vector<double> params, double sigma_data);

  int dim() const override { return net_.dim(); }

  /// F(x_pre) = h(x_pre, c_noise) . x_pre per row.
  Vector f(const Tensor& x_pre, double c_noise) const;
  Tensor grad_f(const Tensor& x_pre, double c_noise) const;
  Tensor backbone(const Tensor& x_pre, double c_noise) const;

  bool has_energy() const override { return true; }
  Vector energy(const Tensor& x, double sigma) const override;
  /// grad_x energy through the engine.
  Tensor energy_gradient(const Tensor& x, double sigma) const;

  /// c_skip x + c_out grad F(c_in x, c_noise).
  Tensor denoise(const Tensor& x, double sigma) const override;
  Tensor denoise(const Tensor& x, const Vector& sigmas) const override;

  /// -grad_x energy as a recordable function of x at fixed sigma.
  grad::Builder score_builder(double sigma) const;

  const SineMlp& net() const { return net_; }
  const std::vector<double>& params() const { return params_; }
  double sigma_data() const { return sigma_data_; }

 private:
  SineMlp net_;
  std::vector<double> params_;
  double sigma_data_;
};

/// Student whose backbone starts as an exact copy of the teacher's.
EnergyModel init_from_teacher(const TeacherModel& teacher);

}  // namespace edm2d
