#include "edm2d/model.hpp"

#include "edm2d/errors.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace edm2d {

using grad::NodeId;
using grad::Tape;

Tensor DiffusionField::score(const Tensor& x, double sigma) const {
  return score_from_denoiser(x, denoise(x, sigma), sigma);
}

Tensor DiffusionField::denoise(const Tensor& x, const Vector& sigmas) const {
  if (sigmas.size() != x.rows()) throw std::invalid_argument("denoise: one sigma per row required");
  Tensor out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = denoise(Tensor(x.row(r)), sigmas[r]);
  return out;
}

Vector DiffusionField::energy(const Tensor&, double) const {
  throw ConfigError("field has no energy");
}

SineMlp::SineMlp(int dim, std::vector<int> hidden, double omega0) : dim_(dim), omega0_(omega0) {
  if (dim < 1) throw ConfigError("SineMlp: dim must be >= 1");
  if (hidden.empty()) throw ConfigError("SineMlp: need at least one hidden layer");
  widths_.push_back(dim + 1);
  for (const int w : hidden) {
    if (w < 1) throw ConfigError("SineMlp: hidden widths must be >= 1");
    widths_.push_back(w);
  }
  widths_.push_back(dim);
  param_count_ = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    param_count_ += static_cast<std::size_t>(widths_[l]) * static_cast<std::size_t>(widths_[l + 1]) +
                    static_cast<std::size_t>(widths_[l + 1]);
  }
}

SineMlp SineMlp::from_widths(const std::vector<int>& widths, double omega0) {
  if (widths.size() < 3) throw ConfigError("SineMlp: layout needs input, hidden and output widths");
  const int dim = widths.back();
  if (widths.front() != dim + 1) throw ConfigError("SineMlp: input width must be output width + 1");
  return SineMlp(dim, std::vector<int>(widths.begin() + 1, widths.end() - 1), omega0);
}

std::vector<double> SineMlp::initialize(Rng& rng) const {
  std::vector<double> params;
  params.reserve(param_count_);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const double fan_in = widths_[l];
    const double bound = l == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / omega0_;
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t count = static_cast<std::size_t>(widths_[l]) * static_cast<std::size_t>(widths_[l + 1]) +
                              static_cast<std::size_t>(widths_[l + 1]);
    for (std::size_t k = 0; k < count; ++k) {
      params.push_back(dist(rng));
    }
  }
  return params;
}

NodeId SineMlp::record(Tape& tape, NodeId x_pre, NodeId c_noise) const {
  const Eigen::Index batch = tape.value(x_pre).rows();
  if (tape.value(x_pre).cols() != dim_) throw std::invalid_argument("SineMlp: input width mismatch");
  NodeId h = tape.add(tape.pad_cols(x_pre, 0, dim_ + 1), tape.pad_cols(c_noise, dim_, dim_ + 1));
  std::size_t offset = 0;
  const std::size_t layers = widths_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const Eigen::Index in = widths_[l];
    const Eigen::Index out = widths_[l + 1];
    const NodeId w = tape.parameter(offset, out, in);
    offset += static_cast<std::size_t>(in * out);
    const NodeId b = tape.parameter(offset, 1, out);
    offset += static_cast<std::size_t>(out);
    const NodeId z = tape.add(tape.matmul(h, w, false, true), tape.broadcast_rows(b, batch));
    h = l + 1 < layers ? tape.sin(tape.scale(z, omega0_)) : z;
  }
  return h;
}

bool SineMlp::same_layout(const SineMlp& other) const {
  return widths_ == other.widths_ && omega0_ == other.omega0_;
}

PrecondColumns PrecondColumns::at(const Vector& sigmas, double sigma_data) {
  const Eigen::Index n = sigmas.size();
  PrecondColumns p{Tensor(n, 1), Tensor(n, 1), Tensor(n, 1), Tensor(n, 1)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(sigmas[i] > 0.0)) throw std::invalid_argument("model: sigma must be > 0");
    const Precond c = precond_at(sigmas[i], sigma_data);
    p.c_skip(i, 0) = c.c_skip;
    p.c_out(i, 0) = c.c_out;
    p.c_in(i, 0) = c.c_in;
    p.c_noise(i, 0) = c.c_noise;
  }
  return p;
}

NodeId record_teacher_denoiser(Tape& tape, const SineMlp& net, NodeId x, const Vector& sigmas,
                               double sigma_data) {
  const PrecondColumns p = PrecondColumns::at(sigmas, sigma_data);
  const NodeId x_pre = tape.scale_rows(x, tape.constant(p.c_in));
  const NodeId h = net.record(tape, x_pre, tape.constant(p.c_noise));
  return tape.add(tape.scale_rows(x, tape.constant(p.c_skip)), tape.scale_rows(h, tape.constant(p.c_out)));
}

NodeId record_grad_f(Tape& tape, const SineMlp& net, NodeId x_pre, NodeId c_noise) {
  const NodeId h = net.record(tape, x_pre, c_noise);
  const NodeId f = tape.row_sum(tape.mul(h, x_pre));
  const NodeId wrt[] = {x_pre};
  return tape.gradient(f, wrt)[0];
}

NodeId record_student_denoiser(Tape& tape, const SineMlp& net, const Tensor& x, const Vector& sigmas,
                               double sigma_data) {
  const PrecondColumns p = PrecondColumns::at(sigmas, sigma_data);
  const Tensor x_pre_value = x.array().colwise() * p.c_in.col(0).array();
  const NodeId x_pre = tape.input(x_pre_value);
  const NodeId gf = record_grad_f(tape, net, x_pre, tape.constant(p.c_noise));
  const Tensor skip = x.array().colwise() * p.c_skip.col(0).array();
  return tape.add(tape.constant(skip), tape.scale_rows(gf, tape.constant(p.c_out)));
}

NodeId record_energy(Tape& tape, const SineMlp& net, NodeId x, const Vector& sigmas, double sigma_data) {
  const PrecondColumns p = PrecondColumns::at(sigmas, sigma_data);
  const Eigen::Index n = sigmas.size();
  Tensor quad(n, 1);
  Tensor lin(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s2 = sigmas[i] * sigmas[i];
    quad(i, 0) = (1.0 - p.c_skip(i, 0)) / (2.0 * s2);
    lin(i, 0) = -p.c_out(i, 0) / (p.c_in(i, 0) * s2);
  }
  const NodeId x_pre = tape.scale_rows(x, tape.constant(p.c_in));
  const NodeId h = net.record(tape, x_pre, tape.constant(p.c_noise));
  const NodeId f = tape.row_sum(tape.mul(h, x_pre));
  return tape.add(tape.mul(tape.squared_norm(x), tape.constant(quad)), tape.mul(f, tape.constant(lin)));
}

namespace {

Vector filled(Eigen::Index n, double sigma) { return Vector::Constant(n, sigma); }

void check_params(const SineMlp& net, const std::vector<double>& params) {
  if (params.size() != net.param_count()) throw ConfigError("model: parameter count does not match layout");
}

Tensor backbone_eval(const SineMlp& net, const std::vector<double>& params, const Tensor& x_pre, double c_noise) {
  Tape tape(params);
  const NodeId x = tape.input(x_pre);
  return tape.value(net.record(tape, x, tape.constant(Tensor::Constant(x_pre.rows(), 1, c_noise))));
}

}  // namespace

TeacherModel::TeacherModel(SineMlp net, std::vector<double> params, double sigma_data)
    : net_(std::move(net)), params_(std::move(params)), sigma_data_(sigma_data) {
  check_params(net_, params_);
}

Tensor TeacherModel::denoise(const Tensor& x, double sigma) const { return denoise(x, filled(x.rows(), sigma)); }

Tensor TeacherModel::denoise(const Tensor& x, const Vector& sigmas) const {
  Tape tape(params_);
  const NodeId xn = tape.input(x);
  Tensor out = tape.value(record_teacher_denoiser(tape, net_, xn, sigmas, sigma_data_));
  require_finite(out, "teacher denoiser");
  return out;
}

Tensor TeacherModel::backbone(const Tensor& x_pre, double c_noise) const {
  return backbone_eval(net_, params_, x_pre, c_noise);
}

grad::Builder TeacherModel::score_builder(double sigma) const {
  return [this, sigma](Tape& tape, NodeId x) {
    const Vector sig = filled(tape.value(x).rows(), sigma);
    const NodeId d = record_teacher_denoiser(tape, net_, x, sig, sigma_data_);
    return tape.scale(tape.sub(d, x), 1.0 / (sigma * sigma));
  };
}

EnergyModel::EnergyModel(SineMlp net, std::vector<double> params, double sigma_data)
    : net_(std::move(net)), params_(std::move(params)), sigma_data_(sigma_data) {
  check_params(net_, params_);
}

Vector EnergyModel::f(const Tensor& x_pre, double c_noise) const {
  const Tensor h = backbone(x_pre, c_noise);
  return h.cwiseProduct(x_pre).rowwise().sum();
}

Tensor EnergyModel::grad_f(const Tensor& x_pre, double c_noise) const {
  Tape tape(params_);
  const NodeId x = tape.input(x_pre);
  return tape.value(record_grad_f(tape, net_, x, tape.constant(Tensor::Constant(x_pre.rows(), 1, c_noise))));
}

Tensor EnergyModel::backbone(const Tensor& x_pre, double c_noise) const {
  return backbone_eval(net_, params_, x_pre, c_noise);
}

Vector EnergyModel::energy(const Tensor& x, double sigma) const {
  Tape tape(params_);
  const NodeId xn = tape.input(x);
  const Tensor e = tape.value(record_energy(tape, net_, xn, filled(x.rows(), sigma), sigma_data_));
  require_finite(e, "energy");
  return e.col(0);
}

Tensor EnergyModel::energy_gradient(const Tensor& x, double sigma) const {
  Tape tape(params_);
  const NodeId xn = tape.input(x);
  const NodeId e = record_energy(tape, net_, xn, filled(x.rows(), sigma), sigma_data_);
  const NodeId wrt[] = {xn};
  Tensor g = tape.value(tape.gradient(e, wrt)[0]);
  require_finite(g, "energy gradient");
  return g;
}

Tensor EnergyModel::denoise(const Tensor& x, double sigma) const { return denoise(x, filled(x.rows(), sigma)); }

Tensor EnergyModel::denoise(const Tensor& x, const Vector& sigmas) const {
  Tape tape(params_);
  Tensor out = tape.value(record_student_denoiser(tape, net_, x, sigmas, sigma_data_));
  require_finite(out, "student denoiser");
  return out;
}

grad::Builder EnergyModel::score_builder(double sigma) const {
  return [this, sigma](Tape& tape, NodeId x) {
    const NodeId e = record_energy(tape, net_, x, filled(tape.value(x).rows(), sigma), sigma_data_);
    const NodeId wrt[] = {x};
    return tape.scale(tape.gradient(e, wrt)[0], -1.0);
  };
}

EnergyModel init_from_teacher(const TeacherModel& teacher) {
  return EnergyModel(teacher.net(), teacher.params(), teacher.sigma_data());
}

}  // namespace edm2d
