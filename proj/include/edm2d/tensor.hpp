#pragma once

#include <Eigen/Core>

#include <string_view>

namespace edm2d {

/// Row-major batch of real vectors: one sample per row.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Tensor& t, std::string_view what);
void require_finite(double v, std::string_view what);

}  // namespace edm2d
