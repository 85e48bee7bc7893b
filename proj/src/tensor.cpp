#include "edm2d/tensor.hpp"

#include "edm2d/errors.hpp"

#include <cmath>
#include <string>

namespace edm2d {

void require_finite(const Tensor& t, std::string_view what) {
  if (!t.allFinite()) {
    throw NumericError("non-finite value in " + std::string(what));
  }
}

void require_finite(double v, std::string_view what) {
  if (!std::isfinite(v)) {
    throw NumericError("non-finite value in " + std::string(what));
  }
}

}  // namespace edm2d
