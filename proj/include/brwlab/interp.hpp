#pragma once

// Monotone cubic (Fritsch–Carlson) interpolation on uniform knots.

#include <span>
#include <vector>

#include "brwlab/simd.hpp"

namespace brwlab::interp {

// Knot derivatives times dx for data y on a uniform grid; the interpolant is
// monotone wherever the data are.
std::vector<double> pchip_dslopes(std::span<const double> y);

// Scalar evaluation with the same clamping as the batch kernels.
double hermite_at(const simd::HermiteView& h, double q);
// d/dq of the same interpolant.
double hermite_derivative_at(const simd::HermiteView& h, double q);

}  // namespace brwlab::interp
