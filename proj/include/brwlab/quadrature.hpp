#pragma once

// Expectation rules over standard Gaussians.

#include <cstddef>
#include <vector>

namespace brwlab::quad {

// n-point Gauss–Hermite rule for E f(Z), Z ~ N(0, 1): weights sum to 1.
struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

Rule gauss_hermite(int n);

// The first n Sobol points (n a power of two) in dimension `dim`, each
// coordinate moved to the centre of its 1/n cell and mapped through the normal
// quantile. Row-major.
std::vector<double> sobol_normal(int dim, std::size_t n);

// Orthonormal basis of {y in R^d : sum y = 0}, d x (d-1), row-major (Helmert).
std::vector<double> zero_sum_basis(int d);

}  // namespace brwlab::quad
