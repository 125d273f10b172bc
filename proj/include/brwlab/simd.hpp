#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; an AVX2+FMA variant is compiled separately and chosen at
// runtime when the CPU supports it. The environment variable BRWLAB_SIMD
// (scalar | avx2 | auto) overrides the choice.

#include <cstddef>
#include <optional>
#include <string_view>

namespace brwlab::simd {

enum class Variant { scalar, avx2 };

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view s);

// Cubic Hermite data on uniform knots x0 + i*dx. `dslope[i]` is the knot
// derivative multiplied by dx.
struct HermiteView {
  const double* y = nullptr;
  const double* dslope = nullptr;
  std::size_t knots = 0;
  double x0 = 0.0;
  double inv_dx = 1.0;
};

struct Kernels {
  Variant variant;
  // sum_i exp(a * v[i] + b), compensated.
  double (*sum_exp_affine)(const double* v, std::size_t n, double a, double b);
  // out[i] = H(q[i]); queries are clamped to the knot range.
  void (*hermite_eval)(const HermiteView& h, const double* q, double* out, std::size_t n);
  // out[i] = exp(x[i]).
  void (*exp_array)(const double* x, double* out, std::size_t n);
};

bool supported(Variant v);
const Kernels& kernels(Variant v);
// The active kernel set (runtime-selected unless forced).
const Kernels& kernels();
void force_variant(std::optional<Variant> v);

}  // namespace brwlab::simd
