#pragma once

// Standard (S) and balanced (A) branching random walks on one generation of
// the d-ary tree. Randomness for the increment block under parent (g, i) comes
// from the stream keyed (seed, g + 1, i), so a field can be grown generation by
// generation, or any block regenerated, with identical results.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "brwlab/rng.hpp"
#include "brwlab/tree.hpp"

namespace brwlab::field {

enum class FieldKind { standard, balanced };

std::string_view to_string(FieldKind k);
FieldKind parse_kind(std::string_view s);

struct GenerationField {
  tree::TreeShape shape;
  int generation = 0;
  FieldKind kind = FieldKind::balanced;
  std::uint64_t seed = 0;
  std::vector<double> values;      // S_v or A_v, index order
  std::vector<double> increments;  // edge increments into this generation; empty at the root
};

// Fill `out` with i.i.d. N(0,1).
void standard_block(rng::Stream& rs, std::span<double> out);
// Fill `out` with a zero-sum block: unit variances, pairwise covariance -1/(d-1).
void balanced_block(rng::Stream& rs, std::span<double> out);
// Same block from given standard normals xi (length d).
void balanced_block_from(std::span<const double> xi, std::span<double> out);

GenerationField root_field(const tree::TreeShape& shape, FieldKind kind, std::uint64_t seed);
GenerationField extend_field(const GenerationField& f);

GenerationField sample_standard_field(const tree::TreeShape& shape, int n, std::uint64_t seed);
GenerationField sample_balanced_field(const tree::TreeShape& shape, int n, std::uint64_t seed);
GenerationField sample_field(FieldKind kind, const tree::TreeShape& shape, int n, std::uint64_t seed);

// Values one generation up: block means (balanced) or value minus increment (standard).
std::vector<double> restrict_to_parents(const GenerationField& f);

// Largest |sum| over the sibling increment blocks of f.
double max_block_sum(const GenerationField& f);

// Closed-form Cov(v, w) for two generation-n vertices at graph distance `dist`
// on the d-ary tree. Balanced: n - dist/2 - 1/(d-1) for v != w.
double cov_oracle(FieldKind kind, int n, int dist, int d = 2);

// Binary dump: magic, d, generation, kind, seed, then little-endian float64 values.
void save_field(const GenerationField& f, std::ostream& os);
GenerationField load_field(std::istream& is);

struct CovarianceCell {
  FieldKind kind = FieldKind::balanced;
  int d = 2;
  int n = 0;
  int dist = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double oracle = 0.0;
  double z() const;
};

// Empirical Cov(A_0, A_w) at every generation n <= max_n and every even
// distance, from `replicas` independent fields.
std::vector<CovarianceCell> covariance_sweep(FieldKind kind, int d, int max_n, std::size_t replicas,
                                             std::uint64_t seed);

}  // namespace brwlab::field
