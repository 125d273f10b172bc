#pragma once

// Index arithmetic for the rooted d-ary tree. Vertices are (generation, index)
// pairs; nothing is materialised. Generation g holds d^g vertices numbered
// 0 .. d^g - 1 and the parent of (g, i) is (g - 1, i / d). An edge is named by
// its child vertex.

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace brwlab {

// Raised when a caller breaks a documented precondition that is not a range
// problem (e.g. comparing vertices from different generations).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace tree {

// Default cap on the width of a stored generation.
inline constexpr std::uint64_t kDefaultMaxGenerationSize = std::uint64_t{1} << 24;

struct VertexRef {
  int generation = 0;
  std::uint64_t index = 0;

  friend bool operator==(const VertexRef&, const VertexRef&) = default;
};

inline constexpr VertexRef root() { return {0, 0}; }

// d^n with overflow detection.
std::uint64_t ipow(int d, int n);

class TreeShape {
 public:
  TreeShape(int d, int depth, std::uint64_t max_generation_size = kDefaultMaxGenerationSize);

  int d() const { return d_; }
  int depth() const { return depth_; }
  std::uint64_t generation_size(int g) const;
  bool contains(const VertexRef& v) const;

 private:
  int d_;
  int depth_;
};

VertexRef ancestor(const TreeShape& shape, const VertexRef& v, int m);
std::vector<VertexRef> children(const TreeShape& shape, const VertexRef& v);

// Graph distance |v <-> w|.
int tree_distance(const TreeShape& shape, const VertexRef& v, const VertexRef& w);

// For same-generation vertices: number of levels from v up to the most recent
// common ancestor (so siblings give 1).
int common_ancestor_depth(const TreeShape& shape, const VertexRef& v, const VertexRef& w);

// Index in generation n of a vertex whose MRCA with vertex 0 lies `levels`
// generations up (levels >= 1); handy for picking pairs at a given distance.
std::uint64_t partner_at_depth(const TreeShape& shape, int n, int levels);

}  // namespace tree
}  // namespace brwlab
