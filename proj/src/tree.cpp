#include "brwlab/tree.hpp"

#include <limits>
#include <string>

namespace brwlab::tree {

std::uint64_t ipow(int d, int n) {
  if (d < 1 || n < 0) throw std::invalid_argument("ipow: bad arguments");
  std::uint64_t r = 1;
  for (int i = 0; i < n; ++i) {
    if (r > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(d))
      throw std::overflow_error("ipow: d^n overflows 64 bits");
    r *= static_cast<std::uint64_t>(d);
  }
  return r;
}

TreeShape::TreeShape(int d, int depth, std::uint64_t max_generation_size) : d_(d), depth_(depth) {
  if (d < 2) throw std::invalid_argument("TreeShape: d must be >= 2");
  if (depth < 0) throw std::invalid_argument("TreeShape: depth must be >= 0");
  if (ipow(d, depth) > max_generation_size)
    throw std::length_error("TreeShape: d^depth = " + std::to_string(ipow(d, depth)) +
                            " exceeds the generation size cap " +
                            std::to_string(max_generation_size));
}

std::uint64_t TreeShape::generation_size(int g) const {
  if (g < 0 || g > depth_) throw std::out_of_range("generation outside the tree");
  return ipow(d_, g);
}

bool TreeShape::contains(const VertexRef& v) const {
  return v.generation >= 0 && v.generation <= depth_ && v.index < ipow(d_, v.generation);
}

VertexRef ancestor(const TreeShape& shape, const VertexRef& v, int m) {
  if (m < 0 || m > v.generation)
    throw std::out_of_range("ancestor: m must lie in [0, generation]");
  return {v.generation - m, v.index / ipow(shape.d(), m)};
}

std::vector<VertexRef> children(const TreeShape& shape, const VertexRef& v) {
  if (v.generation >= shape.depth()) throw std::out_of_range("children: vertex at maximum depth");
  std::vector<VertexRef> out;
  out.reserve(static_cast<std::size_t>(shape.d()));
  const auto base = v.index * static_cast<std::uint64_t>(shape.d());
  for (int j = 0; j < shape.d(); ++j) out.push_back({v.generation + 1, base + static_cast<std::uint64_t>(j)});
  return out;
}

int tree_distance(const TreeShape& shape, const VertexRef& v, const VertexRef& w) {
  // Lift the deeper vertex first, then both together.
  VertexRef a = v, b = w;
  const auto d = static_cast<std::uint64_t>(shape.d());
  int dist = 0;
  while (a.generation > b.generation) { a = {a.generation - 1, a.index / d}; ++dist; }
  while (b.generation > a.generation) { b = {b.generation - 1, b.index / d}; ++dist; }
  while (a.index != b.index) {
    a = {a.generation - 1, a.index / d};
    b = {b.generation - 1, b.index / d};
    dist += 2;
  }
  return dist;
}

int common_ancestor_depth(const TreeShape& shape, const VertexRef& v, const VertexRef& w) {
  if (v.generation != w.generation)
    throw ContractViolation("common_ancestor_depth: vertices must share a generation");
  return tree_distance(shape, v, w) / 2;
}

std::uint64_t partner_at_depth(const TreeShape& shape, int n, int levels) {
  if (levels < 1 || levels > n) throw std::out_of_range("partner_at_depth: levels must lie in [1, n]");
  return ipow(shape.d(), levels - 1);
}

}  // namespace brwlab::tree
