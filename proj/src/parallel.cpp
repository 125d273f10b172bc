#include "brwlab/parallel.hpp"

#include <atomic>

#include "brwlab/hash.hpp"

namespace brwlab::par {
namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) {
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  g_threads.store(n);
}

int threads() { return g_threads.load(); }

}  // namespace brwlab::par

namespace brwlab::hash {

std::string to_hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::string Fnv1a::hex() const { return to_hex(h_); }

}  // namespace brwlab::hash
