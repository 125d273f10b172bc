#pragma once

// Process-wide parallelism budget (set once by the CLI's --threads) and a
// blocking chunked parallel-for. Work is split into contiguous ranges; callers
// key their randomness by item index so results do not depend on the split.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace brwlab::par {

void set_threads(int n);
int threads();

template <class F>
void parallel_for(std::size_t n, F&& body) {
  const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads()), n);
  if (t <= 1) {
    if (n > 0) body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(t);
  for (std::size_t w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      try {
        body(n * w / t, n * (w + 1) / t);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace brwlab::par
