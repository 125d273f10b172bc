#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_internal.hpp"

namespace brwlab::simd {

std::string_view to_string(Variant v) { return v == Variant::avx2 ? "avx2" : "scalar"; }

std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "scalar") return Variant::scalar;
  if (s == "avx2") return Variant::avx2;
  return std::nullopt;
}

bool supported(Variant v) {
  if (v == Variant::scalar) return true;
#if defined(BRWLAB_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Kernels& kernels(Variant v) {
  if (!supported(v)) throw std::runtime_error("SIMD variant '" + std::string(to_string(v)) + "' is not available");
#ifdef BRWLAB_HAVE_AVX2
  if (v == Variant::avx2) return detail::avx2_kernels;
#endif
  return detail::scalar_kernels;
}

namespace {

std::atomic<const Kernels*> g_active{nullptr};

const Kernels* auto_select() {
  if (const char* env = std::getenv("BRWLAB_SIMD")) {
    if (auto v = parse_variant(env); v && supported(*v)) return &kernels(*v);
  }
  return supported(Variant::avx2) ? &kernels(Variant::avx2) : &kernels(Variant::scalar);
}

}  // namespace

const Kernels& kernels() {
  const Kernels* k = g_active.load(std::memory_order_acquire);
  if (k == nullptr) {
    k = auto_select();
    g_active.store(k, std::memory_order_release);
  }
  return *k;
}

void force_variant(std::optional<Variant> v) {
  g_active.store(v ? &kernels(*v) : auto_select(), std::memory_order_release);
}

}  // namespace brwlab::simd
