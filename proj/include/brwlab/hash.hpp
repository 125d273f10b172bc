#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace brwlab::hash {

class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= c[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void text(std::string_view s) { bytes(s.data(), s.size()); }
  template <class T>
  void value(const T& v) { bytes(&v, sizeof v); }
  void doubles(std::span<const double> xs) { bytes(xs.data(), xs.size_bytes()); }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);

}  // namespace brwlab::hash
