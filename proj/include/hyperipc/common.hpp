#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hyperipc {

using Vec = std::vector<double>;

// --- seeding -----------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Order-sensitive fold of 64-bit words into one seed. This is the stated
// derivation rule for all per-sample / per-epoch streams:
//   sample_seed = hash64(global_seed, sample_id, epoch, view_index)
inline uint64_t hash64(std::initializer_list<uint64_t> words) {
  uint64_t h = 0x2545f4914f6cdd1dull;
  for (uint64_t w : words) h = splitmix64(h ^ w);
  return h;
}
inline uint64_t hash64(uint64_t a) { return hash64({a}); }
inline uint64_t hash64(uint64_t a, uint64_t b) { return hash64({a, b}); }
inline uint64_t hash64(uint64_t a, uint64_t b, uint64_t c) { return hash64({a, b, c}); }
inline uint64_t hash64(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  return hash64({a, b, c, d});
}

inline uint64_t hash64_bytes(const void* data, size_t n, uint64_t seed = 0) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = splitmix64(seed ^ 0x9ae16a3b2f90404full);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    uint64_t w;
    std::memcpy(&w, p + i, 8);
    h = splitmix64(h ^ w);
  }
  uint64_t tail = 0;
  for (size_t j = 0; i + j < n; ++j) tail |= uint64_t(p[i + j]) << (8 * j);
  return splitmix64(h ^ tail ^ (uint64_t(n) << 1));
}

// --- rng ----------------------------------------------------------------

// Thin wrapper over mt19937_64 with pinned conversions, so every stream is
// reproducible bit-for-bit for a given seed on a given build.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // in [0, 1)
  double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller, one value per call (stateless across calls)
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    return mu + sigma * z;
  }

  // in [0, n)
  size_t index(size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: n == 0");
    // rejection sampling on the top bits, unbiased
    uint64_t bound = n;
    uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return size_t(x % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

// --- parallel helper ------------------------------------------------------

// Chunked parallel loop. Output written to disjoint slots stays bitwise
// identical for any thread count; reductions must be done by the caller in
// a fixed order after the join.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  int t = threads <= 0 ? int(std::thread::hardware_concurrency()) : threads;
  if (t <= 1 || n == 1) {
    fn(size_t(0), n);
    return;
  }
  size_t nt = std::min<size_t>(size_t(t), n);
  size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (size_t k = 0; k < nt; ++k) {
    size_t lo = k * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

// --- little-endian binary io ----------------------------------------------

namespace bio {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<char*>(b), 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<char*>(b), 8);
}
inline void put_f64(std::ostream& os, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}
inline void put_vec(std::ostream& os, const Vec& v) {
  put_u64(os, v.size());
  for (double d : v) put_f64(os, d);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("binary read: truncated u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
  return v;
}
inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("binary read: truncated u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) {
  uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}
inline std::string get_str(std::istream& is) {
  uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("binary read: truncated string");
  return s;
}
inline Vec get_vec(std::istream& is) {
  uint64_t n = get_u64(is);
  Vec v(n);
  for (auto& d : v) d = get_f64(is);
  return v;
}

}  // namespace bio

}  // namespace hyperipc
