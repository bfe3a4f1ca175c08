#include "replik/util.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace replik {

uint64_t Rng::next_below(uint64_t bound) {
  // Lemire multiply-shift with rejection; platform-stable.
  if (bound == 0) throw std::invalid_argument("Rng::next_below: bound must be > 0");
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
  auto lo = static_cast<uint64_t>(m);
  if (lo < bound) {
    uint64_t t = (0 - bound) % bound;
    while (lo < t) {
      m = static_cast<unsigned __int128>(next_u64()) * bound;
      lo = static_cast<uint64_t>(m);
    }
  }
  return static_cast<uint64_t>(m >> 64);
}

int Rng::next_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("Rng::next_int: empty range");
  return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo) + 1));
}

uint64_t derive_seed(uint64_t seed, uint64_t index) {
  Rng r(seed ^ (0x632be59bd9b4e019ULL * (index + 1)));
  return r.next_u64();
}

double hash_uniform(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  uint64_t h = a;
  h = h * 0x100000001b3ULL ^ b;
  h = h * 0x100000001b3ULL ^ c;
  h = h * 0x100000001b3ULL ^ d;
  Rng r(h);
  return r.next_double();
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<long> parse_long(std::string_view s) {
  if (s.empty()) return std::nullopt;
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_tab(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stddev_of(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean_of(xs), s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

void parallel_chunks(size_t n, int n_chunks, int n_threads,
                     const std::function<void(int, size_t, size_t)>& fn) {
  if (n == 0) return;
  n_chunks = std::max(1, std::min<int>(n_chunks, static_cast<int>(n)));
  auto bound = [&](int c) { return n * static_cast<size_t>(c) / static_cast<size_t>(n_chunks); };
  n_threads = std::max(1, std::min(n_threads, n_chunks));
  if (n_threads == 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c, bound(c), bound(c + 1));
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      for (int c = t; c < n_chunks; c += n_threads) fn(c, bound(c), bound(c + 1));
    });
  }
  for (auto& th : pool) th.join();
}

int thread_budget(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("REPLIK_THREADS")) {
    if (auto v = parse_long(env); v && *v > 0) return static_cast<int>(*v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace replik
