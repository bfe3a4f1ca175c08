#pragma once
// Shared utilities: deterministic RNG, locale-independent numeric IO,
// TSV helpers, summary statistics, and a fixed-chunk parallel loop.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace replik {

// SplitMix64. All randomness in the project goes through this instead of
// <random> distributions, whose outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, bound). bound must be > 0.
  uint64_t next_below(uint64_t bound);

  // Uniform in [lo, hi], inclusive.
  int next_int(int lo, int hi);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// Independent stream seed for (seed, index), e.g. one stream per bag.
uint64_t derive_seed(uint64_t seed, uint64_t index);

// Counter-based uniform in [0,1) from a key tuple; used for dropout masks so
// results do not depend on evaluation order or thread count.
double hash_uniform(uint64_t a, uint64_t b, uint64_t c, uint64_t d);

// Shortest round-trip decimal representation (std::to_chars).
std::string format_double(double x);

// Strict, locale-independent parse; the whole token must be consumed.
std::optional<double> parse_double(std::string_view s);
std::optional<long> parse_long(std::string_view s);

std::vector<std::string_view> split_tab(std::string_view line);

double mean_of(std::span<const double> xs);
// Sample standard deviation (n-1); 0 for fewer than two values.
double stddev_of(std::span<const double> xs);

// Runs fn(chunk_index, begin, end) for every chunk of [0, n) split into
// n_chunks contiguous ranges. Chunk boundaries depend only on (n, n_chunks),
// so callers that reduce per-chunk results in chunk order get identical
// output for any worker count, including serial execution.
void parallel_chunks(size_t n, int n_chunks, int n_threads,
                     const std::function<void(int, size_t, size_t)>& fn);

// Worker count: explicit argument > REPLIK_THREADS env > hardware cores.
int thread_budget(int requested = 0);

}  // namespace replik
