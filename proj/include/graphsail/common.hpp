#pragma once

#include <cstdint>
#include <cstddef>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace graphsail {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (config=1, data=2, divergence=3).
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// splitmix64 streams keyed by a chain of mixed words. Every consumer of
// randomness forks its own stream from (root seed, purpose, epoch, step,
// node, ...), so the draw a given node sees does not depend on which other
// nodes happen to be in the same batch or on thread scheduling. That is what
// makes trajectories replayable and method comparisons paired.
// ---------------------------------------------------------------------------

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed + 0x9e3779b97f4a7c15ULL)) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    return mix64(z);
  }

  // Uniform integer in [0, n). Rejection sampling keeps it exactly uniform.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform double in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Derive an independent stream keyed by up to three extra words.
  Rng fork(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
    std::uint64_t s = mix64(state_ ^ (a + 0x9e3779b97f4a7c15ULL));
    s = mix64(s ^ (b + 0xd1b54a32d192ed03ULL));
    s = mix64(s ^ (c + 0x8cb92ba72f3d8dd7ULL));
    Rng r(0);
    r.state_ = s;
    return r;
  }

 private:
  std::uint64_t state_;
};

// Stream purposes, used as the first fork key so streams cannot collide.
namespace stream {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kShuffle = 2;
constexpr std::uint64_t kNeighbor = 3;
constexpr std::uint64_t kNegative = 4;
constexpr std::uint64_t kHalve = 5;
constexpr std::uint64_t kKmeans = 6;
constexpr std::uint64_t kTeacher = 7;
constexpr std::uint64_t kAnchors = 8;
constexpr std::uint64_t kEval = 9;
constexpr std::uint64_t kBaseSplit = 10;
constexpr std::uint64_t kLsp = 11;
constexpr std::uint64_t kSynth = 12;
}  // namespace stream

// ---------------------------------------------------------------------------
// Dense row-major matrix of doubles. All model math runs in double; only the
// checkpoint files narrow to float32.
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

inline double sq_norm(const double* a, std::size_t n) { return dot(a, a, n); }

// log(sigmoid(x)) without overflow anywhere on the real line.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Threading. Parallel loops are only ever used for independent outputs with
// a fixed inner summation order, so results do not depend on thread count.
// ---------------------------------------------------------------------------

int max_threads();
void set_max_threads(int n);

// body(i) for i in [0, n); runs serially when threads are capped at 1.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace graphsail
