#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sckd {

using Scalar = double;
using Index = Eigen::Index;

/// Dense row-major-agnostic matrix; rows are samples or tokens throughout.
template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVectorX = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Matrix = MatrixX<Scalar>;
using Vector = VectorX<Scalar>;
using RowVector = RowVectorX<Scalar>;

/// Dense relation index, assigned in order of first appearance in a task sequence.
/// Doubles as the classifier row for that relation.
using RelationId = int;
using SampleId = std::int64_t;

// Error taxonomy. Each maps to one failure class named in the public contracts.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MiningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define SCKD_REQUIRE(cond, msg)                 \
  do {                                          \
    if (!(cond)) throw ::sckd::ContractError(msg); \
  } while (0)

using Rng = std::mt19937_64;

/// Independent random streams; each (seed, stream, task, phase) tuple yields its own generator.
enum class Stream : std::uint32_t {
  kData = 1,
  kInit = 2,
  kDropout = 3,
  kNoise = 4,
  kCluster = 5,
  kSynthetic = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, int task = 0, int phase = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(task),
                    static_cast<std::uint32_t>(phase)};
  return Rng(seq);
}

/// Box-Muller standard normal. std::normal_distribution is implementation-defined;
/// this keeps generated data identical across standard libraries.
inline Scalar standard_normal(Rng& rng) {
  constexpr Scalar kTwoPi = 6.283185307179586476925286766559;
  Scalar u1 = 0.0;
  do {
    u1 = static_cast<Scalar>(rng() >> 11) * 0x1.0p-53;
  } while (u1 <= 0.0);
  const Scalar u2 = static_cast<Scalar>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

inline Scalar uniform01(Rng& rng) { return static_cast<Scalar>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) by rejection; portable across standard libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = 0;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Fisher-Yates with uniform_index; std::shuffle's draw pattern is unspecified.
template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    using std::swap;
    swap(c[i - 1], c[j]);
  }
}

}  // namespace sckd
