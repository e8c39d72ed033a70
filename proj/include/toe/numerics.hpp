#pragma once

// Dense numeric substrate: Eigen aliases, stable activations, temperature
// softmax and a bit-reproducible random generator.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

#include "toe/errors.hpp"

namespace toe {

using Real = double;

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major dense matrix; one row per evidence unit or sample.
using Matrix = MatrixT<Real>;
using Vector = VectorT<Real>;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

inline constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// log(p / (1 - p)), clamped so saturated probabilities stay finite.
template <typename Scalar>
Scalar logit(Scalar p) {
  constexpr Scalar lo = Scalar(1e-15);
  if (p < lo) p = lo;
  if (p > Scalar(1) - lo) p = Scalar(1) - lo;
  return std::log(p) - std::log1p(-p);
}

/// softmax(scores / tau). Entries equal to -inf are excluded and map to 0.
template <typename Derived>
VectorT<typename Derived::Scalar> softmax_temp(const Eigen::MatrixBase<Derived>& scores,
                                               typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  if (!(tau > Scalar(0))) throw ValidationError("softmax temperature must be positive");
  Scalar top = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (std::isfinite(scores(i)) && scores(i) > top) top = scores(i);
  }
  if (!std::isfinite(top)) throw ValidationError("no valid units");
  VectorT<Scalar> out(scores.size());
  Scalar total = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    out(i) = std::isfinite(scores(i)) ? std::exp((scores(i) - top) / tau) : Scalar(0);
    total += out(i);
  }
  return out / total;
}

/// Jacobian-vector product of softmax_temp: returns J^T u where
/// J = d softmax / d scores. Masked (-inf) entries receive zero gradient.
template <typename DerivedP, typename DerivedU>
VectorT<typename DerivedP::Scalar> softmax_temp_backward(const Eigen::MatrixBase<DerivedP>& probs,
                                                         const Eigen::MatrixBase<DerivedU>& upstream,
                                                         typename DerivedP::Scalar tau) {
  const auto dot = probs.dot(upstream);
  return (probs.array() * (upstream.array() - dot) / tau).matrix();
}

std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from a root seed and a purpose tag:
/// splitmix64(root XOR fnv1a64(tag)).
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

/// xoshiro256** seeded through splitmix64. Uniform reals take the top 53 bits;
/// normals use the Marsaglia polar method. No std distributions are involved,
/// so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  Real uniform();
  Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }
  Real normal();
  bool bernoulli(Real p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  Real spare_ = 0;
};

}  // namespace toe
