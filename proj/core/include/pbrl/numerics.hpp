#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace pbrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a factorization or solve cannot produce a finite answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool all_finite(const Mat& m);
bool all_finite(const Vec& v);

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// On a failed factorization a single jitter of 1e-10 * trace / d is added to
/// the diagonal before giving up with NumericalError.
class SpdFactor {
 public:
  explicit SpdFactor(const Mat& a);

  Eigen::Index dim() const { return llt_.matrixLLT().rows(); }
  Vec solve(const Vec& b) const;
  Mat solve(const Mat& b) const;
  /// phi^T A^{-1} phi, computed as ||L^{-1} phi||^2.
  double quad_form(const Vec& phi) const;
  /// Explicit A^{-1}; only meant for small matrices and reporting.
  Mat inverse() const;
  bool jittered() const { return jittered_; }

 private:
  Eigen::LLT<Mat> llt_;
  bool jittered_ = false;
};

Vec spd_solve(const Mat& a, const Vec& b);
double quad_form(const Vec& phi, const SpdFactor& factor);

/// Central finite-difference gradient, one coordinate at a time.
Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5);

/// Counter-based generator.
///
/// Draw i (0-based) is splitmix64_mix(seed + (i + 1) * 0x9E3779B97F4A7C15), where
/// splitmix64_mix is the finalizer of Steele et al.'s SplitMix64. Uniform
/// doubles take the top 53 bits; normals use the Box-Muller transform on two
/// consecutive uniforms and cache the second variate.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; the same (seed, key) always yields the same child.
  SeededRng derive(std::uint64_t key) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

/// FNV-1a over bytes; used for config and batch fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);

}  // namespace pbrl
