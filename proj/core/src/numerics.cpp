#include "pbrl/numerics.hpp"

#include <cmath>
#include <numbers>

namespace pbrl {

bool all_finite(const Mat& m) { return m.allFinite(); }
bool all_finite(const Vec& v) { return v.allFinite(); }

SpdFactor::SpdFactor(const Mat& a) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("SpdFactor: matrix is not square");
  }
  if (!a.allFinite()) {
    throw NumericalError("SpdFactor: matrix has non-finite entries");
  }
  const double scale = 1.0 + a.cwiseAbs().maxCoeff();
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("SpdFactor: matrix is not symmetric");
  }
  llt_.compute(a);
  if (llt_.info() == Eigen::Success) return;

  const double d = static_cast<double>(a.rows());
  const double jitter = 1e-10 * std::abs(a.trace()) / std::max(1.0, d);
  Mat shifted = a;
  shifted.diagonal().array() += jitter;
  llt_.compute(shifted);
  if (llt_.info() != Eigen::Success) {
    throw NumericalError("SpdFactor: matrix is not positive-definite");
  }
  jittered_ = true;
}

Vec SpdFactor::solve(const Vec& b) const {
  if (b.size() != dim()) {
    throw std::invalid_argument("SpdFactor::solve: dimension mismatch");
  }
  Vec x = llt_.solve(b);
  if (!x.allFinite()) throw NumericalError("SpdFactor::solve: non-finite result");
  return x;
}

Mat SpdFactor::solve(const Mat& b) const {
  if (b.rows() != dim()) {
    throw std::invalid_argument("SpdFactor::solve: dimension mismatch");
  }
  Mat x = llt_.solve(b);
  if (!x.allFinite()) throw NumericalError("SpdFactor::solve: non-finite result");
  return x;
}

double SpdFactor::quad_form(const Vec& phi) const {
  if (phi.size() != dim()) {
    throw std::invalid_argument("quad_form: dimension mismatch");
  }
  Vec z = llt_.matrixL().solve(phi);
  return z.squaredNorm();
}

Mat SpdFactor::inverse() const { return solve(Mat(Mat::Identity(dim(), dim()))); }

Vec spd_solve(const Mat& a, const Vec& b) { return SpdFactor(a).solve(b); }

double quad_form(const Vec& phi, const SpdFactor& factor) { return factor.quad_form(phi); }

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec grad(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t SeededRng::next_u64() {
  ++counter_;
  return splitmix64_mix(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("SeededRng::below: n must be positive");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return r % n;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(angle);
  has_spare_ = true;
  return r * std::cos(angle);
}

SeededRng SeededRng::derive(std::uint64_t key) const {
  return SeededRng(splitmix64_mix(seed_ ^ splitmix64_mix(key + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace pbrl
