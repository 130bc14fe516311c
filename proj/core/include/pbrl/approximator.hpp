#pragma once

#include "pbrl/numerics.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace pbrl {

/// One affine layer; weight is (fan_out x fan_in).
struct Layer {
  Mat weight;
  Vec bias;
};

/// Fully-connected network: rectifier on hidden layers, identity on the output.
/// The same type doubles as a gradient container.
struct MlpParams {
  std::vector<Layer> layers;

  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t parameter_count() const;
  /// [input, hidden..., output]
  std::vector<std::size_t> layer_sizes() const;

  static MlpParams zeros(std::span<const std::size_t> sizes);
  MlpParams zeros_like() const;

  void set_zero();
  void scale(double s);
  /// this += s * other
  void axpy(double s, const MlpParams& other);
  bool all_finite() const;
  double max_abs_diff(const MlpParams& other) const;

  /// Parameters in declaration order: per layer, weight row-major then bias.
  Vec flatten() const;
  void assign_flat(const Vec& flat);
};

/// He-style uniform init: weights U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpParams make_mlp(std::span<const std::size_t> sizes, SeededRng& rng);

/// Activations kept from a forward pass so the backward pass is exact.
struct ForwardCache {
  std::vector<Mat> inputs;  // input to layer l, (fan_in x batch)
};

/// Batched forward: x is (input x batch), returns (output x batch).
Mat forward(const MlpParams& params, const Mat& x, ForwardCache* cache = nullptr);

/// Accumulates d(sum_b upstream_b . out_b)/dparams into grad. If input_grad is
/// given it receives the gradient with respect to x, (input x batch).
void backward(const MlpParams& params, const ForwardCache& cache, const Mat& upstream,
              MlpParams& grad, Mat* input_grad = nullptr);

double mlp_forward(const MlpParams& params, const Vec& x);
MlpParams mlp_backward(const MlpParams& params, const Vec& x, double upstream);

/// Redraws every weight and bias from U(lo, hi).
void pessimistic_init(MlpParams& params, double lo, double hi, SeededRng& rng);

struct PessimisticBounds {
  double lo;
  double hi;
};
inline constexpr PessimisticBounds kPiSmall{-0.2, 0.0};
inline constexpr PessimisticBounds kPiLarge{-1.0, 0.0};

/// Persistent left singular vector estimate for power iteration.
struct SpectralState {
  Vec u;
};

/// Divides w by its largest singular value, estimated with `iterations` power
/// iterations continuing from state (if given). Zero matrices come back unchanged.
Mat spectral_normalize(const Mat& w, int iterations, SpectralState* state = nullptr);

/// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  Adam(const MlpParams& like, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step(MlpParams& params, const MlpParams& grads);
  long steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  MlpParams m_, v_;
  long t_ = 0;
};

/// target <- (1 - tau) target + tau online
void polyak_update(MlpParams& target, const MlpParams& online, double tau);

/// Trainable network plus a frozen random prior; prediction = trainable + scale * prior.
struct PriorPair {
  MlpParams trainable;
  MlpParams prior;
};

struct CriticShape {
  std::size_t input_size = 0;
  std::vector<std::size_t> hidden{256, 256, 256};
  std::size_t ensemble_size = 10;
  bool prior_enabled = false;
  double prior_scale = 1.0;
};

/// K value networks, their K frozen priors and K Polyak-averaged target copies.
/// Member k's target only ever tracks member k.
class EnsembleCritic {
 public:
  EnsembleCritic() = default;
  EnsembleCritic(const CriticShape& shape, std::uint64_t seed);

  std::size_t size() const { return members_.size(); }
  const CriticShape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }

  PriorPair& member(std::size_t k) { return members_.at(k); }
  const PriorPair& member(std::size_t k) const { return members_.at(k); }
  PriorPair& target(std::size_t k) { return targets_.at(k); }
  const PriorPair& target(std::size_t k) const { return targets_.at(k); }

  /// Member k on a batch (input x batch) -> row vector (1 x batch). With a
  /// cache, activations of the trainable net are stored for backward().
  Eigen::RowVectorXd predict_member(std::size_t k, const Mat& x, bool use_target,
                                    ForwardCache* cache = nullptr) const;
  /// All members: (K x batch).
  Mat predict(const Mat& x, bool use_target) const;

  void polyak(double tau);
  /// Copies every trainable member into its target.
  void sync_targets();

  void save(const std::filesystem::path& path) const;
  static EnsembleCritic load(const std::filesystem::path& path);

 private:
  CriticShape shape_;
  std::uint64_t seed_ = 0;
  std::vector<PriorPair> members_;
  std::vector<PriorPair> targets_;
};

}  // namespace pbrl
