#include "pbrl/approximator.hpp"

#include "binary_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace pbrl {

std::size_t MlpParams::input_size() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols());
}

std::size_t MlpParams::output_size() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.rows());
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<std::size_t> MlpParams::layer_sizes() const {
  std::vector<std::size_t> sizes;
  if (layers.empty()) return sizes;
  sizes.push_back(input_size());
  for (const auto& l : layers) sizes.push_back(static_cast<std::size_t>(l.weight.rows()));
  return sizes;
}

MlpParams MlpParams::zeros(std::span<const std::size_t> sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("MlpParams: need at least input and output size");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(sizes[i]);
    const auto out = static_cast<Eigen::Index>(sizes[i + 1]);
    if (in == 0 || out == 0) throw std::invalid_argument("MlpParams: zero layer width");
    p.layers.push_back({Mat::Zero(out, in), Vec::Zero(out)});
  }
  return p;
}

MlpParams MlpParams::zeros_like() const {
  MlpParams p;
  p.layers.reserve(layers.size());
  for (const auto& l : layers) {
    p.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
  }
  return p;
}

void MlpParams::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

void MlpParams::scale(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
}

void MlpParams::axpy(double s, const MlpParams& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += s * other.layers[i].weight;
    layers[i].bias += s * other.layers[i].bias;
  }
}

bool MlpParams::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

double MlpParams::max_abs_diff(const MlpParams& other) const {
  double m = 0.0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    m = std::max(m, (layers[i].weight - other.layers[i].weight).cwiseAbs().maxCoeff());
    m = std::max(m, (layers[i].bias - other.layers[i].bias).cwiseAbs().maxCoeff());
  }
  return m;
}

Vec MlpParams::flatten() const {
  Vec flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat[at++] = l.weight(r, c);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat[at++] = l.bias[r];
  }
  return flat;
}

void MlpParams::assign_flat(const Vec& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw std::invalid_argument("assign_flat: size mismatch");
  }
  Eigen::Index at = 0;
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[at++];
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[at++];
  }
}

MlpParams make_mlp(std::span<const std::size_t> sizes, SeededRng& rng) {
  MlpParams p = MlpParams::zeros(sizes);
  for (auto& l : p.layers) {
    const double fan_in = static_cast<double>(l.weight.cols());
    const double wb = std::sqrt(6.0 / fan_in);
    const double bb = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(-wb, wb);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = rng.uniform(-bb, bb);
  }
  return p;
}

Mat forward(const MlpParams& params, const Mat& x, ForwardCache* cache) {
  if (static_cast<std::size_t>(x.rows()) != params.input_size()) {
    throw std::invalid_argument("forward: input dimension " + std::to_string(x.rows()) +
                                " does not match network input " +
                                std::to_string(params.input_size()));
  }
  if (cache) cache->inputs.resize(params.layers.size());
  Mat a = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Mat z = layer.weight * a;
    z.colwise() += layer.bias;
    if (cache) cache->inputs[l] = std::move(a);
    if (l + 1 < params.layers.size()) {
      a = z.cwiseMax(0.0);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

void backward(const MlpParams& params, const ForwardCache& cache, const Mat& upstream,
              MlpParams& grad, Mat* input_grad) {
  Mat g = upstream;
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    const auto& layer = params.layers[i];
    const Mat& a_in = cache.inputs[i];
    grad.layers[i].weight.noalias() += g * a_in.transpose();
    grad.layers[i].bias += g.rowwise().sum();
    if (i > 0 || input_grad) {
      Mat back = layer.weight.transpose() * g;
      if (i > 0) {
        // a_in = relu(z) so a_in > 0 exactly where the rectifier was active.
        g = back.cwiseProduct((a_in.array() > 0.0).cast<double>().matrix());
      } else {
        *input_grad = std::move(back);
      }
    }
  }
}

double mlp_forward(const MlpParams& params, const Vec& x) {
  Mat out = forward(params, Mat(x));
  return out(0, 0);
}

MlpParams mlp_backward(const MlpParams& params, const Vec& x, double upstream) {
  ForwardCache cache;
  forward(params, Mat(x), &cache);
  MlpParams grad = params.zeros_like();
  Mat up = Mat::Constant(static_cast<Eigen::Index>(params.output_size()), 1, upstream);
  backward(params, cache, up, grad);
  return grad;
}

void pessimistic_init(MlpParams& params, double lo, double hi, SeededRng& rng) {
  if (lo > hi) throw std::invalid_argument("pessimistic_init: lower bound exceeds upper bound");
  for (auto& l : params.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(lo, hi);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = rng.uniform(lo, hi);
  }
}

Mat spectral_normalize(const Mat& w, int iterations, SpectralState* state) {
  if (iterations < 1) throw std::invalid_argument("spectral_normalize: iterations must be >= 1");
  if (w.size() == 0 || w.cwiseAbs().maxCoeff() == 0.0) return w;

  Vec u;
  if (state && state->u.size() == w.rows()) {
    u = state->u;
  } else {
    u = Vec::LinSpaced(w.rows(), 1.0, 1.5);
  }
  u.normalize();
  Vec v;
  for (int it = 0; it < iterations; ++it) {
    v = w.transpose() * u;
    const double vn = v.norm();
    if (vn == 0.0) break;
    v /= vn;
    u = w * v;
    const double un = u.norm();
    if (un == 0.0) break;
    u /= un;
  }
  if (state) state->u = u;
  const double sigma = u.dot(w * v);
  if (!(sigma > 0.0)) return w;
  return w / sigma;
}

Adam::Adam(const MlpParams& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {
  if (lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
}

void Adam::step(MlpParams& params, const MlpParams& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weight, grads.layers[i].weight, m_.layers[i].weight, v_.layers[i].weight);
    update(params.layers[i].bias, grads.layers[i].bias, m_.layers[i].bias, v_.layers[i].bias);
  }
}

void polyak_update(MlpParams& target, const MlpParams& online, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("polyak_update: tau outside [0, 1]");
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    target.layers[i].weight = (1.0 - tau) * target.layers[i].weight + tau * online.layers[i].weight;
    target.layers[i].bias = (1.0 - tau) * target.layers[i].bias + tau * online.layers[i].bias;
  }
}

namespace {

std::vector<std::size_t> critic_sizes(const CriticShape& shape) {
  std::vector<std::size_t> sizes{shape.input_size};
  sizes.insert(sizes.end(), shape.hidden.begin(), shape.hidden.end());
  sizes.push_back(1);
  return sizes;
}

}  // namespace

EnsembleCritic::EnsembleCritic(const CriticShape& shape, std::uint64_t seed)
    : shape_(shape), seed_(seed) {
  if (shape.input_size == 0) throw std::invalid_argument("EnsembleCritic: zero input size");
  if (shape.ensemble_size == 0) throw std::invalid_argument("EnsembleCritic: empty ensemble");
  const auto sizes = critic_sizes(shape);
  SeededRng root(seed);
  for (std::size_t k = 0; k < shape.ensemble_size; ++k) {
    SeededRng member_rng = root.derive(2 * k);
    SeededRng prior_rng = root.derive(2 * k + 1);
    PriorPair pair;
    pair.trainable = make_mlp(sizes, member_rng);
    pair.prior = shape.prior_enabled ? make_mlp(sizes, prior_rng) : MlpParams::zeros(sizes);
    members_.push_back(pair);
  }
  targets_ = members_;
}

Eigen::RowVectorXd EnsembleCritic::predict_member(std::size_t k, const Mat& x, bool use_target,
                                                  ForwardCache* cache) const {
  const PriorPair& pair = use_target ? targets_.at(k) : members_.at(k);
  Mat out = forward(pair.trainable, x, cache);
  if (shape_.prior_enabled && shape_.prior_scale != 0.0) {
    out += shape_.prior_scale * forward(pair.prior, x);
  }
  return out.row(0);
}

Mat EnsembleCritic::predict(const Mat& x, bool use_target) const {
  Mat out(static_cast<Eigen::Index>(size()), x.cols());
  for (std::size_t k = 0; k < size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = predict_member(k, x, use_target);
  }
  return out;
}

void EnsembleCritic::polyak(double tau) {
  for (std::size_t k = 0; k < size(); ++k) {
    polyak_update(targets_[k].trainable, members_[k].trainable, tau);
  }
}

void EnsembleCritic::sync_targets() {
  for (std::size_t k = 0; k < size(); ++k) targets_[k].trainable = members_[k].trainable;
}

namespace {

void write_params(std::ostream& out, const MlpParams& p) {
  const Vec flat = p.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) detail::write_f64(out, flat[i]);
}

void read_params(std::istream& in, MlpParams& p) {
  Vec flat(static_cast<Eigen::Index>(p.parameter_count()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = detail::read_f64(in);
  p.assign_flat(flat);
}

}  // namespace

void EnsembleCritic::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  nlohmann::json header{{"format", "pbrl-critic-v1"},
                        {"layer_sizes", critic_sizes(shape_)},
                        {"K", shape_.ensemble_size},
                        {"prior_enabled", shape_.prior_enabled},
                        {"prior_scale", shape_.prior_scale},
                        {"seed", seed_}};
  out << header.dump() << '\n';
  for (const auto& m : members_) {
    write_params(out, m.trainable);
    write_params(out, m.prior);
  }
  for (const auto& t : targets_) {
    write_params(out, t.trainable);
    write_params(out, t.prior);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

EnsembleCritic EnsembleCritic::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  const auto header = nlohmann::json::parse(detail::read_header_line(in));
  if (header.at("format") != "pbrl-critic-v1") throw std::runtime_error("unknown checkpoint format");
  const auto sizes = header.at("layer_sizes").get<std::vector<std::size_t>>();
  if (sizes.size() < 2 || sizes.back() != 1) throw std::runtime_error("bad critic layer sizes");

  EnsembleCritic critic;
  critic.shape_.input_size = sizes.front();
  critic.shape_.hidden.assign(sizes.begin() + 1, sizes.end() - 1);
  critic.shape_.ensemble_size = header.at("K").get<std::size_t>();
  critic.shape_.prior_enabled = header.at("prior_enabled").get<bool>();
  critic.shape_.prior_scale = header.at("prior_scale").get<double>();
  critic.seed_ = header.at("seed").get<std::uint64_t>();
  const MlpParams blank = MlpParams::zeros(sizes);
  critic.members_.assign(critic.shape_.ensemble_size, PriorPair{blank, blank});
  critic.targets_ = critic.members_;
  for (auto& m : critic.members_) {
    read_params(in, m.trainable);
    read_params(in, m.prior);
  }
  for (auto& t : critic.targets_) {
    read_params(in, t.trainable);
    read_params(in, t.prior);
  }
  return critic;
}

}  // namespace pbrl
