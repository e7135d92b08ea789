#pragma once

// Dense autoencoder  n -> hidden (ELU) -> latent -> hidden (ELU) -> n,  trained by full-batch
// gradient descent on the mean smooth-L1 reconstruction loss (transition at 1.0).

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "popdyn/error.hpp"
#include "popdyn/metrics.hpp"

namespace popdyn {

inline constexpr std::size_t kDefaultHidden = 512;
inline constexpr std::size_t kDefaultLatent = 4;

struct AutoencoderModel {
  std::size_t n_input = 0;
  std::size_t n_hidden = kDefaultHidden;
  std::size_t n_latent = kDefaultLatent;
  // Encoder: w1 (hidden x input), w2 (latent x hidden). Decoder mirrors it.
  Eigen::MatrixXd w1, w2, w3, w4;
  Eigen::VectorXd b1, b2, b3, b4;

  std::size_t parameter_count() const noexcept {
    return 2 * (n_input * n_hidden + n_hidden * n_latent) + 2 * n_hidden + n_latent + n_input;
  }

  // Visits every parameter block in serialization order.
  template <class Fn>
  void for_each_block(Fn&& fn) {
    fn(w1); fn(b1); fn(w2); fn(b2); fn(w3); fn(b3); fn(w4); fn(b4);
  }
  template <class Fn>
  void for_each_block(Fn&& fn) const {
    fn(w1); fn(b1); fn(w2); fn(b2); fn(w3); fn(b3); fn(w4); fn(b4);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for_each_block([&](const auto& block) {
      for (Eigen::Index r = 0; r < block.rows(); ++r)
        for (Eigen::Index c = 0; c < block.cols(); ++c) out.push_back(block(r, c));
    });
    return out;
  }

  void unflatten(std::span<const double> p) {
    if (p.size() != parameter_count()) throw ValidationError("parameter vector has the wrong length");
    std::size_t k = 0;
    for_each_block([&](auto& block) {
      for (Eigen::Index r = 0; r < block.rows(); ++r)
        for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) = p[k++];
    });
  }

  bool finite() const {
    bool ok = true;
    for_each_block([&](const auto& block) { ok = ok && block.allFinite(); });
    return ok;
  }
};

namespace detail {

// Portable uniform draw in [lo, hi) from raw 64-bit engine output.
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline Eigen::MatrixXd elu(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}

inline Eigen::MatrixXd elu_grad(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
}

inline double smooth_l1(double r) {
  const double a = std::abs(r);
  return a < 1.0 ? 0.5 * r * r : a - 0.5;
}

inline double smooth_l1_grad(double r) { return r > 1.0 ? 1.0 : (r < -1.0 ? -1.0 : r); }

inline Eigen::MatrixXd to_columns(const std::vector<std::vector<double>>& rows, std::size_t n_input) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n_input), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (rows[c].size() != n_input) throw ValidationError("autoencoder input has the wrong length");
    for (std::size_t r = 0; r < n_input; ++r) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[c][r];
  }
  return x;
}

struct Activations {
  Eigen::MatrixXd z1, h1, z2, z3, h3, y;
};

inline Activations forward_batch(const AutoencoderModel& m, const Eigen::MatrixXd& x) {
  Activations a;
  a.z1 = (m.w1 * x).colwise() + m.b1;
  a.h1 = elu(a.z1);
  a.z2 = (m.w2 * a.h1).colwise() + m.b2;
  a.z3 = (m.w3 * a.z2).colwise() + m.b3;
  a.h3 = elu(a.z3);
  a.y = (m.w4 * a.h3).colwise() + m.b4;
  return a;
}

inline double batch_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& x) {
  return (y - x).unaryExpr([](double r) { return smooth_l1(r); }).mean();
}

}  // namespace detail

inline AutoencoderModel ae_init(std::size_t n_input, std::uint64_t seed, std::size_t n_hidden = kDefaultHidden,
                                std::size_t n_latent = kDefaultLatent) {
  if (n_latent < 1 || n_hidden < 1) throw ValidationError("autoencoder layers must be non-empty");
  if (n_input < n_latent)
    throw ValidationError("autoencoder input width " + std::to_string(n_input) + " is below the latent width " +
                          std::to_string(n_latent));
  AutoencoderModel m;
  m.n_input = n_input;
  m.n_hidden = n_hidden;
  m.n_latent = n_latent;
  std::mt19937_64 rng(seed);
  auto layer = [&](Eigen::MatrixXd& w, Eigen::VectorXd& b, std::size_t out, std::size_t in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    b.resize(static_cast<Eigen::Index>(out));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = detail::uniform(rng, -bound, bound);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = detail::uniform(rng, -bound, bound);
  };
  layer(m.w1, m.b1, n_hidden, n_input);
  layer(m.w2, m.b2, n_latent, n_hidden);
  layer(m.w3, m.b3, n_hidden, n_latent);
  layer(m.w4, m.b4, n_input, n_hidden);
  return m;
}

struct AeOutput {
  std::vector<double> reconstruction;
  std::vector<double> latent;
};

inline AeOutput ae_forward(const AutoencoderModel& m, std::span<const double> x) {
  if (x.size() != m.n_input)
    throw ValidationError("autoencoder expects " + std::to_string(m.n_input) + " inputs, got " +
                          std::to_string(x.size()));
  const Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const auto a = detail::forward_batch(m, col);
  return {{a.y.data(), a.y.data() + a.y.size()}, {a.z2.data(), a.z2.data() + a.z2.size()}};
}

inline std::vector<double> ae_encode(const AutoencoderModel& m, std::span<const double> x) {
  return ae_forward(m, x).latent;
}

inline double smooth_l1_loss(std::span<const double> reconstruction, std::span<const double> target) {
  if (reconstruction.size() != target.size() || target.empty())
    throw ValidationError("smooth-L1 loss needs equal, non-empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += detail::smooth_l1(reconstruction[i] - target[i]);
  return s / static_cast<double>(target.size());
}

inline double ae_loss(const AutoencoderModel& m, const std::vector<std::vector<double>>& rows) {
  const auto x = detail::to_columns(rows, m.n_input);
  return detail::batch_loss(detail::forward_batch(m, x).y, x);
}

/// Loss over the batch and its gradient with respect to every parameter (same layout as the model).
inline std::pair<double, AutoencoderModel> ae_loss_and_gradient(const AutoencoderModel& m, const Eigen::MatrixXd& x) {
  const auto a = detail::forward_batch(m, x);
  const double count = static_cast<double>(x.size());
  const Eigen::MatrixXd dy = (a.y - x).unaryExpr([](double r) { return detail::smooth_l1_grad(r); }) / count;

  AutoencoderModel g = m;
  g.w4 = dy * a.h3.transpose();
  g.b4 = dy.rowwise().sum();
  const Eigen::MatrixXd dz3 = (m.w4.transpose() * dy).cwiseProduct(detail::elu_grad(a.z3));
  g.w3 = dz3 * a.z2.transpose();
  g.b3 = dz3.rowwise().sum();
  const Eigen::MatrixXd dz2 = m.w3.transpose() * dz3;
  g.w2 = dz2 * a.h1.transpose();
  g.b2 = dz2.rowwise().sum();
  const Eigen::MatrixXd dz1 = (m.w2.transpose() * dz2).cwiseProduct(detail::elu_grad(a.z1));
  g.w1 = dz1 * x.transpose();
  g.b1 = dz1.rowwise().sum();
  return {detail::batch_loss(a.y, x), std::move(g)};
}

inline std::pair<double, AutoencoderModel> ae_loss_and_gradient(const AutoencoderModel& m,
                                                                 const std::vector<std::vector<double>>& rows) {
  return ae_loss_and_gradient(m, detail::to_columns(rows, m.n_input));
}

struct AeTrainResult {
  AutoencoderModel model;
  std::vector<double> loss_trace;  // loss before the first update, then after each epoch
};

inline constexpr int kDefaultEpochs = 200;
inline constexpr double kDefaultStepSize = 0.1;

inline AeTrainResult ae_train(AutoencoderModel m, const std::vector<std::vector<double>>& rows, int epochs,
                              double step_size) {
  if (rows.empty()) throw ValidationError("autoencoder training needs at least one row");
  if (epochs < 0 || !(step_size >= 0.0)) throw ValidationError("epochs and step size must be non-negative");
  const auto x = detail::to_columns(rows, m.n_input);
  AeTrainResult out;
  out.loss_trace.reserve(static_cast<std::size_t>(epochs) + 1);
  for (int e = 0; e <= epochs; ++e) {
    auto [loss, g] = ae_loss_and_gradient(m, x);
    if (!std::isfinite(loss))
      throw StageError("autoencoder", "training diverged at epoch " + std::to_string(e) +
                                          " (non-finite loss); lower the step size");
    out.loss_trace.push_back(loss);
    if (e == epochs || step_size == 0.0) {
      if (step_size == 0.0) out.loss_trace.resize(static_cast<std::size_t>(epochs) + 1, loss);
      break;
    }
    m.w1 -= step_size * g.w1;
    m.b1 -= step_size * g.b1;
    m.w2 -= step_size * g.w2;
    m.b2 -= step_size * g.b2;
    m.w3 -= step_size * g.w3;
    m.b3 -= step_size * g.b3;
    m.w4 -= step_size * g.w4;
    m.b4 -= step_size * g.b4;
  }
  out.model = std::move(m);
  return out;
}

// Flat binary: u64 input, hidden, latent, then w1 b1 w2 b2 w3 b3 w4 b4 row-major, little-endian f64.
inline void write_binary(std::ostream& out, const AutoencoderModel& m) {
  detail::put_u64_le(out, m.n_input);
  detail::put_u64_le(out, m.n_hidden);
  detail::put_u64_le(out, m.n_latent);
  for (double p : m.flatten()) detail::put_f64_le(out, p);
}

inline AutoencoderModel read_autoencoder(std::istream& in) {
  const auto n_input = detail::get_u64_le(in);
  const auto n_hidden = detail::get_u64_le(in);
  const auto n_latent = detail::get_u64_le(in);
  if (n_input > (1u << 24) || n_hidden > (1u << 20) || n_latent > (1u << 20))
    throw ValidationError("implausible autoencoder dimensions in header");
  AutoencoderModel m = ae_init(n_input, 0, n_hidden, n_latent);
  std::vector<double> p(m.parameter_count());
  for (double& x : p) x = detail::get_f64_le(in);
  m.unflatten(p);
  return m;
}

}  // namespace popdyn
