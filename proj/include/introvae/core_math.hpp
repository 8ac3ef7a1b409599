#pragma once

// Loss kernels shared by training, metrics and tests: Gaussian KL against
// the standard normal prior, reparameterized sampling, pixel MSE, the margin
// hinge, the two player losses, and the Frechet distance between Gaussians.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "introvae/errors.hpp"

namespace introvae {

// Posterior parameters for a batch of samples, row-major (batch x dim).
// A single sample is a batch of one.
template <class T>
struct LatentStats {
  int batch = 0;
  int dim = 0;
  std::vector<T> mu;
  std::vector<T> log_var;

  LatentStats() = default;
  LatentStats(int b, int d) : batch(b), dim(d), mu(std::size_t(b) * d), log_var(std::size_t(b) * d) {}
  LatentStats(std::vector<T> m, std::vector<T> lv)
      : batch(1), dim(static_cast<int>(m.size())), mu(std::move(m)), log_var(std::move(lv)) {}

  std::span<const T> mu_row(int i) const { return {mu.data() + std::size_t(i) * dim, std::size_t(dim)}; }
  std::span<const T> log_var_row(int i) const {
    return {log_var.data() + std::size_t(i) * dim, std::size_t(dim)};
  }
};

struct HyperParams {
  double margin = 90.0;
  double alpha = 0.25;
  double beta = 0.0025;
  int latent_dim = 512;
  double learning_rate = 2e-4;
  int batch_size = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
    if (latent_dim <= 0) throw ConfigError("latent_dim must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size <= 0) throw ConfigError("batch size must be positive");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
      throw ConfigError("Adam moment decay rates must lie in (0,1)");
  }
};

// Per-batch loss terms of one training step (batch means).
struct LossReport {
  double l_ae = 0.0;
  double kl_real = 0.0;
  double kl_rec = 0.0;
  double kl_sample = 0.0;
  double l_encoder = 0.0;
  double l_generator = 0.0;
};

template <class T>
void validate(const LatentStats<T>& s) {
  if (s.dim <= 0 || s.batch <= 0) throw ShapeError("latent stats must have positive batch and dim");
  const auto n = std::size_t(s.batch) * s.dim;
  if (s.mu.size() != n || s.log_var.size() != n) throw ShapeError("mu/log_var length mismatch");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(s.mu[i]) || !std::isfinite(s.log_var[i]))
      throw InvalidInput("non-finite latent statistics");
}

// KL(N(mu, sigma^2) || N(0, I)) for each sample, summed over latent dims.
template <class T>
std::vector<T> kl_per_sample(const LatentStats<T>& s) {
  validate(s);
  std::vector<T> out(s.batch);
  for (int i = 0; i < s.batch; ++i) {
    auto mu = s.mu_row(i);
    auto lv = s.log_var_row(i);
    T acc = 0;
    for (int j = 0; j < s.dim; ++j) acc += mu[j] * mu[j] + std::exp(lv[j]) - T(1) - lv[j];
    out[i] = T(0.5) * acc;
  }
  return out;
}

// Batch-mean KL divergence.
template <class T>
T kl_divergence(const LatentStats<T>& s) {
  const auto per = kl_per_sample(s);
  T acc = 0;
  for (T v : per) acc += v;
  return acc / T(s.batch);
}

// Accumulates scale * d(kl_divergence)/d(mu, log_var) into the gradient buffers.
template <class T>
void kl_divergence_grad(const LatentStats<T>& s, T scale, std::span<T> d_mu, std::span<T> d_log_var) {
  const auto n = s.mu.size();
  if (d_mu.size() != n || d_log_var.size() != n) throw ShapeError("gradient buffer size mismatch");
  const T w = scale / T(s.batch);
  for (std::size_t i = 0; i < n; ++i) {
    d_mu[i] += w * s.mu[i];
    d_log_var[i] += w * T(0.5) * (std::exp(s.log_var[i]) - T(1));
  }
}

// z = mu + exp(log_var / 2) * eps
template <class T>
std::vector<T> reparameterize(const LatentStats<T>& s, std::span<const T> noise) {
  if (noise.size() != s.mu.size() || s.log_var.size() != s.mu.size())
    throw ShapeError("noise length does not match latent stats");
  std::vector<T> z(noise.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = s.mu[i] + std::exp(T(0.5) * s.log_var[i]) * noise[i];
  return z;
}

// Pulls dL/dz back through the reparameterization onto (mu, log_var).
template <class T>
void reparameterize_grad(const LatentStats<T>& s, std::span<const T> noise, std::span<const T> d_z,
                         std::span<T> d_mu, std::span<T> d_log_var) {
  for (std::size_t i = 0; i < d_z.size(); ++i) {
    d_mu[i] += d_z[i];
    d_log_var[i] += d_z[i] * noise[i] * T(0.5) * std::exp(T(0.5) * s.log_var[i]);
  }
}

// Half the summed squared pixel error, averaged over the batch.
template <class T>
T mse_recon(std::span<const T> x, std::span<const T> x_r, int batch) {
  if (x.size() != x_r.size()) throw ShapeError("mse_recon: image shapes differ");
  if (batch <= 0 || x.size() % std::size_t(batch) != 0) throw ShapeError("mse_recon: bad batch size");
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = x_r[i] - x[i];
    acc += d * d;
  }
  return T(0.5) * acc / T(batch);
}

// Accumulates scale * d(mse_recon)/d(x_r).
template <class T>
void mse_recon_grad(std::span<const T> x, std::span<const T> x_r, int batch, T scale, std::span<T> d_xr) {
  const T w = scale / T(batch);
  for (std::size_t i = 0; i < x.size(); ++i) d_xr[i] += w * (x_r[i] - x[i]);
}

template <class T>
constexpr T hinge(T margin, T value) {
  return std::max(T(0), margin - value);
}

// d hinge(margin, value) / d value; zero in the saturated region and at the kink.
template <class T>
constexpr T hinge_grad(T margin, T value) {
  return value < margin ? T(-1) : T(0);
}

inline double loss_encoder(double kl_real, double kl_rec, double kl_sample, double l_ae, const HyperParams& hp) {
  return kl_real + hp.alpha * (hinge(hp.margin, kl_rec) + hinge(hp.margin, kl_sample)) + hp.beta * l_ae;
}

inline double loss_generator(double kl_rec, double kl_sample, double l_ae, const HyperParams& hp) {
  return hp.alpha * (kl_rec + kl_sample) + hp.beta * l_ae;
}

// Partial derivatives of the two player losses with respect to their scalar inputs.
struct EncoderLossPartials {
  double d_kl_real, d_kl_rec, d_kl_sample, d_l_ae;
};

inline EncoderLossPartials loss_encoder_partials(double kl_rec, double kl_sample, const HyperParams& hp) {
  return {1.0, hp.alpha * hinge_grad(hp.margin, kl_rec), hp.alpha * hinge_grad(hp.margin, kl_sample), hp.beta};
}

struct GeneratorLossPartials {
  double d_kl_rec, d_kl_sample, d_l_ae;
};

inline GeneratorLossPartials loss_generator_partials(const HyperParams& hp) {
  return {hp.alpha, hp.alpha, hp.beta};
}

// Squared 2-Wasserstein distance between N(mean_a, cov_a) and N(mean_b, cov_b):
//   |mean_a - mean_b|^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2}).
// The trace of the cross term is computed from the symmetric matrix
// cov_a^{1/2} cov_b cov_a^{1/2}, whose eigenvalues are clamped at zero.
inline double frechet_distance(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a,
                               const Eigen::VectorXd& mean_b, const Eigen::MatrixXd& cov_b) {
  const auto n = mean_a.size();
  if (mean_b.size() != n || cov_a.rows() != n || cov_a.cols() != n || cov_b.rows() != n || cov_b.cols() != n)
    throw ShapeError("frechet_distance: dimension mismatch");
  if (!mean_a.allFinite() || !mean_b.allFinite() || !cov_a.allFinite() || !cov_b.allFinite())
    throw InvalidInput("frechet_distance: non-finite input");
  auto check_sym = [](const Eigen::MatrixXd& c) {
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
      throw InvalidInput("frechet_distance: covariance is not symmetric");
  };
  check_sym(cov_a);
  check_sym(cov_b);

  const Eigen::MatrixXd sym_a = 0.5 * (cov_a + cov_a.transpose());
  const Eigen::MatrixXd sym_b = 0.5 * (cov_b + cov_b.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(sym_a);
  const Eigen::VectorXd root_vals = eig_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = eig_a.eigenvectors() * root_vals.asDiagonal() * eig_a.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt_a * sym_b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_inner(inner, Eigen::EigenvaluesOnly);
  const double cross = eig_inner.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double d = (mean_a - mean_b).squaredNorm() + sym_a.trace() + sym_b.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

}  // namespace introvae
