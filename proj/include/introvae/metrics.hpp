#pragma once

// Evaluation metrics: multi-scale SSIM and the mean-pairwise diversity score
// built on it, RMSE, Gaussian fits and Frechet distance over feature sets,
// and exact pixel-L1 nearest neighbours.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "introvae/core_math.hpp"
#include "introvae/data.hpp"
#include "introvae/errors.hpp"
#include "introvae/rng.hpp"
#include "introvae/tensor.hpp"

namespace introvae {

struct MsSsimConfig {
  int scales = 5;
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Largest scale count <= requested such that the smallest scale still fits
// one window: min_side >= 2^(scales-1) * window.
inline int effective_scales(const MsSsimConfig& cfg, int min_side) {
  int s = std::min(cfg.scales, static_cast<int>(cfg.weights.size()));
  while (s > 1 && (min_side >> (s - 1)) < cfg.window) --s;
  return s;
}

namespace detail {

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[std::size_t(y) * w + x]; }
};

inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) sum += g[std::size_t(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (auto& x : g) x /= sum;
  return g;
}

// Separable 'valid' filtering.
inline Plane filter_valid(const Plane& p, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int oh = p.h - k + 1, ow = p.w - k + 1;
  Plane tmp{p.h, ow, std::vector<double>(std::size_t(p.h) * ow)};
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < ow; ++x) {
      double a = 0;
      for (int t = 0; t < k; ++t) a += taps[std::size_t(t)] * p.at(y, x + t);
      tmp.v[std::size_t(y) * ow + x] = a;
    }
  Plane out{oh, ow, std::vector<double>(std::size_t(oh) * ow)};
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double a = 0;
      for (int t = 0; t < k; ++t) a += taps[std::size_t(t)] * tmp.at(y + t, x);
      out.v[std::size_t(y) * ow + x] = a;
    }
  return out;
}

inline Plane downsample2(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, std::vector<double>(std::size_t(p.h / 2) * (p.w / 2))};
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.v[std::size_t(y) * out.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
  return out;
}

template <class T>
Plane luma(std::span<const T> img, int channels, int h, int w) {
  Plane p{h, w, std::vector<double>(std::size_t(h) * w, 0.0)};
  const std::size_t plane = std::size_t(h) * w;
  for (int c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) p.v[i] += double(img[std::size_t(c) * plane + i]) / channels;
  return p;
}

// Mean contrast-structure and mean full SSIM over one scale.
inline std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, const std::vector<double>& taps, double c1,
                                            double c2) {
  Plane aa = a, bb = b, ab = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  const Plane mu_a = filter_valid(a, taps), mu_b = filter_valid(b, taps);
  const Plane e_aa = filter_valid(aa, taps), e_bb = filter_valid(bb, taps), e_ab = filter_valid(ab, taps);
  double cs_sum = 0, ssim_sum = 0;
  const std::size_t n = mu_a.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma, vb = e_bb.v[i] - mb * mb, cov = e_ab.v[i] - ma * mb;
    const double cs = (2 * cov + c2) / (va + vb + c2);
    const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    cs_sum += cs;
    ssim_sum += l * cs;
  }
  return {cs_sum / double(n), ssim_sum / double(n)};
}

}  // namespace detail

// Multi-scale SSIM on the channel-averaged luma of two (C, H, W) images.
// Negative per-scale terms are clamped to zero before exponentiation.
template <class T>
double ms_ssim(std::span<const T> a, std::span<const T> b, int channels, int height, int width,
               const MsSsimConfig& cfg = {}, const WarningSink* warn = nullptr) {
  if (a.size() != b.size() || a.size() != std::size_t(channels) * height * width)
    throw ShapeError("ms_ssim: image shapes differ");
  const int scales = effective_scales(cfg, std::min(height, width));
  if (std::min(height, width) < cfg.window) throw ShapeError("ms_ssim: image smaller than the SSIM window");
  if (scales < cfg.scales && warn && *warn)
    (*warn)("ms_ssim: " + std::to_string(height) + "x" + std::to_string(width) + " supports only " +
            std::to_string(scales) + " scale(s); reducing from " + std::to_string(cfg.scales));
  std::vector<double> w(cfg.weights.begin(), cfg.weights.begin() + scales);
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= wsum;
  const auto taps = detail::gaussian_taps(cfg.window, cfg.sigma);
  const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2), c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  auto pa = detail::luma(a, channels, height, width);
  auto pb = detail::luma(b, channels, height, width);
  double result = 1.0;
  for (int s = 0; s < scales; ++s) {
    const auto [cs, full] = detail::ssim_terms(pa, pb, taps, c1, c2);
    const double term = s == scales - 1 ? full : cs;
    result *= std::pow(std::max(term, 0.0), w[std::size_t(s)]);
    if (s + 1 < scales) {
      pa = detail::downsample2(pa);
      pb = detail::downsample2(pb);
    }
  }
  return std::clamp(result, 0.0, 1.0);
}

template <class T>
double ms_ssim(const Tensor<T>& a, const Tensor<T>& b, const MsSsimConfig& cfg = {}, const WarningSink* warn = nullptr) {
  if (a.shape() != b.shape() || a.dim(0) != 1) throw ShapeError("ms_ssim: expects two single images of equal shape");
  return ms_ssim<T>(a.span(), b.span(), a.dim(1), a.dim(2), a.dim(3), cfg, warn);
}

// Mean MS-SSIM over n_pairs random distinct-index pairs from an (N, C, H, W)
// sample set. Lower means more diverse.
template <class T>
double pair_diversity(const Tensor<T>& samples, int n_pairs, std::uint64_t seed, const MsSsimConfig& cfg = {},
                      const WarningSink* warn = nullptr) {
  if (n_pairs <= 0) throw ConfigError("pair_diversity: n_pairs must be positive");
  const int n = samples.dim(0);
  if (n < 2) throw ConfigError("pair_diversity needs at least two samples");
  Rng rng(seed);
  double acc = 0;
  for (int p = 0; p < n_pairs; ++p) {
    const auto i = static_cast<int>(rng.below(std::uint64_t(n)));
    auto j = static_cast<int>(rng.below(std::uint64_t(n - 1)));
    if (j >= i) ++j;
    acc += ms_ssim<T>(samples.slice(i), samples.slice(j), samples.dim(1), samples.dim(2), samples.dim(3), cfg,
                      p == 0 ? warn : nullptr);
  }
  return acc / n_pairs;
}

// Root mean squared pixel error over all samples and pixels.
template <class T>
double rmse(const Tensor<T>& originals, const Tensor<T>& reconstructions) {
  if (originals.shape() != reconstructions.shape()) throw ShapeError("rmse: shape mismatch");
  if (originals.empty()) throw ShapeError("rmse: empty input");
  double acc = 0;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const double d = double(reconstructions[i]) - double(originals[i]);
    acc += d * d;
  }
  return std::sqrt(acc / double(originals.size()));
}

enum class FeatureProvenance { pixel_flatten, external_file };

struct FeatureSet {
  Eigen::MatrixXd features;  // n_samples x feature_dim
  FeatureProvenance provenance = FeatureProvenance::pixel_flatten;
};

template <class T>
FeatureSet pixel_features(const Tensor<T>& images) {
  const int n = images.dim(0);
  const auto d = static_cast<Eigen::Index>(images.size() / std::size_t(std::max(n, 1)));
  FeatureSet fs{Eigen::MatrixXd(n, d), FeatureProvenance::pixel_flatten};
  for (int i = 0; i < n; ++i) {
    auto s = images.slice(i);
    for (Eigen::Index j = 0; j < d; ++j) fs.features(i, j) = double(s[std::size_t(j)]);
  }
  return fs;
}

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  bool ridge_applied = false;
};

inline constexpr double kCovarianceRidge = 1e-6;

// Sample mean and unbiased covariance; adds kCovarianceRidge * I when the
// covariance is rank deficient (too few samples, or not positive definite).
inline GaussianFit fit_gaussian(const FeatureSet& fs) {
  const auto n = fs.features.rows(), d = fs.features.cols();
  if (n < 2) throw InvalidInput("fit_gaussian needs at least two samples");
  if (!fs.features.allFinite()) throw InvalidInput("fit_gaussian: non-finite features");
  GaussianFit g;
  g.mean = fs.features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = fs.features.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / double(n - 1);
  bool deficient = n < d + 1;
  if (!deficient) {
    Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
    if (llt.info() != Eigen::Success) {
      deficient = true;
    } else {
      const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
      deficient = diag.minCoeff() <= 1e-7 * std::max(1e-300, diag.maxCoeff());
    }
  }
  if (deficient) {
    g.cov.diagonal().array() += kCovarianceRidge;
    g.ridge_applied = true;
  }
  return g;
}

inline double frechet_score(const FeatureSet& real, const FeatureSet& fake) {
  if (real.features.cols() != fake.features.cols()) throw ShapeError("frechet_score: feature dimensions differ");
  const auto a = fit_gaussian(real), b = fit_gaussian(fake);
  return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

// Feature file: a header line "# introvae-features <rows> <cols>" followed
// by one comma-separated row per sample.
inline void write_feature_file(const std::filesystem::path& path, const FeatureSet& fs) {
  std::ofstream out(path);
  if (!out) throw TrainingAbort("cannot write " + path.string());
  out << "# introvae-features " << fs.features.rows() << ' ' << fs.features.cols() << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < fs.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < fs.features.cols(); ++j) out << (j ? "," : "") << fs.features(i, j);
    out << '\n';
  }
}

inline FeatureSet read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open feature file " + path.string());
  std::string tag, name;
  long rows = -1, cols = -1;
  in >> tag >> name >> rows >> cols;
  if (tag != "#" || name != "introvae-features" || rows < 0 || cols < 0) throw LoadError("bad feature file header");
  FeatureSet fs{Eigen::MatrixXd(rows, cols), FeatureProvenance::external_file};
  std::string line;
  std::getline(in, line);
  for (long i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw LoadError("feature file truncated at row " + std::to_string(i));
    std::stringstream ss(line);
    std::string cell;
    long j = 0;
    while (std::getline(ss, cell, ',')) {
      if (j >= cols) throw LoadError("too many columns in feature file row " + std::to_string(i));
      try {
        fs.features(i, j++) = std::stod(cell);
      } catch (const std::exception&) {
        throw LoadError("bad number in feature file row " + std::to_string(i));
      }
    }
    if (j != cols) throw LoadError("too few columns in feature file row " + std::to_string(i));
  }
  return fs;
}

struct Neighbor {
  int index = 0;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Exact k nearest images by summed absolute pixel difference; ties go to
// the lower index.
template <class T>
std::vector<Neighbor> nearest_neighbors_l1(std::span<const T> query, const Dataset& ds, int k) {
  if (k <= 0) throw ConfigError("nearest_neighbors_l1: k must be positive");
  if (k > ds.size()) throw ConfigError("nearest_neighbors_l1: k exceeds dataset size");
  if (query.size() != ds.image_size()) throw ShapeError("nearest_neighbors_l1: query shape mismatch");
  std::vector<Neighbor> all(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    double d = 0;
    for (std::size_t p = 0; p < img.size(); ++p) d += std::abs(double(query[p]) - double(img[p]));
    all[std::size_t(i)] = {i, d};
  }
  auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  };
  std::partial_sort(all.begin(), all.begin() + k, all.end(), less);
  all.resize(std::size_t(k));
  return all;
}

// One row of a metric report: metric,name,value,n,seed
struct MetricRow {
  std::string metric;
  std::string name;
  double value = 0.0;
  long n = 0;
  std::uint64_t seed = 0;
};

inline std::string metric_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,name,value,n,seed\n";
  for (const auto& r : rows) os << r.metric << ',' << r.name << ',' << r.value << ',' << r.n << ',' << r.seed << '\n';
  return os.str();
}

}  // namespace introvae
