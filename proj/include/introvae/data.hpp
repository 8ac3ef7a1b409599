#pragma once

// Image datasets held in memory as (3, R, R) float planes in [0,1]: folder
// ingestion, a procedural synthetic family, seeded splits, and shuffled
// mini-batch schedules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "introvae/errors.hpp"
#include "introvae/image_io.hpp"
#include "introvae/rng.hpp"
#include "introvae/tensor.hpp"

namespace introvae {

enum class SyntheticFamily { gaussian_blobs, gradient_shapes };

inline SyntheticFamily parse_family(const std::string& s) {
  if (s == "gaussian-blobs") return SyntheticFamily::gaussian_blobs;
  if (s == "gradient-shapes") return SyntheticFamily::gradient_shapes;
  throw ConfigError("unknown synthetic family '" + s + "' (expected gaussian-blobs or gradient-shapes)");
}

inline const char* family_name(SyntheticFamily f) {
  return f == SyntheticFamily::gaussian_blobs ? "gaussian-blobs" : "gradient-shapes";
}

struct SyntheticSpec {
  int n_images = 2000;
  int resolution = 32;
  SyntheticFamily family = SyntheticFamily::gaussian_blobs;
  std::uint64_t seed = 0;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSpec {
  std::variant<std::filesystem::path, SyntheticSpec> source = SyntheticSpec{};
  int resolution = 32;
  SplitFractions split;
  std::uint64_t shuffle_seed = 0;
};

class Dataset {
 public:
  static constexpr int kChannels = 3;

  Dataset() = default;
  explicit Dataset(int resolution) : resolution_(resolution) {}

  int resolution() const { return resolution_; }
  int size() const { return static_cast<int>(names_.size()); }
  std::size_t image_size() const { return std::size_t(kChannels) * resolution_ * resolution_; }

  void add(std::string name, std::vector<float> planar) {
    if (planar.size() != image_size()) throw ShapeError("image does not match dataset resolution");
    pixels_.insert(pixels_.end(), planar.begin(), planar.end());
    names_.push_back(std::move(name));
  }

  std::span<const float> image(int i) const { return {pixels_.data() + image_size() * std::size_t(i), image_size()}; }
  const std::string& name(int i) const { return names_[std::size_t(i)]; }

  // Gathers the given images into an (N, 3, R, R) batch.
  template <class T = float>
  Tensor<T> gather(std::span<const int> idx) const {
    Tensor<T> out({static_cast<int>(idx.size()), kChannels, resolution_, resolution_});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto src = image(idx[k]);
      std::transform(src.begin(), src.end(), out.data() + k * image_size(), [](float v) { return static_cast<T>(v); });
    }
    return out;
  }

  template <class T = float>
  Tensor<T> all() const {
    std::vector<int> idx(static_cast<std::size_t>(size()));
    std::iota(idx.begin(), idx.end(), 0);
    return gather<T>(idx);
  }

  Dataset subset(std::span<const int> idx) const {
    Dataset out(resolution_);
    for (int i : idx) {
      auto src = image(i);
      out.add(names_[std::size_t(i)], {src.begin(), src.end()});
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  int resolution_ = 0;
  std::vector<float> pixels_;
  std::vector<std::string> names_;
};

struct Splits {
  std::vector<int> train, val, test;
};

// Seeded permutation cut into train/val/test. Validation and test sizes are
// rounded from their fractions (at least one image each when the fraction
// is positive and n >= 10); training takes the remainder.
inline Splits split_indices(int n, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  std::vector<int> perm(static_cast<std::size_t>(std::max(n, 0)));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm.begin(), perm.end());
  auto count = [n](double frac) {
    int c = static_cast<int>(std::lround(frac * n));
    if (frac > 0 && n >= 10) c = std::max(c, 1);
    return c;
  };
  const int n_val = count(f.val), n_test = count(f.test);
  const int n_train = n - n_val - n_test;
  if (n_train < 0 || (f.train > 0 && n >= 10 && n_train == 0)) throw ConfigError("dataset too small for split");
  Splits s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  s.test.assign(perm.begin() + n_train + n_val, perm.end());
  return s;
}

using WarningSink = std::function<void(const std::string&)>;

inline void warn_stderr(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

// Decodes every PNG/JPEG file directly inside `dir` (sorted by filename),
// center-crops and resizes to `resolution`. Undecodable files are reported
// through `warn` and skipped.
inline Dataset load_folder(const std::filesystem::path& dir, int resolution, const WarningSink& warn = warn_stderr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("dataset folder not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Dataset ds(resolution);
  for (const auto& p : files) {
    try {
      const auto img = read_image(p);
      if (img.width <= 0 || img.height <= 0) throw LoadError("empty image");
      ds.add(p.filename().string(), to_planar<float>(center_crop_resize(img, resolution)));
    } catch (const LoadError& e) {
      warn(std::string("skipping ") + p.filename().string() + ": " + e.what());
    }
  }
  if (ds.size() == 0) throw ConfigError("no decodable images in " + dir.string());
  return ds;
}

// Deterministic procedural images with continuous variation in position,
// scale and color.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_images <= 0 || spec.resolution <= 0) throw ConfigError("synthetic spec needs positive size");
  const int r = spec.resolution;
  const std::size_t plane = std::size_t(r) * r;
  Dataset ds(r);
  for (int i = 0; i < spec.n_images; ++i) {
    Rng rng(derive_seed(spec.seed, std::uint64_t(i)));
    std::vector<double> img(3 * plane);
    if (spec.family == SyntheticFamily::gaussian_blobs) {
      double bg[3];
      const double base = rng.uniform(0.05, 0.35);
      for (double& c : bg) c = base + rng.uniform(-0.05, 0.05);
      for (int c = 0; c < 3; ++c) std::fill_n(img.begin() + std::ptrdiff_t(c * plane), plane, bg[c]);
      const int blobs = 2;
      for (int k = 0; k < blobs; ++k) {
        const double cx = rng.uniform(0.2, 0.8) * r, cy = rng.uniform(0.2, 0.8) * r;
        const double sigma = rng.uniform(0.08, 0.2) * r;
        double col[3];
        for (double& c : col) c = rng.uniform(0.0, 0.7);
        for (int y = 0; y < r; ++y)
          for (int x = 0; x < r; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double g = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            for (int c = 0; c < 3; ++c) img[std::size_t(c) * plane + std::size_t(y) * r + x] += col[c] * g;
          }
      }
    } else {
      // Linear color ramp background plus one soft-edged disc or square.
      double c0[3], c1[3], fg[3];
      for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.0, 0.5);
        c1[c] = rng.uniform(0.0, 0.5);
        fg[c] = rng.uniform(0.3, 1.0);
      }
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double ux = std::cos(angle), uy = std::sin(angle);
      const bool disc = rng.uniform() < 0.5;
      const double cx = rng.uniform(0.25, 0.75) * r, cy = rng.uniform(0.25, 0.75) * r;
      const double size = rng.uniform(0.12, 0.3) * r;
      const double edge = 0.04 * r + 0.5;
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
          const double px = (x + 0.5) / r - 0.5, py = (y + 0.5) / r - 0.5;
          const double t = std::clamp(0.5 + px * ux + py * uy, 0.0, 1.0);
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          const double dist = disc ? std::sqrt(dx * dx + dy * dy) : std::max(std::abs(dx), std::abs(dy));
          const double cover = 1.0 / (1.0 + std::exp((dist - size) / edge));
          for (int c = 0; c < 3; ++c)
            img[std::size_t(c) * plane + std::size_t(y) * r + x] = (1 - cover) * ((1 - t) * c0[c] + t * c1[c]) + cover * fg[c];
        }
    }
    std::vector<float> out(img.size());
    std::transform(img.begin(), img.end(), out.begin(),
                   [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); });
    ds.add("synthetic_" + std::to_string(i), std::move(out));
  }
  return ds;
}

inline Dataset load_dataset(const DatasetSpec& spec, const WarningSink& warn = warn_stderr) {
  if (const auto* path = std::get_if<std::filesystem::path>(&spec.source)) return load_folder(*path, spec.resolution, warn);
  auto syn = std::get<SyntheticSpec>(spec.source);
  syn.resolution = spec.resolution;
  return generate_synthetic(syn);
}

// One epoch of shuffled mini-batches over `indices`; the trailing partial
// batch is dropped.
inline std::vector<std::vector<int>> batches(std::span<const int> indices, int batch_size, std::uint64_t epoch_seed) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (static_cast<std::size_t>(batch_size) > indices.size())
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(indices.size()));
  std::vector<int> order(indices.begin(), indices.end());
  Rng rng(epoch_seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<int>> out;
  for (std::size_t b = 0; b + std::size_t(batch_size) <= order.size(); b += std::size_t(batch_size))
    out.emplace_back(order.begin() + std::ptrdiff_t(b), order.begin() + std::ptrdiff_t(b + std::size_t(batch_size)));
  return out;
}

inline std::vector<std::vector<int>> batches(const Dataset& ds, int batch_size, std::uint64_t epoch_seed) {
  std::vector<int> idx(static_cast<std::size_t>(ds.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return batches(std::span<const int>(idx), batch_size, epoch_seed);
}

}  // namespace introvae
