#pragma once

// Residual inference model (image -> posterior mean and log-variance) and
// generator (latent -> image). Both are derived from a NetConfig whose
// channel schedule lists one channel count per spatial level, from the
// input resolution down to the 4x4 level:
//
//   encoder:   conv5x5 -> ch[0]                       at level 0
//              avgpool2, res-block ch[l-1] -> ch[l]    for l = 1..L
//              flatten, FC -> 2*M_z, split (mu, log_var)
//
//   generator: FC M_z -> ch[L]*4*4, ReLU, reshape
//              res-block ch[L] -> ch[L]                at 4x4
//              upsample2, res-block ch[l+1] -> ch[l]   for l = L-1..0
//              conv5x5 -> image channels (linear output)
//
// A res-block is out = skip(x) + act(conv3(act(conv3(x)))), where skip is
// the identity when channel counts agree and a 1x1 projection otherwise.

#include <bit>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "introvae/core_math.hpp"
#include "introvae/errors.hpp"
#include "introvae/layers.hpp"
#include "introvae/rng.hpp"
#include "introvae/tensor.hpp"

namespace introvae {

struct NetConfig {
  int resolution = 32;
  int image_channels = 3;
  int latent_dim = 64;
  std::vector<int> channels{16, 32, 64, 64};
  double activation_slope = 0.2;

  int levels() const { return std::countr_zero(static_cast<unsigned>(resolution)) - 2; }

  void validate() const {
    if (resolution < 16 || !std::has_single_bit(static_cast<unsigned>(resolution)))
      throw ConfigError("resolution must be a power of two >= 16, got " + std::to_string(resolution));
    if (image_channels <= 0) throw ConfigError("image_channels must be positive");
    if (latent_dim <= 0) throw ConfigError("latent_dim must be positive");
    if (static_cast<int>(channels.size()) != levels() + 1)
      throw ConfigError("channel schedule needs " + std::to_string(levels() + 1) + " entries for resolution " +
                        std::to_string(resolution) + ", got " + std::to_string(channels.size()));
    for (int c : channels)
      if (c <= 0) throw ConfigError("channel counts must be positive");
    if (!(activation_slope >= 0.0 && activation_slope < 1.0)) throw ConfigError("activation slope must be in [0,1)");
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Channel schedule of the 1024x1024 reference architecture, level 0 first.
inline const std::vector<int>& reference_channel_schedule() {
  static const std::vector<int> s{16, 32, 64, 128, 256, 512, 512, 512, 512};
  return s;
}

// Smaller resolutions drop the highest-resolution levels of the reference
// schedule, keeping its 4x4 end.
inline std::vector<int> reference_channels_for(int resolution) {
  NetConfig probe;
  probe.resolution = resolution;
  const int n = probe.levels() + 1;
  const auto& ref = reference_channel_schedule();
  if (n > static_cast<int>(ref.size()) || n < 1) throw ConfigError("no reference schedule for resolution");
  return {ref.end() - n, ref.end()};
}

enum class NetRole { encoder, generator };

inline const char* role_name(NetRole r) { return r == NetRole::encoder ? "encoder" : "generator"; }

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
};

// Named parameter arrays of one network, in a fixed construction order.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(NetConfig cfg, NetRole role) : cfg_(std::move(cfg)), role_(role) {}

  const NetConfig& config() const { return cfg_; }
  NetRole role() const { return role_; }

  int add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= std::size_t(d);
    index_.emplace(name, static_cast<int>(params_.size()));
    params_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
    return static_cast<int>(params_.size()) - 1;
  }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  Param<T>& operator[](int i) { return params_[std::size_t(i)]; }
  const Param<T>& operator[](int i) const { return params_[std::size_t(i)]; }

  Param<T>& at(const std::string& name) { return params_.at(std::size_t(index_.at(name))); }
  const Param<T>& at(const std::string& name) const { return params_.at(std::size_t(index_.at(name))); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (T v : p.value)
        if (!std::isfinite(v)) return false;
    return true;
  }

  // Value-only comparison (gradient slots are scratch space).
  bool same_values(const ParamStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name != o.params_[i].name || params_[i].value != o.params_[i].value) return false;
    return true;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out(cfg_, role_);
    for (const auto& p : params_) {
      const int i = out.add(p.name, p.shape);
      for (std::size_t k = 0; k < p.value.size(); ++k) out[i].value[k] = static_cast<U>(p.value[k]);
    }
    return out;
  }

 private:
  NetConfig cfg_;
  NetRole role_ = NetRole::encoder;
  std::vector<Param<T>> params_;
  std::map<std::string, int> index_;
};

namespace detail {

struct ConvSpec {
  int weight = -1;
  int bias = -1;
  int cin = 0;
  int cout = 0;
  int k = 0;
};

struct ResBlockSpec {
  ConvSpec conv1, conv2;
  std::optional<ConvSpec> skip;
};

struct LinearSpec {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int out = 0;
};

template <class T>
ConvSpec add_conv(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k) {
  ConvSpec s{-1, -1, cin, cout, k};
  s.weight = ps.add(name + ".weight", {cout, cin, k, k});
  s.bias = ps.add(name + ".bias", {cout});
  return s;
}

template <class T>
ResBlockSpec add_block(ParamStore<T>& ps, const std::string& name, int cin, int cout) {
  ResBlockSpec b;
  b.conv1 = add_conv(ps, name + ".conv1", cin, cout, 3);
  b.conv2 = add_conv(ps, name + ".conv2", cout, cout, 3);
  if (cin != cout) b.skip = add_conv(ps, name + ".skip", cin, cout, 1);
  return b;
}

template <class T>
LinearSpec add_linear(ParamStore<T>& ps, const std::string& name, int in, int out) {
  LinearSpec s{-1, -1, in, out};
  s.weight = ps.add(name + ".weight", {out, in});
  s.bias = ps.add(name + ".bias", {out});
  return s;
}

struct EncoderLayout {
  ConvSpec conv_in;
  std::vector<ResBlockSpec> blocks;
  LinearSpec fc;
};

struct GeneratorLayout {
  LinearSpec fc;
  ResBlockSpec base;
  std::vector<ResBlockSpec> blocks;  // blocks[i] produces level L-1-i
  ConvSpec conv_out;
};

// Registers parameters in a fixed order; the same order is replayed when
// re-deriving the layout from an existing store.
template <class T>
EncoderLayout encoder_layout(ParamStore<T>& ps) {
  const auto& cfg = ps.config();
  const int L = cfg.levels();
  EncoderLayout lay;
  lay.conv_in = add_conv(ps, "conv_in", cfg.image_channels, cfg.channels[0], 5);
  for (int l = 1; l <= L; ++l)
    lay.blocks.push_back(add_block(ps, "block" + std::to_string(l), cfg.channels[l - 1], cfg.channels[l]));
  lay.fc = add_linear(ps, "fc", cfg.channels[L] * 16, 2 * cfg.latent_dim);
  return lay;
}

template <class T>
GeneratorLayout generator_layout(ParamStore<T>& ps) {
  const auto& cfg = ps.config();
  const int L = cfg.levels();
  GeneratorLayout lay;
  lay.fc = add_linear(ps, "fc", cfg.latent_dim, cfg.channels[L] * 16);
  lay.base = add_block(ps, "block" + std::to_string(L), cfg.channels[L], cfg.channels[L]);
  for (int l = L - 1; l >= 0; --l)
    lay.blocks.push_back(add_block(ps, "block" + std::to_string(l), cfg.channels[l + 1], cfg.channels[l]));
  lay.conv_out = add_conv(ps, "conv_out", cfg.channels[0], cfg.image_channels, 5);
  return lay;
}

// Rebuilds the layout indices for an already-populated store.
template <class T, class Layout, class Fn>
Layout replay_layout(const ParamStore<T>& ps, Fn fn) {
  ParamStore<T> scratch(ps.config(), ps.role());
  Layout lay = fn(scratch);
  if (scratch.params().size() != ps.params().size()) throw ShapeError("parameter store does not match its config");
  for (std::size_t i = 0; i < scratch.params().size(); ++i)
    if (scratch.params()[i].name != ps.params()[i].name || scratch.params()[i].shape != ps.params()[i].shape)
      throw ShapeError("parameter '" + ps.params()[i].name + "' does not match its config");
  return lay;
}

// Gain multiplying the residual branch's last convolution at initialization,
// so a block starts close to its skip path instead of doubling the variance.
inline constexpr double kResidualBranchGain = 0.1;

// Normal weights with std gain * sqrt(2 / fan_in) (gain 1 unless listed),
// zero biases.
template <class T>
void init_params(ParamStore<T>& ps, std::uint64_t seed, const std::map<int, double>& gains) {
  Rng rng(seed);
  for (int i = 0; i < static_cast<int>(ps.params().size()); ++i) {
    auto& p = ps[i];
    if (p.shape.size() == 1) continue;
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < p.shape.size(); ++d) fan_in *= std::size_t(p.shape[d]);
    const auto g = gains.find(i);
    const double std_dev = (g == gains.end() ? 1.0 : g->second) * std::sqrt(2.0 / double(fan_in));
    for (auto& v : p.value) v = static_cast<T>(std_dev * rng.normal());
  }
}

inline void add_block_gains(std::map<int, double>& gains, const ResBlockSpec& b) {
  gains[b.conv2.weight] = kResidualBranchGain;
  if (b.skip) gains[b.skip->weight] = std::sqrt(0.5);
}

template <class T>
std::span<T> grad_or_empty(ParamStore<T>& ps, int idx, bool want) {
  return want ? std::span<T>(ps[idx].grad) : std::span<T>();
}

template <class T>
Tensor<T> conv_fwd(const ParamStore<T>& ps, const ConvSpec& c, const Tensor<T>& x) {
  return layers::conv_forward<T>(x, ps[c.weight].value, ps[c.bias].value, c.cout, c.k);
}

template <class T>
Tensor<T> conv_bwd(ParamStore<T>& ps, const ConvSpec& c, const Tensor<T>& x, const Tensor<T>& dy, bool param_grads,
                   bool want_dx) {
  return layers::conv_backward<T>(x, dy, ps[c.weight].value, c.k, grad_or_empty(ps, c.weight, param_grads),
                                  grad_or_empty(ps, c.bias, param_grads), want_dx);
}

template <class T>
struct BlockCache {
  Tensor<T> x, a1, a2;
};

template <class T>
Tensor<T> block_fwd(const ParamStore<T>& ps, const ResBlockSpec& b, const Tensor<T>& x, T slope, BlockCache<T>& cache) {
  cache.x = x;
  cache.a1 = conv_fwd(ps, b.conv1, x);
  layers::leaky_relu_inplace(cache.a1, slope);
  cache.a2 = conv_fwd(ps, b.conv2, cache.a1);
  layers::leaky_relu_inplace(cache.a2, slope);
  Tensor<T> out = b.skip ? conv_fwd(ps, *b.skip, x) : x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += cache.a2[i];
  return out;
}

template <class T>
Tensor<T> block_bwd(ParamStore<T>& ps, const ResBlockSpec& b, const BlockCache<T>& cache, const Tensor<T>& dout,
                    T slope, bool param_grads, bool want_dx) {
  Tensor<T> d2 = dout;
  layers::leaky_relu_backward_inplace<T>(cache.a2.span(), d2.span(), slope);
  Tensor<T> d1 = conv_bwd(ps, b.conv2, cache.a1, d2, param_grads, true);
  layers::leaky_relu_backward_inplace<T>(cache.a1.span(), d1.span(), slope);
  Tensor<T> dx = conv_bwd(ps, b.conv1, cache.x, d1, param_grads, want_dx);
  if (b.skip) {
    Tensor<T> ds = conv_bwd(ps, *b.skip, cache.x, dout, param_grads, want_dx);
    if (want_dx)
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
  } else if (want_dx) {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
  }
  return dx;
}

}  // namespace detail

template <class T>
ParamStore<T> build_encoder(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> ps(cfg, NetRole::encoder);
  const auto lay = detail::encoder_layout(ps);
  std::map<int, double> gains{{lay.fc.weight, std::sqrt(0.5)}};
  for (const auto& b : lay.blocks) detail::add_block_gains(gains, b);
  detail::init_params(ps, seed, gains);
  return ps;
}

template <class T>
ParamStore<T> build_generator(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> ps(cfg, NetRole::generator);
  const auto lay = detail::generator_layout(ps);
  std::map<int, double> gains{{lay.conv_out.weight, std::sqrt(0.5)}};
  detail::add_block_gains(gains, lay.base);
  for (const auto& b : lay.blocks) detail::add_block_gains(gains, b);
  detail::init_params(ps, seed, gains);
  return ps;
}

// Whether a backward pass fills parameter gradient slots, returns the
// gradient with respect to the network input, or both.
struct BackwardMode {
  bool param_grads = true;
  bool input_grad = false;
};

// One forward pass of the inference model with the activations it needs for
// a later backward pass. Input images are (batch, channels, H, W).
template <class T>
class EncoderPass {
 public:
  explicit EncoderPass(const ParamStore<T>& ps)
      : layout_(detail::replay_layout<T, detail::EncoderLayout>(ps, [](auto& s) { return detail::encoder_layout(s); })) {
    if (ps.role() != NetRole::encoder) throw ShapeError("EncoderPass needs encoder parameters");
  }

  LatentStats<T> forward(const ParamStore<T>& ps, const Tensor<T>& images) {
    const auto& cfg = ps.config();
    const int b = images.dim(0);
    require_shape(images, {b, cfg.image_channels, cfg.resolution, cfg.resolution}, "encode");
    if (b <= 0) throw ShapeError("encode: empty batch");
    const T slope = static_cast<T>(cfg.activation_slope);
    input_ = swap_leading_axes(images);
    stem_ = detail::conv_fwd(ps, layout_.conv_in, input_);
    layers::leaky_relu_inplace(stem_, slope);
    caches_.assign(layout_.blocks.size(), {});
    Tensor<T> h = stem_;
    for (std::size_t l = 0; l < layout_.blocks.size(); ++l)
      h = detail::block_fwd(ps, layout_.blocks[l], layers::avg_pool2(h), slope, caches_[l]);
    top_shape_ = h.shape();
    flat_ = layers::flatten_rows(h);
    const int m = cfg.latent_dim;
    const auto out = layers::linear_forward<T>(flat_, b, layout_.fc.in, ps[layout_.fc.weight].value,
                                               ps[layout_.fc.bias].value, layout_.fc.out);
    LatentStats<T> stats(b, m);
    for (int i = 0; i < b; ++i) {
      std::copy_n(out.data() + std::size_t(i) * 2 * m, m, stats.mu.data() + std::size_t(i) * m);
      std::copy_n(out.data() + std::size_t(i) * 2 * m + m, m, stats.log_var.data() + std::size_t(i) * m);
    }
    batch_ = b;
    return stats;
  }

  // d_mu, d_log_var: (batch x M_z). Returns dL/d(images) when requested.
  Tensor<T> backward(ParamStore<T>& ps, std::span<const T> d_mu, std::span<const T> d_log_var, BackwardMode mode) {
    const auto& cfg = ps.config();
    const int m = cfg.latent_dim, b = batch_;
    const T slope = static_cast<T>(cfg.activation_slope);
    if (d_mu.size() != std::size_t(b) * m || d_log_var.size() != d_mu.size())
      throw ShapeError("encoder backward: gradient size mismatch");
    std::vector<T> d_out(std::size_t(b) * 2 * m);
    for (int i = 0; i < b; ++i) {
      std::copy_n(d_mu.data() + std::size_t(i) * m, m, d_out.data() + std::size_t(i) * 2 * m);
      std::copy_n(d_log_var.data() + std::size_t(i) * m, m, d_out.data() + std::size_t(i) * 2 * m + m);
    }
    // Gradients into the trunk are needed whenever anything below the FC
    // layer must be differentiated.
    const auto d_flat = layers::linear_backward<T>(
        flat_, b, layout_.fc.in, d_out, layout_.fc.out, ps[layout_.fc.weight].value,
        detail::grad_or_empty(ps, layout_.fc.weight, mode.param_grads),
        detail::grad_or_empty(ps, layout_.fc.bias, mode.param_grads), true);
    Tensor<T> d = layers::unflatten_rows<T>(d_flat, top_shape_[0], top_shape_[1], top_shape_[2], top_shape_[3]);
    for (std::size_t l = layout_.blocks.size(); l-- > 0;) {
      d = detail::block_bwd(ps, layout_.blocks[l], caches_[l], d, slope, mode.param_grads, true);
      d = layers::avg_pool2_backward(d);
    }
    layers::leaky_relu_backward_inplace<T>(stem_.span(), d.span(), slope);
    Tensor<T> dx = detail::conv_bwd(ps, layout_.conv_in, input_, d, mode.param_grads, mode.input_grad);
    if (!mode.input_grad) return {};
    return swap_leading_axes(dx);
  }

 private:
  detail::EncoderLayout layout_;
  int batch_ = 0;
  Tensor<T> input_, stem_;
  std::vector<detail::BlockCache<T>> caches_;
  std::array<int, 4> top_shape_{};
  std::vector<T> flat_;
};

// One forward pass of the generator. Latents are (batch x M_z) row-major.
template <class T>
class GeneratorPass {
 public:
  explicit GeneratorPass(const ParamStore<T>& ps)
      : layout_(
            detail::replay_layout<T, detail::GeneratorLayout>(ps, [](auto& s) { return detail::generator_layout(s); })) {
    if (ps.role() != NetRole::generator) throw ShapeError("GeneratorPass needs generator parameters");
  }

  Tensor<T> forward(const ParamStore<T>& ps, std::span<const T> z) {
    const auto& cfg = ps.config();
    const int m = cfg.latent_dim, L = cfg.levels();
    if (z.empty() || z.size() % std::size_t(m) != 0)
      throw ShapeError("decode: latent length must be a positive multiple of " + std::to_string(m));
    const int b = static_cast<int>(z.size() / std::size_t(m));
    const T slope = static_cast<T>(cfg.activation_slope);
    z_.assign(z.begin(), z.end());
    hidden_ = layers::linear_forward<T>(z_, b, m, ps[layout_.fc.weight].value, ps[layout_.fc.bias].value,
                                        layout_.fc.out);
    layers::leaky_relu_inplace<T>(std::span<T>(hidden_), T(0));
    Tensor<T> h = layers::unflatten_rows<T>(hidden_, cfg.channels[L], b, 4, 4);
    caches_.assign(layout_.blocks.size() + 1, {});
    h = detail::block_fwd(ps, layout_.base, h, slope, caches_[0]);
    for (std::size_t i = 0; i < layout_.blocks.size(); ++i)
      h = detail::block_fwd(ps, layout_.blocks[i], layers::upsample2(h), slope, caches_[i + 1]);
    last_ = std::move(h);
    batch_ = b;
    return swap_leading_axes(detail::conv_fwd(ps, layout_.conv_out, last_));
  }

  // d_images: (batch, channels, H, W). Returns dL/dz (batch x M_z) when requested.
  std::vector<T> backward(ParamStore<T>& ps, const Tensor<T>& d_images, BackwardMode mode) {
    const auto& cfg = ps.config();
    require_shape(d_images, {batch_, cfg.image_channels, cfg.resolution, cfg.resolution}, "generator backward");
    const T slope = static_cast<T>(cfg.activation_slope);
    Tensor<T> d = detail::conv_bwd(ps, layout_.conv_out, last_, swap_leading_axes(d_images), mode.param_grads, true);
    for (std::size_t i = layout_.blocks.size(); i-- > 0;) {
      d = detail::block_bwd(ps, layout_.blocks[i], caches_[i + 1], d, slope, mode.param_grads, true);
      d = layers::upsample2_backward(d);
    }
    d = detail::block_bwd(ps, layout_.base, caches_[0], d, slope, mode.param_grads, true);
    std::vector<T> d_hidden = layers::flatten_rows(d);
    layers::leaky_relu_backward_inplace<T>(hidden_, d_hidden, T(0));
    return layers::linear_backward<T>(z_, batch_, cfg.latent_dim, d_hidden, layout_.fc.out,
                                      ps[layout_.fc.weight].value,
                                      detail::grad_or_empty(ps, layout_.fc.weight, mode.param_grads),
                                      detail::grad_or_empty(ps, layout_.fc.bias, mode.param_grads), mode.input_grad);
  }

 private:
  detail::GeneratorLayout layout_;
  int batch_ = 0;
  std::vector<T> z_, hidden_;
  std::vector<detail::BlockCache<T>> caches_;
  Tensor<T> last_;
};

template <class T>
LatentStats<T> encode(const ParamStore<T>& enc, const Tensor<T>& images) {
  EncoderPass<T> pass(enc);
  return pass.forward(enc, images);
}

template <class T>
Tensor<T> decode(const ParamStore<T>& gen, std::span<const T> z) {
  GeneratorPass<T> pass(gen);
  return pass.forward(gen, z);
}

// Decodes (1 - t) * mu_a + t * mu_b for t evenly spaced on [0, 1]; posterior
// means only, no sampling noise. Both inputs are single images (1, C, H, W).
template <class T>
std::vector<Tensor<T>> latent_interpolate(const ParamStore<T>& enc, const ParamStore<T>& gen, const Tensor<T>& x_a,
                                          const Tensor<T>& x_b, int steps) {
  if (steps < 2) throw ConfigError("interpolation needs at least 2 steps");
  if (x_a.dim(0) != 1 || x_b.dim(0) != 1) throw ShapeError("latent_interpolate expects single images");
  const auto mu_a = encode(enc, x_a).mu;
  const auto mu_b = encode(enc, x_b).mu;
  GeneratorPass<T> pass(gen);
  std::vector<Tensor<T>> frames;
  std::vector<T> z(mu_a.size());
  for (int s = 0; s < steps; ++s) {
    const T t = T(s) / T(steps - 1);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = (T(1) - t) * mu_a[j] + t * mu_b[j];
    if (s == 0) z = mu_a;
    if (s == steps - 1) z = mu_b;
    frames.push_back(pass.forward(gen, z));
  }
  return frames;
}

// Deterministic reconstruction through the posterior mean.
template <class T>
Tensor<T> reconstruct(const ParamStore<T>& enc, const ParamStore<T>& gen, const Tensor<T>& images) {
  const auto stats = encode(enc, images);
  return decode<T>(gen, stats.mu);
}

}  // namespace introvae
