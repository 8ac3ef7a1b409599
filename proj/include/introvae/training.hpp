#pragma once

// Introspective training: each step updates the inference model on real,
// reconstructed and prior-sampled images (the latter two behind a stop-
// gradient), then updates the generator against the freshly updated
// inference model. A pre-training phase runs the same step with alpha = 0.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "introvae/adam.hpp"
#include "introvae/checkpoint.hpp"
#include "introvae/core_math.hpp"
#include "introvae/data.hpp"
#include "introvae/errors.hpp"
#include "introvae/networks.hpp"
#include "introvae/rng.hpp"

namespace introvae {

enum class Phase { pretrain, adversarial };

inline const char* phase_name(Phase p) { return p == Phase::pretrain ? "pretrain" : "adversarial"; }

inline Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "adversarial") return Phase::adversarial;
  throw LoadError("unknown phase '" + s + "'");
}

struct StepTrace {
  std::int64_t step = 0;  // 1-based index of the completed step
  Phase phase = Phase::adversarial;
  LossReport loss;
  double alpha = 0.0;              // alpha actually applied (0 during pre-training)
  double hinge_rec = 0.0;          // [m - kl_rec]^+
  double hinge_sample = 0.0;       // [m - kl_sample]^+
  double kl_rec_generator = 0.0;   // KL terms re-evaluated by the updated encoder
  double kl_sample_generator = 0.0;
  double millis = 0.0;
};

template <class T>
struct TrainState {
  NetConfig cfg;
  HyperParams hp;
  ParamStore<T> encoder, generator;
  AdamState<T> encoder_opt, generator_opt;
  std::int64_t step = 0;
  int epoch = 0;
  int batch_in_epoch = 0;  // next batch index within the current epoch
  Phase phase = Phase::pretrain;
  Rng rng;
  std::uint64_t seed = 0;

  AdamSettings adam() const { return {hp.learning_rate, hp.adam_beta1, hp.adam_beta2, hp.adam_eps}; }
};

template <class T>
TrainState<T> init_train_state(const NetConfig& cfg, const HyperParams& hp, std::uint64_t seed,
                               Phase phase = Phase::pretrain) {
  cfg.validate();
  hp.validate();
  if (cfg.latent_dim != hp.latent_dim) throw ConfigError("latent_dim differs between network config and hyperparameters");
  TrainState<T> s;
  s.cfg = cfg;
  s.hp = hp;
  s.encoder = build_encoder<T>(cfg, derive_seed(seed, 1));
  s.generator = build_generator<T>(cfg, derive_seed(seed, 2));
  s.encoder_opt = AdamState<T>(s.encoder);
  s.generator_opt = AdamState<T>(s.generator);
  s.phase = phase;
  s.rng = Rng(derive_seed(seed, 3));
  s.seed = seed;
  return s;
}

// Splits a stacked (2B x M) statistics batch into its two halves.
template <class T>
std::pair<LatentStats<T>, LatentStats<T>> split_stats(const LatentStats<T>& s) {
  const int half = s.batch / 2;
  LatentStats<T> a(half, s.dim), b(half, s.dim);
  const auto n = std::size_t(half) * s.dim;
  std::copy_n(s.mu.begin(), n, a.mu.begin());
  std::copy_n(s.log_var.begin(), n, a.log_var.begin());
  std::copy_n(s.mu.begin() + std::ptrdiff_t(n), n, b.mu.begin());
  std::copy_n(s.log_var.begin() + std::ptrdiff_t(n), n, b.log_var.begin());
  return {std::move(a), std::move(b)};
}

// Gradient of the encoder loss with respect to the statistics of each of
// the three encoder branches (real, reconstruction, prior sample). The real
// branch excludes the reconstruction term, which reaches the encoder
// through the generator.
template <class T>
struct EncoderOutputGrads {
  std::vector<T> real_mu, real_log_var, rec_mu, rec_log_var, sample_mu, sample_log_var;
};

template <class T>
EncoderOutputGrads<T> encoder_loss_output_grads(const LatentStats<T>& real, const LatentStats<T>& rec,
                                                const LatentStats<T>& sample, double alpha, double margin) {
  EncoderOutputGrads<T> g;
  g.real_mu.assign(real.mu.size(), T(0));
  g.real_log_var.assign(real.mu.size(), T(0));
  g.rec_mu.assign(rec.mu.size(), T(0));
  g.rec_log_var.assign(rec.mu.size(), T(0));
  g.sample_mu.assign(sample.mu.size(), T(0));
  g.sample_log_var.assign(sample.mu.size(), T(0));
  kl_divergence_grad<T>(real, T(1), g.real_mu, g.real_log_var);
  const double kl_rec = kl_divergence(rec), kl_sample = kl_divergence(sample);
  const T w_rec = static_cast<T>(alpha * hinge_grad(margin, kl_rec));
  const T w_sample = static_cast<T>(alpha * hinge_grad(margin, kl_sample));
  if (w_rec != T(0)) kl_divergence_grad<T>(rec, w_rec, g.rec_mu, g.rec_log_var);
  if (w_sample != T(0)) kl_divergence_grad<T>(sample, w_sample, g.sample_mu, g.sample_log_var);
  return g;
}

namespace detail {

template <class T>
std::vector<T> normal_noise(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

template <class T>
bool grads_finite(const ParamStore<T>& ps) {
  for (const auto& p : ps.params())
    for (T g : p.grad)
      if (!std::isfinite(g)) return false;
  return true;
}

inline std::string describe(const LossReport& r) {
  std::ostringstream os;
  os << "l_ae=" << r.l_ae << " kl_real=" << r.kl_real << " kl_rec=" << r.kl_rec << " kl_sample=" << r.kl_sample
     << " l_encoder=" << r.l_encoder << " l_generator=" << r.l_generator;
  return os.str();
}

}  // namespace detail

// Activations and loss terms of one step, shared by its encoder and
// generator halves.
template <class T>
struct StepContext {
  EncoderPass<T> enc_real, enc_fake;
  GeneratorPass<T> gen_rec, gen_sample;
  LatentStats<T> stats_real, stats_rec, stats_sample;
  Tensor<T> fakes;  // X_r stacked over X_p
  StepTrace trace;
};

// Forward pass of a step and the encoder-loss gradient, given the
// reparameterization noise `eps` and prior draws `z_p`. Fills the encoder's
// gradient slots with dL_E/d(phi_E), the adversarial term seeing X_r and X_p
// behind the stop-gradient. The same backward pass through X_r = Dec(Z)
// leaves beta * dL_AE/d(theta_G) in the generator's gradient slots.
template <class T>
StepContext<T> encoder_gradients(TrainState<T>& st, const Tensor<T>& batch, std::span<const T> eps,
                                 std::span<const T> z_p, double alpha) {
  const int b = batch.dim(0);
  HyperParams hp = st.hp;
  hp.alpha = alpha;
  StepContext<T> c{EncoderPass<T>(st.encoder), EncoderPass<T>(st.encoder), GeneratorPass<T>(st.generator),
                   GeneratorPass<T>(st.generator), {}, {}, {}, {}, {}};
  c.stats_real = c.enc_real.forward(st.encoder, batch);
  const auto z = reparameterize<T>(c.stats_real, eps);
  const Tensor<T> x_r = c.gen_rec.forward(st.generator, z);
  const Tensor<T> x_p = c.gen_sample.forward(st.generator, z_p);
  const T l_ae = mse_recon<T>(batch.span(), x_r.span(), b);
  c.fakes = concat_leading(x_r, x_p);
  std::tie(c.stats_rec, c.stats_sample) = split_stats(c.enc_fake.forward(st.encoder, c.fakes));

  auto& tr = c.trace;
  tr.alpha = alpha;
  tr.loss.l_ae = double(l_ae);
  tr.loss.kl_real = double(kl_divergence(c.stats_real));
  tr.loss.kl_rec = double(kl_divergence(c.stats_rec));
  tr.loss.kl_sample = double(kl_divergence(c.stats_sample));
  tr.hinge_rec = hinge(hp.margin, tr.loss.kl_rec);
  tr.hinge_sample = hinge(hp.margin, tr.loss.kl_sample);
  tr.loss.l_encoder = loss_encoder(tr.loss.kl_real, tr.loss.kl_rec, tr.loss.kl_sample, tr.loss.l_ae, hp);
  if (!std::isfinite(tr.loss.l_encoder)) return c;

  st.encoder.zero_grad();
  st.generator.zero_grad();
  Tensor<T> d_xr(x_r.shape());
  mse_recon_grad<T>(batch.span(), x_r.span(), b, static_cast<T>(hp.beta), d_xr.span());
  const auto d_z = c.gen_rec.backward(st.generator, d_xr, {true, true});
  auto g = encoder_loss_output_grads<T>(c.stats_real, c.stats_rec, c.stats_sample, hp.alpha, hp.margin);
  reparameterize_grad<T>(c.stats_real, eps, d_z, g.real_mu, g.real_log_var);
  c.enc_real.backward(st.encoder, g.real_mu, g.real_log_var, {true, false});
  if (alpha != 0.0 && (tr.hinge_rec > 0 || tr.hinge_sample > 0)) {
    std::vector<T> d_mu(g.rec_mu), d_lv(g.rec_log_var);
    d_mu.insert(d_mu.end(), g.sample_mu.begin(), g.sample_mu.end());
    d_lv.insert(d_lv.end(), g.sample_log_var.begin(), g.sample_log_var.end());
    c.enc_fake.backward(st.encoder, d_mu, d_lv, {true, false});  // ng(): no input gradient
  }
  return c;
}

// Generator half: re-encodes X_r and X_p with the current encoder and adds
// alpha * d(KL_rec + KL_sample)/d(theta_G) to the generator's gradient slots
// (which already hold the beta * L_AE part). Encoder parameters and their
// gradients are not touched.
template <class T>
void generator_gradients(TrainState<T>& st, StepContext<T>& c, double alpha) {
  HyperParams hp = st.hp;
  hp.alpha = alpha;
  const int b = c.stats_real.batch;
  EncoderPass<T> enc_gen(st.encoder);
  const auto stats_gen = enc_gen.forward(st.encoder, c.fakes);
  const auto [rec, sample] = split_stats(stats_gen);
  auto& tr = c.trace;
  tr.kl_rec_generator = double(kl_divergence(rec));
  tr.kl_sample_generator = double(kl_divergence(sample));
  tr.loss.l_generator = loss_generator(tr.kl_rec_generator, tr.kl_sample_generator, tr.loss.l_ae, hp);
  if (alpha == 0.0 || !std::isfinite(tr.loss.l_generator)) return;
  std::vector<T> d_mu(stats_gen.mu.size(), T(0)), d_lv(stats_gen.mu.size(), T(0));
  const auto half = rec.mu.size();
  kl_divergence_grad<T>(rec, static_cast<T>(alpha), std::span<T>(d_mu).first(half), std::span<T>(d_lv).first(half));
  kl_divergence_grad<T>(sample, static_cast<T>(alpha), std::span<T>(d_mu).subspan(half),
                        std::span<T>(d_lv).subspan(half));
  // Only the input gradient is needed; encoder gradient slots stay as they are.
  const Tensor<T> d_fakes = enc_gen.backward(st.encoder, d_mu, d_lv, {false, true});
  c.gen_rec.backward(st.generator, take_leading(d_fakes, 0, b), {true, false});
  c.gen_sample.backward(st.generator, take_leading(d_fakes, b, 2 * b), {true, false});
}

// Observation hook for tests: invoked between the encoder and generator
// updates of a step.
template <class T>
using MidStepHook = std::function<void(const TrainState<T>&)>;

// One full step with the given effective alpha. On a non-finite loss or
// gradient the state is left exactly as it was and TrainingAbort is thrown.
template <class T>
StepTrace introspective_step(TrainState<T>& st, const Tensor<T>& batch, double alpha,
                             const std::type_identity_t<MidStepHook<T>>& mid_step = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = st.cfg;
  const int b = batch.dim(0);
  require_shape(batch, {b, cfg.image_channels, cfg.resolution, cfg.resolution}, "train_step batch");
  const Rng rng_before = st.rng;
  const auto eps = detail::normal_noise<T>(st.rng, std::size_t(b) * cfg.latent_dim);
  const auto z_p = detail::normal_noise<T>(st.rng, std::size_t(b) * cfg.latent_dim);

  std::optional<StepContext<T>> ctx;
  try {
    ctx.emplace(encoder_gradients<T>(st, batch, eps, z_p, alpha));
  } catch (const InvalidInput& e) {
    st.rng = rng_before;
    throw TrainingAbort("step " + std::to_string(st.step + 1) + ": " + e.what());
  }
  auto& c = *ctx;
  auto& tr = c.trace;
  auto abort_step = [&](const std::string& why) {
    st.rng = rng_before;
    throw TrainingAbort("step " + std::to_string(st.step + 1) + ": " + why + " (" + detail::describe(tr.loss) + ")");
  };
  if (!std::isfinite(tr.loss.l_encoder)) abort_step("non-finite encoder loss");
  if (!detail::grads_finite(st.encoder)) abort_step("non-finite encoder gradient");

  const auto encoder_backup = st.encoder;
  const auto encoder_opt_backup = st.encoder_opt;
  adam_step(st.encoder, st.encoder_opt, st.adam());
  if (mid_step) mid_step(st);

  generator_gradients<T>(st, c, alpha);
  auto restore_and_abort = [&](const std::string& why) {
    st.encoder = encoder_backup;
    st.encoder_opt = encoder_opt_backup;
    abort_step(why);
  };
  if (!std::isfinite(tr.loss.l_generator)) restore_and_abort("non-finite generator loss");
  if (!detail::grads_finite(st.generator)) restore_and_abort("non-finite generator gradient");
  adam_step(st.generator, st.generator_opt, st.adam());

  ++st.step;
  tr.step = st.step;
  tr.phase = st.phase;
  tr.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return tr;
}

template <class T>
StepTrace train_step(TrainState<T>& st, const Tensor<T>& batch,
                     const std::type_identity_t<MidStepHook<T>>& mid_step = {}) {
  if (st.phase != Phase::adversarial) throw PhaseError("train_step called during pre-training");
  return introspective_step(st, batch, st.hp.alpha, mid_step);
}

template <class T>
StepTrace pretrain_step(TrainState<T>& st, const Tensor<T>& batch,
                        const std::type_identity_t<MidStepHook<T>>& mid_step = {}) {
  if (st.phase != Phase::pretrain) throw PhaseError("pretrain_step called during adversarial training");
  return introspective_step(st, batch, 0.0, mid_step);
}

// Gradient of the encoder's adversarial term alpha * sum_s [m - KL(Enc(x_s))]^+
// with respect to every generator parameter. With stop_gradient the encoder
// pass on the generated images propagates no input gradient, so nothing
// reaches the generator; without it the gradient flows through the encoder
// into X_r and X_p and back through the generator.
template <class T>
std::vector<std::vector<T>> encoder_adversarial_generator_grads(TrainState<T> st, const Tensor<T>& batch,
                                                                 bool stop_gradient) {
  const int b = batch.dim(0), m = st.cfg.latent_dim;
  EncoderPass<T> enc_real(st.encoder);
  const auto stats_real = enc_real.forward(st.encoder, batch);
  const auto eps = detail::normal_noise<T>(st.rng, std::size_t(b) * m);
  const auto z = reparameterize<T>(stats_real, eps);
  const auto z_p = detail::normal_noise<T>(st.rng, std::size_t(b) * m);
  GeneratorPass<T> gen_rec(st.generator), gen_sample(st.generator);
  const Tensor<T> x_r = gen_rec.forward(st.generator, z);
  const Tensor<T> x_p = gen_sample.forward(st.generator, z_p);
  EncoderPass<T> enc_fake(st.encoder);
  const auto [rec, sample] = split_stats(enc_fake.forward(st.encoder, concat_leading(x_r, x_p)));
  const auto g = encoder_loss_output_grads<T>(stats_real, rec, sample, st.hp.alpha, st.hp.margin);
  std::vector<T> d_mu(g.rec_mu), d_lv(g.rec_log_var);
  d_mu.insert(d_mu.end(), g.sample_mu.begin(), g.sample_mu.end());
  d_lv.insert(d_lv.end(), g.sample_log_var.begin(), g.sample_log_var.end());
  st.encoder.zero_grad();
  st.generator.zero_grad();
  const Tensor<T> d_fakes = enc_fake.backward(st.encoder, d_mu, d_lv, {true, !stop_gradient});
  if (!stop_gradient) {
    gen_rec.backward(st.generator, take_leading(d_fakes, 0, b), {true, false});
    gen_sample.backward(st.generator, take_leading(d_fakes, b, 2 * b), {true, false});
  }
  std::vector<std::vector<T>> out;
  for (const auto& p : st.generator.params()) out.push_back(p.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpointing of the full training state.

template <class T>
Checkpoint to_checkpoint(const TrainState<T>& st) {
  Checkpoint ck;
  ck.meta["format"] = "introvae-train-state";
  ck.meta["dtype"] = dtype_name<T>();
  ck.meta["net_config"] = to_json(st.cfg);
  ck.meta["hyper_params"] = to_json(st.hp);
  ck.meta["step"] = st.step;
  ck.meta["epoch"] = st.epoch;
  ck.meta["batch_in_epoch"] = st.batch_in_epoch;
  ck.meta["phase"] = phase_name(st.phase);
  ck.meta["rng"] = st.rng.state();
  ck.meta["seed"] = st.seed;
  ck.meta["encoder_adam_step"] = st.encoder_opt.step;
  ck.meta["generator_adam_step"] = st.generator_opt.step;
  put_params(ck, "encoder/", st.encoder);
  put_params(ck, "generator/", st.generator);
  auto put_moments = [&](const std::string& prefix, const ParamStore<T>& ps, const AdamState<T>& opt) {
    for (std::size_t i = 0; i < ps.params().size(); ++i) {
      ck.put<T>(prefix + "m/" + ps.params()[i].name, ps.params()[i].shape, opt.m[i]);
      ck.put<T>(prefix + "v/" + ps.params()[i].name, ps.params()[i].shape, opt.v[i]);
    }
  };
  put_moments("encoder_adam/", st.encoder, st.encoder_opt);
  put_moments("generator_adam/", st.generator, st.generator_opt);
  return ck;
}

template <class T>
TrainState<T> from_checkpoint(const Checkpoint& ck) {
  try {
    if (ck.meta.value("format", "") != "introvae-train-state") throw LoadError("not a training checkpoint");
    TrainState<T> st;
    st.cfg = net_config_from_json(ck.meta.at("net_config"));
    st.cfg.validate();
    st.hp = hyper_params_from_json(ck.meta.at("hyper_params"));
    st.step = ck.meta.at("step").get<std::int64_t>();
    st.epoch = ck.meta.at("epoch").get<int>();
    st.batch_in_epoch = ck.meta.at("batch_in_epoch").get<int>();
    st.phase = parse_phase(ck.meta.at("phase").get<std::string>());
    st.rng.set_state(ck.meta.at("rng").get<std::string>());
    st.seed = ck.meta.at("seed").get<std::uint64_t>();
    st.encoder = get_params<T>(ck, "encoder/", st.cfg, NetRole::encoder);
    st.generator = get_params<T>(ck, "generator/", st.cfg, NetRole::generator);
    st.encoder_opt = AdamState<T>(st.encoder);
    st.generator_opt = AdamState<T>(st.generator);
    st.encoder_opt.step = ck.meta.at("encoder_adam_step").get<std::int64_t>();
    st.generator_opt.step = ck.meta.at("generator_adam_step").get<std::int64_t>();
    auto get_moments = [&](const std::string& prefix, const ParamStore<T>& ps, AdamState<T>& opt) {
      for (std::size_t i = 0; i < ps.params().size(); ++i) {
        opt.m[i] = ck.get<T>(prefix + "m/" + ps.params()[i].name);
        opt.v[i] = ck.get<T>(prefix + "v/" + ps.params()[i].name);
        if (opt.m[i].size() != ps.params()[i].value.size() || opt.v[i].size() != ps.params()[i].value.size())
          throw LoadError("optimizer moment size mismatch for " + ps.params()[i].name);
      }
    };
    get_moments("encoder_adam/", st.encoder, st.encoder_opt);
    get_moments("generator_adam/", st.generator, st.generator_opt);
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("invalid network config in checkpoint: ") + e.what());
  }
}

template <class T>
bool same_state(const TrainState<T>& a, const TrainState<T>& b) {
  return a.cfg == b.cfg && a.step == b.step && a.epoch == b.epoch && a.batch_in_epoch == b.batch_in_epoch &&
         a.phase == b.phase && a.rng == b.rng && a.encoder.same_values(b.encoder) &&
         a.generator.same_values(b.generator) && a.encoder_opt == b.encoder_opt && a.generator_opt == b.generator_opt;
}

// ---------------------------------------------------------------------------
// Training loop.

inline constexpr const char* kLogHeader = "step,phase,l_ae,kl_real,kl_rec,kl_sample,l_encoder,l_generator,millis";

inline std::string log_row(const StepTrace& t) {
  std::ostringstream os;
  os << std::setprecision(17) << t.step << ',' << phase_name(t.phase) << ',' << t.loss.l_ae << ',' << t.loss.kl_real
     << ',' << t.loss.kl_rec << ',' << t.loss.kl_sample << ',' << t.loss.l_encoder << ',' << t.loss.l_generator << ','
     << std::setprecision(6) << t.millis;
  return os.str();
}

struct FitOptions {
  int epochs_pretrain = 1;
  int epochs_adversarial = 1;
  std::int64_t max_steps = 0;  // 0: run every configured epoch
  std::filesystem::path out_dir;
  std::int64_t checkpoint_every = 500;
  int keep_checkpoints = 3;
  std::optional<std::filesystem::path> resume_from;
  bool quiet = true;
};

struct FitResult {
  std::int64_t steps_run = 0;
  std::optional<double> pretrain_kl_real;  // mean kl_real over the final pre-training epoch
  std::filesystem::path final_checkpoint;
  std::vector<StepTrace> traces;  // steps run by this call
};

template <class T>
using StepCallback = std::function<void(const TrainState<T>&, const StepTrace&)>;

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
  std::ostringstream os;
  os << "checkpoint_step" << std::setw(8) << std::setfill('0') << step << ".ckpt";
  return dir / os.str();
}

// Pre-training epochs followed by adversarial epochs over `train`, one
// shuffled epoch order per epoch index. Writes train_log.csv and
// checkpoints under options.out_dir. A resumed run continues from the saved
// epoch and batch position with the saved RNG state.
template <class T>
FitResult fit(TrainState<T>& st, const Dataset& train, const FitOptions& opt,
              const std::type_identity_t<StepCallback<T>>& on_step = {}) {
  namespace fs = std::filesystem;
  if (opt.epochs_pretrain < 0 || opt.epochs_adversarial < 0) throw ConfigError("epoch counts must be >= 0");
  if (opt.checkpoint_every <= 0) throw ConfigError("checkpoint interval must be positive");
  if (opt.resume_from) st = from_checkpoint<T>(load_checkpoint(*opt.resume_from));
  if (train.resolution() != st.cfg.resolution) throw ConfigError("dataset resolution differs from network resolution");
  fs::create_directories(opt.out_dir);
  const auto log_path = opt.out_dir / "train_log.csv";

  // Keep rows up to the resumed step, then append.
  std::vector<std::string> kept;
  if (opt.resume_from && fs::exists(log_path)) {
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (std::stoll(line.substr(0, line.find(','))) > st.step) break;
      kept.push_back(line);
    }
  }
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw TrainingAbort("cannot write " + log_path.string());
  log << kLogHeader << '\n';
  for (const auto& l : kept) log << l << '\n';
  log.flush();

  std::deque<fs::path> periodic;
  for (const auto& e : fs::directory_iterator(opt.out_dir))
    if (e.path().filename().string().starts_with("checkpoint_step")) periodic.push_back(e.path());
  std::sort(periodic.begin(), periodic.end());

  auto save = [&](const fs::path& p) {
    log.flush();
    save_checkpoint(p, to_checkpoint(st));
  };

  FitResult result;
  const int total_epochs = opt.epochs_pretrain + opt.epochs_adversarial;
  const int batch_size = st.hp.batch_size;
  std::vector<int> all(static_cast<std::size_t>(train.size()));
  std::iota(all.begin(), all.end(), 0);
  double pretrain_kl_sum = 0.0;
  int pretrain_kl_count = 0;
  bool stop = false;

  while (!stop && st.epoch < total_epochs) {
    const Phase want = st.epoch < opt.epochs_pretrain ? Phase::pretrain : Phase::adversarial;
    if (st.phase != want) {
      if (st.phase == Phase::adversarial) throw ConfigError("cannot return to pre-training after adversarial phase");
      st.phase = want;
    }
    const auto order = batches(std::span<const int>(all), batch_size, derive_seed(st.seed, 1000 + std::uint64_t(st.epoch)));
    const bool last_pretrain_epoch = want == Phase::pretrain && st.epoch == opt.epochs_pretrain - 1;
    if (last_pretrain_epoch) pretrain_kl_sum = 0.0, pretrain_kl_count = 0;
    while (st.batch_in_epoch < static_cast<int>(order.size())) {
      if (opt.max_steps > 0 && st.step >= opt.max_steps) {
        stop = true;
        break;
      }
      const auto x = train.gather<T>(order[std::size_t(st.batch_in_epoch)]);
      StepTrace tr;
      try {
        tr = st.phase == Phase::pretrain ? pretrain_step(st, x) : train_step(st, x);
      } catch (const TrainingAbort&) {
        log.flush();
        throw;
      }
      ++st.batch_in_epoch;
      if (last_pretrain_epoch) pretrain_kl_sum += tr.loss.kl_real, ++pretrain_kl_count;
      log << log_row(tr) << '\n';
      if (!log) throw TrainingAbort("failed writing " + log_path.string());
      result.traces.push_back(tr);
      ++result.steps_run;
      if (!opt.quiet && (st.step % 50 == 0))
        std::cerr << "step " << st.step << " [" << phase_name(st.phase) << "] " << detail::describe(tr.loss) << "\n";
      if (on_step) on_step(st, tr);
      if (st.step % opt.checkpoint_every == 0) {
        const auto p = checkpoint_path(opt.out_dir, st.step);
        save(p);
        periodic.push_back(p);
        while (static_cast<int>(periodic.size()) > opt.keep_checkpoints) {
          fs::remove(periodic.front());
          periodic.pop_front();
        }
      }
    }
    if (!stop) {
      ++st.epoch;
      st.batch_in_epoch = 0;
    }
  }
  if (pretrain_kl_count > 0) result.pretrain_kl_real = pretrain_kl_sum / pretrain_kl_count;
  result.final_checkpoint = opt.out_dir / "checkpoint_final.ckpt";
  save(result.final_checkpoint);
  return result;
}

}  // namespace introvae
