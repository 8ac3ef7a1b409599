#pragma once

// Subcommands of the introvae executable. run_cli() is the whole program;
// main() only forwards to it so tests can drive it in-process.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "introvae/introvae.hpp"
#include "plot.hpp"

namespace introvae::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeAbort = 2, kVerificationFailure = 3 };

inline std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

inline std::string grid_name(const char* prefix, std::int64_t step) {
  std::ostringstream os;
  os << prefix << std::setw(8) << std::setfill('0') << step << ".png";
  return os.str();
}

inline std::string indexed(const char* prefix, int i, const char* ext = ".png") {
  std::ostringstream os;
  os << prefix << std::setw(4) << std::setfill('0') << i << ext;
  return os.str();
}

inline int grid_cols(int n) { return std::max(1, static_cast<int>(std::ceil(std::sqrt(double(n))))); }

inline std::vector<float> prior_noise(std::uint64_t seed, int n, int dim) {
  Rng rng(seed);
  std::vector<float> z(std::size_t(n) * dim);
  for (auto& v : z) v = static_cast<float>(rng.normal());
  return z;
}

// Decodes n prior samples in chunks; deterministic in `seed`.
inline Tensor<float> sample_prior(const ParamStore<float>& gen, const NetConfig& cfg, int n, std::uint64_t seed) {
  const auto z = prior_noise(seed, n, cfg.latent_dim);
  std::vector<Tensor<float>> parts;
  constexpr int chunk = 64;
  for (int b = 0; b < n; b += chunk) {
    const int k = std::min(chunk, n - b);
    parts.push_back(decode<float>(gen, std::span<const float>(z).subspan(std::size_t(b) * cfg.latent_dim,
                                                                       std::size_t(k) * cfg.latent_dim)));
  }
  Tensor<float> out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat_leading(out, parts[i]);
  return out;
}

inline Tensor<float> reconstruct_all(const TrainState<float>& st, const Tensor<float>& images) {
  std::vector<Tensor<float>> parts;
  constexpr int chunk = 64;
  const int n = images.dim(0);
  for (int b = 0; b < n; b += chunk)
    parts.push_back(reconstruct<float>(st.encoder, st.generator, take_leading(images, b, std::min(n, b + chunk))));
  Tensor<float> out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat_leading(out, parts[i]);
  return out;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw TrainingAbort("cannot write " + p.string());
  out << text;
}

inline TrainState<float> load_model(const RunConfig& cfg) {
  if (!cfg.checkpoint) throw ConfigError("this command needs --checkpoint");
  if (!fs::exists(*cfg.checkpoint)) throw ConfigError("checkpoint not found: " + cfg.checkpoint->string());
  return from_checkpoint<float>(load_checkpoint(*cfg.checkpoint));
}

inline Tensor<float> image_tensor(const fs::path& p, int resolution) {
  const auto planar = to_planar<float>(center_crop_resize(read_image(p), resolution));
  Tensor<float> t({1, 3, resolution, resolution});
  std::copy(planar.begin(), planar.end(), t.data());
  return t;
}

struct DataSplits {
  Dataset all;
  Splits idx;
  Dataset train, val, test;
};

inline DataSplits load_splits(const RunConfig& cfg) {
  DataSplits d;
  d.all = load_dataset(cfg.dataset);
  d.idx = split_indices(d.all.size(), cfg.dataset.split, cfg.dataset.shuffle_seed);
  d.train = d.all.subset(d.idx.train);
  d.val = d.all.subset(d.idx.val);
  d.test = d.all.subset(d.idx.test);
  return d;
}

// Reads train_log.csv columns back for plotting and summaries.
struct LogColumns {
  std::vector<double> l_ae, kl_real, kl_rec, kl_sample;
  std::vector<std::string> phase;
};

inline LogColumns read_train_log(const fs::path& p) {
  LogColumns c;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string f[9];
    for (auto& x : f) std::getline(ss, x, ',');
    c.phase.push_back(f[1]);
    c.l_ae.push_back(std::stod(f[2]));
    c.kl_real.push_back(std::stod(f[3]));
    c.kl_rec.push_back(std::stod(f[4]));
    c.kl_sample.push_back(std::stod(f[5]));
  }
  return c;
}

inline void render_loss_curve(const fs::path& log, const fs::path& png, double margin) {
  const auto c = read_train_log(log);
  const std::size_t w = 25;
  std::vector<plot::Series> s{{plot::smooth(c.kl_real, w), {31, 119, 180}},
                              {plot::smooth(c.kl_rec, w), {214, 39, 40}},
                              {plot::smooth(c.kl_sample, w), {44, 160, 44}},
                              {std::vector<double>(c.kl_real.size(), margin), {127, 127, 127}, true}};
  write_png(png, plot::line_chart(s));
}

// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg) {
  const auto data = load_splits(cfg);
  if (data.train.size() < cfg.hp.batch_size)
    throw ConfigError("training split has " + std::to_string(data.train.size()) + " images, fewer than batch_size");
  fs::create_directories(cfg.out);
  write_effective_config(cfg, cfg.out);
  auto st = init_train_state<float>(cfg.net, cfg.hp, cfg.seed);
  FitOptions opt;
  opt.epochs_pretrain = cfg.epochs_pretrain;
  opt.epochs_adversarial = cfg.epochs_adv;
  opt.max_steps = cfg.steps;
  opt.out_dir = cfg.out;
  opt.checkpoint_every = cfg.checkpoint_every;
  opt.keep_checkpoints = cfg.keep_checkpoints;
  opt.resume_from = cfg.checkpoint;
  opt.quiet = false;
  const auto fixed_z = prior_noise(derive_seed(cfg.seed, 99), 16, cfg.net.latent_dim);
  auto on_step = [&](const TrainState<float>& s, const StepTrace&) {
    if (cfg.sample_every > 0 && s.step % cfg.sample_every == 0)
      write_png(cfg.out / grid_name("samples_step", s.step), montage(decode<float>(s.generator, fixed_z), 4));
  };
  const auto result = fit(st, data.train, opt, on_step);
  write_png(cfg.out / "samples_final.png", montage(decode<float>(st.generator, fixed_z), 4));
  if (cfg.plot) render_loss_curve(cfg.out / "train_log.csv", cfg.out / "loss_curve.png", cfg.hp.margin);

  std::ostringstream summary;
  summary << std::setprecision(10) << "steps " << st.step << "\n";
  if (result.pretrain_kl_real) {
    // The margin should sit a little above the KL a plain VAE reaches.
    summary << "pretrain_kl_real " << *result.pretrain_kl_real << "\n"
            << "suggested_margin " << std::ceil(*result.pretrain_kl_real * 1.1) << "\n";
  }
  summary << "checkpoint " << result.final_checkpoint.string() << "\n";
  write_text(cfg.out / "train_summary.txt", summary.str());
  std::cout << summary.str();
  return kOk;
}

inline int cmd_sample(const RunConfig& cfg) {
  const auto st = load_model(cfg);
  fs::create_directories(cfg.out);
  write_effective_config(cfg, cfg.out);
  const auto x = sample_prior(st.generator, st.cfg, cfg.n_samples, cfg.seed);
  for (int i = 0; i < x.dim(0); ++i)
    write_png(cfg.out / indexed("sample_", i), from_planar<float>(x.slice(i), x.dim(1), x.dim(2), x.dim(3)));
  write_png(cfg.out / "samples_grid.png", montage(x, grid_cols(x.dim(0))));
  std::cout << "wrote " << x.dim(0) << " samples to " << cfg.out.string() << "\n";
  return kOk;
}

inline int cmd_reconstruct(const RunConfig& cfg) {
  const auto st = load_model(cfg);
  if (!cfg.input) throw ConfigError("reconstruct needs --input FOLDER");
  const auto ds = load_folder(*cfg.input, st.cfg.resolution);
  fs::create_directories(cfg.out);
  write_effective_config(cfg, cfg.out);
  const auto x = ds.all<float>();
  const auto xr = reconstruct_all(st, x);
  for (int i = 0; i < x.dim(0); ++i) {
    write_png(cfg.out / indexed("original_", i), from_planar<float>(x.slice(i), x.dim(1), x.dim(2), x.dim(3)));
    write_png(cfg.out / indexed("reconstruction_", i), from_planar<float>(xr.slice(i), x.dim(1), x.dim(2), x.dim(3)));
  }
  write_png(cfg.out / "pairs.png", montage(concat_leading(x, xr), x.dim(0)));
  const double e = rmse(x, xr);
  write_text(cfg.out / "reconstruct_metrics.csv", metric_csv({{"rmse", "reconstruction", e, x.dim(0), cfg.seed}}));
  std::cout << std::setprecision(17) << "rmse " << e << "\n";
  return kOk;
}

inline int cmd_interpolate(const RunConfig& cfg) {
  const auto st = load_model(cfg);
  if (!cfg.image_a || !cfg.image_b) throw ConfigError("interpolate needs --image-a and --image-b");
  const auto a = image_tensor(*cfg.image_a, st.cfg.resolution);
  const auto b = image_tensor(*cfg.image_b, st.cfg.resolution);
  fs::create_directories(cfg.out);
  write_effective_config(cfg, cfg.out);
  const auto frames = latent_interpolate<float>(st.encoder, st.generator, a, b, cfg.interp_steps);
  Tensor<float> strip = frames.front();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    write_png(cfg.out / indexed("frame_", int(i)), from_planar<float>(f.span(), f.dim(1), f.dim(2), f.dim(3)));
    if (i > 0) strip = concat_leading(strip, f);
  }
  write_png(cfg.out / "strip.png", montage(strip, strip.dim(0)));
  std::cout << "wrote " << frames.size() << " frames to " << cfg.out.string() << "\n";
  return kOk;
}

inline const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> m{"pair_diversity", "rmse", "frechet", "nearest_neighbors"};
  return m;
}

inline std::vector<MetricRow> evaluate(const RunConfig& cfg, const TrainState<float>& st, const DataSplits& data,
                                       const fs::path& out) {
  for (const auto& m : cfg.metrics)
    if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end())
      throw ConfigError("unknown metric '" + m + "' (known: pair_diversity, rmse, frechet, nearest_neighbors)");
  if (cfg.metrics.empty()) throw ConfigError("no metrics selected");
  auto wants = [&](const char* m) { return std::find(cfg.metrics.begin(), cfg.metrics.end(), m) != cfg.metrics.end(); };
  const Dataset& real = data.test.size() > 0 ? data.test : data.all;
  const auto samples = sample_prior(st.generator, st.cfg, cfg.eval_samples, derive_seed(cfg.seed, 11));
  Checkpoint saved;
  saved.meta["format"] = "introvae-eval-samples";
  saved.meta["seed"] = cfg.seed;
  saved.put<float>("samples", {samples.dim(0), samples.dim(1), samples.dim(2), samples.dim(3)}, samples.span());
  save_checkpoint(out / "eval_samples.ckpt", saved);

  std::vector<MetricRow> rows;
  if (wants("pair_diversity"))
    rows.push_back({"pair_diversity", "ms_ssim_mean", pair_diversity(samples, cfg.n_pairs, cfg.seed), cfg.n_pairs,
                    cfg.seed});
  if (wants("rmse")) {
    const auto x = real.all<float>();
    rows.push_back({"rmse", "test_reconstruction", rmse(x, reconstruct_all(st, x)), x.dim(0), cfg.seed});
  }
  if (wants("frechet")) {
    const double f = frechet_score(pixel_features(real.all<float>()), pixel_features(samples));
    rows.push_back({"frechet", "pixel_features", f, samples.dim(0), cfg.seed});
  }
  if (wants("nearest_neighbors")) {
    const Dataset& pool = data.train.size() > 0 ? data.train : data.all;
    const int k = std::min(cfg.knn_k, pool.size());
    for (int i = 0; i < std::min(8, samples.dim(0)); ++i) {
      const auto nn = nearest_neighbors_l1<float>(samples.slice(i), pool, k);
      for (std::size_t r = 0; r < nn.size(); ++r)
        rows.push_back({"nearest_neighbors", "sample" + std::to_string(i) + "_rank" + std::to_string(r),
                        nn[r].distance, nn[r].index, cfg.seed});
    }
  }
  return rows;
}

inline int cmd_eval(const RunConfig& cfg) {
  const auto st = load_model(cfg);
  auto data_cfg = cfg;
  data_cfg.dataset.resolution = st.cfg.resolution;
  if (auto* syn = std::get_if<SyntheticSpec>(&data_cfg.dataset.source)) syn->resolution = st.cfg.resolution;
  const auto data = load_splits(data_cfg);
  fs::create_directories(cfg.out);
  write_effective_config(cfg, cfg.out);
  const auto rows = evaluate(cfg, st, data, cfg.out);
  const auto csv = metric_csv(rows);
  write_text(cfg.out / "eval_report.csv", csv);
  std::cout << csv;
  return kOk;
}

struct SweepCell {
  double margin = 0.0, beta = 0.0;
  double rmse = 0.0, pair_diversity = 0.0;
};

// Trains one (m, beta) cell from scratch and scores it on the test split.
inline SweepCell run_sweep_cell(RunConfig cfg, double margin, double beta, const DataSplits& data) {
  cfg.hp.margin = margin;
  cfg.hp.beta = beta;
  cfg.values["margin"] = (std::ostringstream() << std::setprecision(17) << margin).str();
  cfg.values["beta"] = (std::ostringstream() << std::setprecision(17) << beta).str();
  cfg.values["sweep_margins"] = cfg.values["sweep_betas"] = "";
  write_effective_config(cfg, cfg.out);
  auto st = init_train_state<float>(cfg.net, cfg.hp, cfg.seed);
  FitOptions opt;
  opt.epochs_pretrain = cfg.epochs_pretrain;
  opt.epochs_adversarial = cfg.epochs_adv;
  opt.max_steps = cfg.steps;
  opt.out_dir = cfg.out;
  opt.checkpoint_every = cfg.checkpoint_every;
  opt.keep_checkpoints = cfg.keep_checkpoints;
  fit(st, data.train, opt);
  const Dataset& real = data.test.size() > 0 ? data.test : data.all;
  const auto x = real.all<float>();
  SweepCell c{margin, beta, rmse(x, reconstruct_all(st, x)), 0.0};
  const auto samples = sample_prior(st.generator, st.cfg, cfg.eval_samples, derive_seed(cfg.seed, 11));
  c.pair_diversity = pair_diversity(samples, cfg.n_pairs, cfg.seed);
  return c;
}

inline std::string sweep_cell_dir(double margin, double beta) {
  std::ostringstream os;
  os << "cell_m" << margin << "_b" << beta;
  return os.str();
}

inline int cmd_sweep(const RunConfig& cfg) {
  if (cfg.sweep_margins.empty() || cfg.sweep_betas.empty())
    throw ConfigError("sweep needs non-empty --sweep-margins and --sweep-betas");
  const auto data = load_splits(cfg);
  fs::create_directories(cfg.out);
  write_effective_config(cfg, cfg.out);
  std::ostringstream table;
  table << std::setprecision(17) << "margin,beta,alpha,steps,rmse,pair_diversity\n";
  for (double m : cfg.sweep_margins)
    for (double b : cfg.sweep_betas) {
      auto cell_cfg = cfg;
      cell_cfg.out = cfg.out / sweep_cell_dir(m, b);
      const auto c = run_sweep_cell(cell_cfg, m, b, data);
      table << c.margin << ',' << c.beta << ',' << cfg.hp.alpha << ',' << cfg.steps << ',' << c.rmse << ','
            << c.pair_diversity << '\n';
      std::cerr << "cell m=" << m << " beta=" << b << " rmse=" << c.rmse << " diversity=" << c.pair_diversity << "\n";
    }
  write_text(cfg.out / "sweep.csv", table.str());
  std::cout << table.str();
  return kOk;
}

inline int cmd_verify_theory(const RunConfig& cfg) {
  using namespace theory;
  if (!(cfg.hp.margin > 0.0)) throw ConfigError("verify-theory needs a margin > 0");
  constexpr double tol = 1e-9;
  const auto lemma = lemma1_fuzz(cfg.theory_games, 10000, derive_seed(cfg.seed, 21));
  const auto games = saddle_fuzz(cfg.theory_games, cfg.hp.margin, derive_seed(cfg.seed, 22), tol, 1000);
  const bool ok = lemma.disagreements == 0 && games.failures() == 0;

  std::ostringstream text;
  text << std::setprecision(12);
  text << "lemma-1 fuzz: " << lemma.trials << " problems, " << lemma.disagreements
       << " disagreements, max value gap " << lemma.max_value_gap << "\n";
  text << "saddle games: " << games.games << " games at m = " << cfg.hp.margin << "\n"
       << "  saddle not certified:        " << games.saddle_failures << "\n"
       << "  |V - m| > tol:               " << games.margin_failures << " (max " << games.max_abs_v_minus_m << ")\n"
       << "  perturbed V < m - tol:       " << games.perturbation_failures << " (min V - m "
       << games.min_perturbed_v_minus_m << ")\n"
       << "  gamma > m certified:         " << games.control_failures << "\n"
       << "  uneven E without deviation:  " << games.deviation_failures << "\n";
  for (std::size_t i = 0; i < games.sample.size(); ++i) {
    const auto& r = games.sample[i];
    text << "  report " << i << ": V=" << r.value_v << " U=" << r.value_u << " saddle=" << r.is_saddle
         << " gamma=" << r.gamma_estimate.value_or(-1) << " max_violation=" << r.max_violation
         << " U_flat_in_G=" << r.u_constant_in_generator << "\n";
  }
  text << (ok ? "PASS" : "FAIL") << "\n";

  std::ostringstream csv;
  csv << std::setprecision(17) << "check,count,failures,extreme\n"
      << "lemma1," << lemma.trials << ',' << lemma.disagreements << ',' << lemma.max_value_gap << '\n'
      << "saddle," << games.games << ',' << games.saddle_failures << ",0\n"
      << "v_equals_m," << games.games << ',' << games.margin_failures << ',' << games.max_abs_v_minus_m << '\n'
      << "perturbation," << games.games << ',' << games.perturbation_failures << ','
      << games.min_perturbed_v_minus_m << '\n'
      << "gamma_above_m," << games.games << ',' << games.control_failures << ",0\n"
      << "generator_deviation," << games.games << ',' << games.deviation_failures << ",0\n";
  fs::create_directories(cfg.out);
  write_effective_config(cfg, cfg.out);
  write_text(cfg.out / "verify_theory.csv", csv.str());
  write_text(cfg.out / "verify_theory.txt", text.str());
  std::cout << text.str() << csv.str();
  return ok ? kOk : kVerificationFailure;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"IntroVAE: introspective variational autoencoder"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> flag_values;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "train a model (pre-training, then adversarial training)"},
      {"sample", "decode prior samples from a checkpoint"},
      {"reconstruct", "reconstruct a folder of images through the posterior mean"},
      {"interpolate", "decode a latent interpolation between two images"},
      {"eval", "compute sample and reconstruction metrics"},
      {"sweep", "train a margin x beta grid and tabulate RMSE and diversity"},
      {"verify-theory", "check the equilibrium identities on random discrete games"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "config file (key = value lines)");
    for (const auto& k : config_keys()) {
      std::string names = flag_name(k.name);
      if (k.name == "margin") names += ",--m";
      if (k.name == "plot") {
        sub->add_flag_function(names, [&flag_values](std::int64_t) { flag_values["plot"] = "true"; }, k.help);
        continue;
      }
      sub->add_option_function<std::string>(names, [&flag_values, key = k.name](const std::string& v) {
        flag_values[key] = v;
      }, k.help);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const ConfigValues file = config_path.empty() ? ConfigValues{} : read_config_file(config_path);
    const RunConfig cfg = resolve_config(file, flag_values);
    if (command == "train") return cmd_train(cfg);
    if (command == "sample") return cmd_sample(cfg);
    if (command == "reconstruct") return cmd_reconstruct(cfg);
    if (command == "interpolate") return cmd_interpolate(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "sweep") return cmd_sweep(cfg);
    return cmd_verify_theory(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeAbort;
  }
}

}  // namespace introvae::cli
