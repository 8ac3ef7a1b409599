// Trains a tiny model on synthetic 16x16 images for a few hundred steps and
// writes a reconstruction montage and a sample grid.

#include <iostream>

#include "introvae/introvae.hpp"

int main() {
  using namespace introvae;
  const auto cfg = resolve_config({}, {{"resolution", "16"}, {"synthetic_images", "400"}, {"seed", "7"}});
  const Dataset ds = generate_synthetic(std::get<SyntheticSpec>(cfg.dataset.source));
  const auto split = split_indices(ds.size(), cfg.dataset.split, cfg.seed);
  const Dataset train = ds.subset(split.train);

  auto st = init_train_state<float>(cfg.net, cfg.hp, cfg.seed);
  FitOptions opt;
  opt.epochs_pretrain = 1;
  opt.epochs_adversarial = 10;
  opt.out_dir = "quickstart_out";
  const auto result = fit(st, train, opt, [](const TrainState<float>& s, const StepTrace& t) {
    if (s.step % 50 == 0)
      std::cout << "step " << s.step << " " << phase_name(t.phase) << " l_ae=" << t.loss.l_ae
                << " kl_real=" << t.loss.kl_real << " kl_rec=" << t.loss.kl_rec << " kl_sample=" << t.loss.kl_sample
                << "\n";
  });
  if (result.pretrain_kl_real) std::cout << "pre-training kl_real: " << *result.pretrain_kl_real << "\n";

  const auto test = ds.gather<float>(split.test);
  const auto recon = reconstruct<float>(st.encoder, st.generator, test);
  std::cout << "test rmse: " << rmse(test, recon) << "\n";
  write_png("quickstart_out/reconstructions.png", montage(concat_leading(test, recon), test.dim(0)));

  Rng rng(1);
  std::vector<float> z(std::size_t(16) * cfg.net.latent_dim);
  for (auto& v : z) v = static_cast<float>(rng.normal());
  write_png("quickstart_out/samples.png", montage(decode<float>(st.generator, z), 4));
}
