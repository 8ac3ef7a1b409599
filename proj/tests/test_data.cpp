#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "introvae/data.hpp"
#include "introvae/image_io.hpp"

using namespace introvae;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("introvae_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RgbImage checker(int w, int h) {
  RgbImage img{w, h, std::vector<std::uint8_t>(std::size_t(w) * h * 3)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.pixels[(std::size_t(y) * w + x) * 3 + c] = std::uint8_t((x * 7 + y * 13 + c * 50) % 256);
  return img;
}

}  // namespace

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.n_images = 12;
  spec.resolution = 16;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  EXPECT_EQ(a.all<float>(), b.all<float>());
  spec.seed = 1;
  EXPECT_NE(a.all<float>(), generate_synthetic(spec).all<float>());
}

TEST(Synthetic, ValuesInUnitRangeAndDistinct) {
  for (auto fam : {SyntheticFamily::gaussian_blobs, SyntheticFamily::gradient_shapes}) {
    SyntheticSpec spec;
    spec.n_images = 20;
    spec.resolution = 16;
    spec.family = fam;
    const auto ds = generate_synthetic(spec);
    ASSERT_EQ(ds.size(), 20);
    for (int i = 0; i < ds.size(); ++i)
      for (float v : ds.image(i)) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    EXPECT_FALSE(std::equal(ds.image(0).begin(), ds.image(0).end(), ds.image(1).begin()));
  }
}

TEST(Synthetic, FamilyNames) {
  EXPECT_EQ(parse_family("gradient-shapes"), SyntheticFamily::gradient_shapes);
  EXPECT_STREQ(family_name(parse_family("gaussian-blobs")), "gaussian-blobs");
  EXPECT_THROW(parse_family("faces"), ConfigError);
}

TEST(Splits, PartitionIsDisjointAndComplete) {
  const auto s = split_indices(2000, {}, 3);
  EXPECT_EQ(s.train.size(), 1600u);
  EXPECT_EQ(s.val.size(), 200u);
  EXPECT_EQ(s.test.size(), 200u);
  std::set<int> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 2000u);
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), 1999);
}

TEST(Splits, SeededAndValidated) {
  EXPECT_EQ(split_indices(100, {}, 5).test, split_indices(100, {}, 5).test);
  EXPECT_NE(split_indices(100, {}, 5).test, split_indices(100, {}, 6).test);
  EXPECT_THROW(split_indices(100, {0.5, 0.2, 0.2}, 1), ConfigError);
  EXPECT_THROW(split_indices(100, {-0.1, 0.6, 0.5}, 1), ConfigError);
  const auto small = split_indices(10, {0.9, 0.05, 0.05}, 1);
  EXPECT_EQ(small.val.size(), 1u);
  EXPECT_EQ(small.test.size(), 1u);
}

TEST(Batches, DropTrailingPartialBatch) {
  const std::vector<int> idx{0, 1, 2, 3, 4, 5, 6};
  const auto b = batches(idx, 3, 9);
  ASSERT_EQ(b.size(), 2u);
  std::set<int> seen;
  for (const auto& v : b) seen.insert(v.begin(), v.end());
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_EQ(batches(idx, 3, 9), b);
  EXPECT_NE(batches(idx, 3, 10), b);
  EXPECT_THROW(batches(idx, 8, 1), ConfigError);
  EXPECT_THROW(batches(idx, 0, 1), ConfigError);
}

TEST(Dataset, GatherAndSubset) {
  SyntheticSpec spec;
  spec.n_images = 5;
  spec.resolution = 16;
  const auto ds = generate_synthetic(spec);
  const std::vector<int> idx{3, 1};
  const auto t = ds.gather<double>(idx);
  EXPECT_EQ(t.shape(), (Tensor<double>::Shape{2, 3, 16, 16}));
  EXPECT_EQ(t(0, 2, 5, 7), double(ds.image(3)[2 * 256 + 5 * 16 + 7]));
  const auto sub = ds.subset(idx);
  EXPECT_EQ(sub.size(), 2);
  EXPECT_EQ(sub.name(0), ds.name(3));
}

TEST(ImageIo, PngRoundTrip) {
  const auto dir = scratch_dir("png");
  const auto img = checker(13, 9);
  write_png(dir / "a.png", img);
  const auto back = read_image(dir / "a.png");
  EXPECT_EQ(back.width, 13);
  EXPECT_EQ(back.height, 9);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(ImageIo, PlanarRoundTripAndCrop) {
  const auto img = checker(8, 8);
  const auto planar = to_planar<float>(img);
  const auto back = from_planar<float>(planar, 3, 8, 8);
  EXPECT_EQ(back.pixels, img.pixels);
  const auto wide = checker(40, 20);
  const auto sq = center_crop_resize(wide, 16);
  EXPECT_EQ(sq.width, 16);
  EXPECT_EQ(sq.height, 16);
  // Same-size square input is passed through unchanged.
  EXPECT_EQ(center_crop_resize(img, 8).pixels, img.pixels);
}

TEST(ImageIo, UnreadableFileThrowsLoadError) {
  const auto dir = scratch_dir("bad");
  std::ofstream(dir / "x.png") << "not an image";
  EXPECT_THROW(read_image(dir / "x.png"), LoadError);
  EXPECT_THROW(read_image(dir / "missing.png"), LoadError);
}

TEST(Folder, SkipsUndecodableFilesWithWarning) {
  const auto dir = scratch_dir("folder");
  write_png(dir / "b.png", checker(20, 20));
  write_png(dir / "a.png", checker(16, 24));
  std::ofstream(dir / "c.png") << "garbage";
  std::vector<std::string> warnings;
  const auto ds = load_folder(dir, 16, [&](const std::string& w) { warnings.push_back(w); });
  ASSERT_EQ(ds.size(), 2);
  EXPECT_EQ(ds.name(0), "a.png");
  EXPECT_EQ(ds.name(1), "b.png");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("c.png"), std::string::npos);
}

TEST(Folder, EmptyOrMissingIsConfigError) {
  const auto dir = scratch_dir("empty");
  EXPECT_THROW(load_folder(dir, 16, [](const std::string&) {}), ConfigError);
  EXPECT_THROW(load_folder(dir / "nope", 16, [](const std::string&) {}), ConfigError);
}

TEST(Montage, TilesInRowMajorOrder) {
  Tensor<float> batch({3, 3, 2, 2});
  for (int i = 0; i < 3; ++i) std::fill(batch.slice(i).begin(), batch.slice(i).end(), float(i) / 2);
  const auto g = montage(batch, 2);
  EXPECT_EQ(g.width, 4);
  EXPECT_EQ(g.height, 4);
  EXPECT_EQ(g.pixels[(std::size_t(0) * 4 + 2) * 3], 128);  // tile 1, top row
  EXPECT_EQ(g.pixels[(std::size_t(2) * 4 + 0) * 3], 255);  // tile 2, second row
  EXPECT_EQ(g.pixels[(std::size_t(2) * 4 + 2) * 3], 0);    // empty cell
}
