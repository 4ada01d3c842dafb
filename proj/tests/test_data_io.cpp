#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "srl/data/dataset.hpp"
#include "srl/data/image.hpp"
#include "srl/data/prepare.hpp"
#include "srl/data/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::create_directories(p);
  return p.string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Png, KnownPixelsDecodeExactly) {
  srl::ImageU8 img;
  img.width = 2;
  img.height = 2;
  img.rgb = {255, 0, 0,  0, 255, 0,  0, 0, 255,  10, 20, 30};
  const std::string path = temp_dir("srl_png") + "/two_by_two.png";
  srl::save_png(path, img);
  srl::Array<double> a = srl::load_image<double>(path);
  ASSERT_EQ(a.shape(), (srl::Shape{3, 2, 2}));
  EXPECT_DOUBLE_EQ(a.at(0 * 4 + 0), 1.0);          // R of (0,0)
  EXPECT_DOUBLE_EQ(a.at(1 * 4 + 1), 1.0);          // G of (0,1)
  EXPECT_DOUBLE_EQ(a.at(2 * 4 + 2), 1.0);          // B of (1,0)
  EXPECT_DOUBLE_EQ(a.at(0 * 4 + 3), 10.0 / 255.0);
  EXPECT_DOUBLE_EQ(a.at(1 * 4 + 3), 20.0 / 255.0);
  EXPECT_DOUBLE_EQ(a.at(2 * 4 + 3), 30.0 / 255.0);
}

TEST(Png, GrayscaleReplicatesToThreeChannels) {
  // Write a grayscale PNG through libpng directly.
  const std::string path = temp_dir("srl_png") + "/gray.png";
  {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    ASSERT_NE(fp, nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    ASSERT_EQ(setjmp(png_jmpbuf(png)), 0);
    png_init_io(png, fp);
    png_set_IHDR(png, info, 2, 1, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    unsigned char row[2] = {100, 200};
    png_bytep rows[1] = {row};
    png_write_image(png, rows);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
  }
  srl::Array<double> a = srl::load_image<double>(path);
  ASSERT_EQ(a.shape(), (srl::Shape{3, 1, 2}));
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(a.at(c * 2 + 0), 100.0 / 255.0);
    EXPECT_DOUBLE_EQ(a.at(c * 2 + 1), 200.0 / 255.0);
  }
}

TEST(Png, CorruptFileReportsPath) {
  const std::string path = temp_dir("srl_png") + "/garbage.png";
  std::ofstream f(path, std::ios::binary);
  f << "this is not a png";
  f.close();
  try {
    srl::load_png(path);
    FAIL() << "expected IoError";
  } catch (const srl::IoError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
}

TEST(RawContainer, ImageRoundTripBitIdentical) {
  srl::Rng rng(5);
  srl::Array<double> img = srl::Array<double>::zeros({3, 4, 5});
  for (auto& v : img.values()) v = rng.uniform();
  const std::string path = temp_dir("srl_raw") + "/img.srla";
  srl::save_array_container(path, img);
  srl::Array<double> back = srl::load_image<double>(path);
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i)
    EXPECT_EQ(back.data()[i], img.data()[i]);
}

TEST(Ppm, DeterministicBytes) {
  srl::ImageU8 img;
  img.width = 3;
  img.height = 2;
  img.rgb.assign(18, 7);
  const std::string p1 = temp_dir("srl_ppm") + "/a.ppm";
  const std::string p2 = temp_dir("srl_ppm") + "/b.ppm";
  srl::save_ppm(p1, img);
  srl::save_ppm(p2, img);
  const std::string bytes = read_bytes(p1);
  EXPECT_EQ(bytes, read_bytes(p2));
  EXPECT_EQ(bytes.substr(0, 2), "P6");
}

TEST(Synthetic, BalancedCountsAndLabels) {
  srl::SyntheticShapesSpec spec;
  spec.image_size = 32;
  spec.classes = 4;
  spec.per_class_train = 10;
  spec.per_class_val = 3;
  spec.seed = 77;
  const std::string root = temp_dir("srl_synth_counts");
  srl::SyntheticDataset ds = srl::generate_synthetic(spec, root);
  EXPECT_EQ(ds.train.entries.size(), 40u);
  EXPECT_EQ(ds.val.entries.size(), 12u);
  std::vector<int> counts(4, 0);
  for (const auto& e : ds.train.entries) counts[static_cast<std::size_t>(e.label)]++;
  for (int c : counts) EXPECT_EQ(c, 10);
  // manifests reload and validate
  srl::DatasetManifest man = srl::load_manifest(root + "/train.txt");
  EXPECT_EQ(man.entries.size(), 40u);
  EXPECT_EQ(man.num_classes(), 4);
}

TEST(Synthetic, SameSeedSameBytes) {
  srl::SyntheticShapesSpec spec;
  spec.image_size = 32;
  spec.classes = 3;
  spec.per_class_train = 2;
  spec.per_class_val = 1;
  spec.seed = 123;
  const std::string r1 = temp_dir("srl_synth_a");
  const std::string r2 = temp_dir("srl_synth_b");
  srl::generate_synthetic(spec, r1);
  srl::generate_synthetic(spec, r2);
  for (const auto& entry : srl::load_manifest(r1 + "/train.txt").entries) {
    EXPECT_EQ(read_bytes(r1 + "/" + entry.rel_path),
              read_bytes(r2 + "/" + entry.rel_path))
        << entry.rel_path;
  }
}

TEST(Synthetic, ZeroClassesRejected) {
  srl::SyntheticShapesSpec spec;
  spec.classes = 0;
  EXPECT_THROW(srl::generate_synthetic(spec, temp_dir("srl_synth_zero")),
               srl::ConfigError);
}

TEST(Manifest, NonContiguousLabelsRejected) {
  const std::string root = temp_dir("srl_manifest_bad");
  {
    srl::ImageU8 img;
    img.width = img.height = 2;
    img.rgb.assign(12, 0);
    srl::save_png(root + "/a.png", img);
    srl::save_png(root + "/b.png", img);
  }
  std::ofstream f(root + "/train.txt", std::ios::trunc);
  f << "a.png 0\nb.png 2\n";  // label 1 missing
  f.close();
  EXPECT_THROW(srl::load_manifest(root + "/train.txt"), srl::ValueError);
}

TEST(Manifest, MissingFileRejected) {
  const std::string root = temp_dir("srl_manifest_missing");
  std::ofstream f(root + "/train.txt", std::ios::trunc);
  f << "nope.png 0\n";
  f.close();
  EXPECT_THROW(srl::load_manifest(root + "/train.txt"), srl::IoError);
}

TEST(EnsureDataset, RegeneratesWhenSpecChanges) {
  const std::string root = temp_dir("srl_ensure");
  srl::TrainConfig cfg;
  cfg.data_root = root;
  cfg.data_classes = 3;
  cfg.data_per_class_train = 2;
  cfg.data_per_class_val = 1;
  cfg.data_image_size = 32;
  srl::DatasetSplits s1 = srl::ensure_dataset(cfg);
  EXPECT_EQ(s1.train.entries.size(), 6u);
  // same spec reuses the files on disk
  srl::DatasetSplits s2 = srl::ensure_dataset(cfg);
  EXPECT_EQ(s2.train.entries.size(), 6u);
  // changed spec regenerates
  cfg.data_per_class_train = 3;
  srl::DatasetSplits s3 = srl::ensure_dataset(cfg);
  EXPECT_EQ(s3.train.entries.size(), 9u);
}
