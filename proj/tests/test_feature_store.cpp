#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <eagle/errors.hpp>
#include <eagle/feature_store.hpp>
#include <eagle/rng.hpp>

using namespace eagle;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "eagle_fs_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_raw(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_u32(std::vector<unsigned char>& bytes, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void push_f32(std::vector<unsigned char>& bytes, float f) {
  unsigned char raw[4];
  std::memcpy(raw, &f, 4);
  bytes.insert(bytes.end(), raw, raw + 4);
}

FeatureGrid random_grid(Rng& rng, Index c, Index h, Index w) {
  FeatureGrid grid(c, h, w);
  for (Index p = 0; p < grid.patch_count(); ++p)
    for (Index ch = 0; ch < c; ++ch)
      grid.patches(p, ch) = static_cast<float>(rng.normal());
  return grid;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_CASE("load decodes a hand-built file") {
  const auto dir = temp_dir("decode");
  std::vector<unsigned char> bytes(kFeatureMagic, kFeatureMagic + 8);
  push_u32(bytes, 2);  // C
  push_u32(bytes, 1);  // H
  push_u32(bytes, 1);  // W
  push_f32(bytes, 1.0f);
  push_f32(bytes, 2.0f);
  write_raw(dir / "a.eaglfeat", bytes);

  const FeatureGrid grid = load_feature_grid(dir / "a.eaglfeat");
  CHECK(grid.channels == 2);
  CHECK(grid.height == 1);
  CHECK(grid.width == 1);
  CHECK(grid.patches(0, 0) == 1.0f);
  CHECK(grid.patches(0, 1) == 2.0f);
}

TEST_CASE("save/load round-trips bit-exactly") {
  const auto dir = temp_dir("roundtrip");
  Rng rng(7);
  for (int trial = 0; trial < 8; ++trial) {
    const Index c = 1 + static_cast<Index>(rng.below(9));
    const Index h = 1 + static_cast<Index>(rng.below(12));
    const Index w = 1 + static_cast<Index>(rng.below(12));
    const FeatureGrid grid = random_grid(rng, c, h, w);

    const auto path = dir / "g.eaglfeat";
    save_feature_grid(grid, path);
    const FeatureGrid loaded = load_feature_grid(path);
    CHECK(loaded.channels == grid.channels);
    CHECK(loaded.height == grid.height);
    CHECK(loaded.width == grid.width);
    CHECK((loaded.patches.array() == grid.patches.array()).all());

    // Re-saving the loaded grid reproduces the file byte for byte.
    const auto path2 = dir / "g2.eaglfeat";
    save_feature_grid(loaded, path2);
    CHECK(slurp(path) == slurp(path2));
  }

  // 64x28x28 case from the format contract.
  const FeatureGrid big = random_grid(rng, 64, 28, 28);
  save_feature_grid(big, dir / "big.eaglfeat");
  const FeatureGrid big2 = load_feature_grid(dir / "big.eaglfeat");
  CHECK((big2.patches.array() == big.patches.array()).all());
}

TEST_CASE("malformed files are rejected") {
  const auto dir = temp_dir("malformed");

  SUBCASE("bad magic") {
    std::vector<unsigned char> bytes = {'N', 'O', 'T', 'M', 'A', 'G', 'I', 'C'};
    push_u32(bytes, 1);
    push_u32(bytes, 1);
    push_u32(bytes, 1);
    push_f32(bytes, 0.0f);
    write_raw(dir / "bad.eaglfeat", bytes);
    CHECK_THROWS_AS(load_feature_grid(dir / "bad.eaglfeat"), FormatError);
  }

  SUBCASE("truncated payload") {
    std::vector<unsigned char> bytes(kFeatureMagic, kFeatureMagic + 8);
    push_u32(bytes, 2);
    push_u32(bytes, 2);
    push_u32(bytes, 2);
    push_f32(bytes, 1.0f);  // 7 floats short
    write_raw(dir / "trunc.eaglfeat", bytes);
    CHECK_THROWS_AS(load_feature_grid(dir / "trunc.eaglfeat"), FormatError);
  }

  SUBCASE("non-finite payload") {
    std::vector<unsigned char> bytes(kFeatureMagic, kFeatureMagic + 8);
    push_u32(bytes, 1);
    push_u32(bytes, 1);
    push_u32(bytes, 1);
    push_f32(bytes, std::numeric_limits<float>::quiet_NaN());
    write_raw(dir / "nan.eaglfeat", bytes);
    CHECK_THROWS_AS(load_feature_grid(dir / "nan.eaglfeat"), FormatError);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_feature_grid(dir / "absent.eaglfeat"), IoError);
  }
}

TEST_CASE("aggregate_patches identity at patchsize 1, stride 1") {
  Rng rng(3);
  const FeatureGrid grid = random_grid(rng, 5, 6, 7);
  const FeatureGrid out = aggregate_patches(grid, 1, 1);
  CHECK(out.height == grid.height);
  CHECK(out.width == grid.width);
  CHECK((out.patches.array() == grid.patches.array()).all());
}

TEST_CASE("aggregate_patches matches the zero-padded mean oracle") {
  // Constant 1x3x3 grid of 5.0 with patchsize 3: interior keeps 5.0, the
  // corner window holds 4 valid cells out of 9.
  FeatureGrid grid(1, 3, 3);
  grid.patches.setConstant(5.0f);
  const FeatureGrid out = aggregate_patches(grid, 3, 1);
  CHECK(out.patches(out.patch_index(1, 1), 0) == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(out.patches(out.patch_index(0, 0), 0) ==
        doctest::Approx(5.0 * 4.0 / 9.0).epsilon(1e-6));
  CHECK(out.patches(out.patch_index(0, 1), 0) ==
        doctest::Approx(5.0 * 6.0 / 9.0).epsilon(1e-6));

  // Independent dense oracle on a random grid.
  Rng rng(17);
  const FeatureGrid g = random_grid(rng, 3, 5, 4);
  const FeatureGrid a = aggregate_patches(g, 3, 2);
  CHECK(a.height == 3);  // ceil(5/2)
  CHECK(a.width == 2);   // ceil(4/2)
  for (Index oh = 0; oh < a.height; ++oh) {
    for (Index ow = 0; ow < a.width; ++ow) {
      for (Index c = 0; c < g.channels; ++c) {
        double acc = 0.0;
        for (Index dh = -1; dh <= 1; ++dh)
          for (Index dw = -1; dw <= 1; ++dw) {
            const Index h = oh * 2 + dh;
            const Index w = ow * 2 + dw;
            if (h < 0 || h >= g.height || w < 0 || w >= g.width) continue;
            acc += g.patches(g.patch_index(h, w), c);
          }
        CHECK(a.patches(a.patch_index(oh, ow), c) ==
              doctest::Approx(acc / 9.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("aggregate_patches shape arithmetic and errors") {
  Rng rng(5);
  const FeatureGrid g = random_grid(rng, 2, 4, 4);
  const FeatureGrid out = aggregate_patches(g, 3, 2);
  CHECK(out.height == 2);
  CHECK(out.width == 2);

  CHECK_THROWS_AS(aggregate_patches(g, 2, 1), ArgumentError);  // even
  CHECK_THROWS_AS(aggregate_patches(g, 5, 1), ArgumentError);  // larger than grid
  CHECK_THROWS_AS(aggregate_patches(g, 3, 0), ArgumentError);
}

TEST_CASE("mask round trip") {
  const auto dir = temp_dir("mask");
  GroundTruthMask mask;
  mask.height = 3;
  mask.width = 4;
  mask.mask = RowMatrix<std::uint8_t>::Zero(3, 4);
  mask.mask(1, 2) = 1;
  mask.mask(2, 3) = 1;
  save_mask(mask, dir / "m.eaglfeat");
  const GroundTruthMask loaded = load_mask(dir / "m.eaglfeat");
  CHECK(loaded.height == 3);
  CHECK(loaded.width == 4);
  CHECK((loaded.mask.array() == mask.mask.array()).all());
}

TEST_CASE("manifest validation and round trip") {
  const auto dir = temp_dir("manifest");
  DatasetManifest manifest;
  manifest.split = Split::test_anomalous;
  manifest.entries.push_back({"img_0", "test_anomalous/img_0.eaglfeat",
                              "test_anomalous/img_0.mask.eaglfeat", Label::anomalous});
  manifest.entries.push_back({"img_1", "test_anomalous/img_1.eaglfeat", "", Label::normal});
  save_manifest(manifest, dir / "manifest.json");
  const DatasetManifest loaded = load_manifest(dir / "manifest.json");
  CHECK(loaded.split == Split::test_anomalous);
  REQUIRE(loaded.entries.size() == 2);
  CHECK(loaded.entries[0].mask_path == "test_anomalous/img_0.mask.eaglfeat");
  CHECK(loaded.entries[1].mask_path.empty());
  CHECK(loaded.entries[0].label == Label::anomalous);

  DatasetManifest dup = manifest;
  dup.entries.push_back(dup.entries[0]);
  CHECK_THROWS_AS(dup.validate(), FormatError);

  DatasetManifest bad_train;
  bad_train.split = Split::train_normal;
  bad_train.entries.push_back({"x", "p", "", Label::anomalous});
  CHECK_THROWS_AS(bad_train.validate(), FormatError);
}

TEST_CASE("synthetic generator is deterministic and well-formed") {
  const auto root1 = temp_dir("synth1");
  const auto root2 = temp_dir("synth2");
  SyntheticSpec spec;
  spec.seed = 99;
  spec.n_train = 4;
  spec.n_test_normal = 3;
  spec.n_test_anomalous = 3;
  spec.channels = 6;
  spec.height = 8;
  spec.width = 8;

  const SyntheticDataset d1 = generate_synthetic_dataset(spec, root1);
  const SyntheticDataset d2 = generate_synthetic_dataset(spec, root2);

  CHECK(d1.train.entries.size() == 4);
  CHECK(d1.test_normal.entries.size() == 3);
  CHECK(d1.test_anomalous.entries.size() == 3);
  d1.train.validate();

  // Equal seeds give byte-identical payloads and manifests.
  for (const auto& entry : d1.train.entries)
    CHECK(slurp(root1 / entry.feature_path) == slurp(root2 / entry.feature_path));
  for (const auto& entry : d1.test_anomalous.entries) {
    CHECK(slurp(root1 / entry.feature_path) == slurp(root2 / entry.feature_path));
    REQUIRE(!entry.mask_path.empty());
    CHECK(slurp(root1 / entry.mask_path) == slurp(root2 / entry.mask_path));
  }
  CHECK(slurp(root1 / "train_normal/manifest.json") ==
        slurp(root2 / "train_normal/manifest.json"));

  // Anomalous grids differ from the same-index normal process inside the mask.
  const GroundTruthMask mask = load_mask(root1 / d1.test_anomalous.entries[0].mask_path);
  Index marked = 0;
  for (Index h = 0; h < mask.height; ++h)
    for (Index w = 0; w < mask.width; ++w) marked += mask.at(h, w) ? 1 : 0;
  CHECK(marked > 0);
}

TEST_CASE("zero anomaly shift still labels and masks") {
  const auto root = temp_dir("shift0");
  SyntheticSpec spec;
  spec.seed = 5;
  spec.n_train = 2;
  spec.n_test_normal = 1;
  spec.n_test_anomalous = 2;
  spec.channels = 4;
  spec.height = 6;
  spec.width = 6;
  spec.anomaly_shift = 0.0;

  const SyntheticDataset ds = generate_synthetic_dataset(spec, root);
  for (const auto& entry : ds.test_anomalous.entries) {
    CHECK(entry.label == Label::anomalous);
    CHECK(!entry.mask_path.empty());
    const FeatureGrid grid = load_feature_grid(root / entry.feature_path);
    grid.validate();
  }

  SyntheticSpec bad = spec;
  bad.anomaly_shift = -1.0;
  CHECK_THROWS_AS(generate_synthetic_dataset(bad, root / "bad"), ArgumentError);
}
