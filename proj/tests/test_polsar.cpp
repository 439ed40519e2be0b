#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mfstf/polsar.hpp"
#include "mfstf/train.hpp"

using namespace mfstf;

namespace {
std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("coherency_to_vector orders the upper triangle") {
  CoherencyMatrix T = CoherencyMatrix::Zero();
  T(0, 0) = 2.0;
  T(1, 1) = 1.0;
  T(2, 2) = 0.5;
  auto v = coherency_to_vector(T);
  CHECK(v == std::array<double, 9>{2, 1, 0.5, 0, 0, 0, 0, 0, 0});

  T(0, 1) = std::complex<double>(1.0, 2.0);
  T(1, 0) = std::conj(T(0, 1));
  v = coherency_to_vector(T);
  CHECK(v[3] == doctest::Approx(1.0));
  CHECK(v[6] == doctest::Approx(2.0));

  CHECK(coherency_to_vector(CoherencyMatrix::Zero()) ==
        std::array<double, 9>{0, 0, 0, 0, 0, 0, 0, 0, 0});

  CoherencyMatrix bad = CoherencyMatrix::Zero();
  bad(0, 1) = 1.0;  // missing conjugate partner
  CHECK_THROWS_AS(coherency_to_vector(bad), ContractError);
}

TEST_CASE("default signature table carries the band-complementary pairs") {
  auto table = default_signature_table(2, 5);
  CHECK((table[0][2] - table[0][3]).cwiseAbs().maxCoeff() == 0.0);  // classes 3,4 alias in band 1
  CHECK((table[1][0] - table[1][1]).cwiseAbs().maxCoeff() == 0.0);  // classes 1,2 alias in band 2
  CHECK((table[1][2] - table[1][3]).cwiseAbs().maxCoeff() > 1e-3);
  CHECK((table[0][0] - table[0][1]).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("generate_synthetic_scene is deterministic and physically sane") {
  SceneConfig cfg;
  cfg.classes = 3;
  cfg.bands = 2;
  cfg.height = 24;
  cfg.width = 20;
  cfg.seed = 42;
  auto a = generate_synthetic_scene(cfg);
  auto b = generate_synthetic_scene(cfg);
  CHECK(a.labels == b.labels);
  for (int band = 0; band < 2; ++band) CHECK(a.features[band] == b.features[band]);

  // diagonal coherency channels are powers and stay non-negative
  for (int band = 0; band < 2; ++band)
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < cfg.height; ++r)
        for (int c = 0; c < cfg.width; ++c) CHECK(a.feature(band, ch, r, c) >= 0.0f);

  for (auto lab : a.labels) {
    CHECK(lab >= 1);
    CHECK(lab <= 3);
  }
}

TEST_CASE("many looks converge to the base matrix") {
  SceneConfig cfg;
  cfg.classes = 2;
  cfg.bands = 2;
  cfg.height = 3;
  cfg.width = 3;
  cfg.looks = 10000;
  cfg.seed = 5;
  auto cube = generate_synthetic_scene(cfg);
  const auto table = default_signature_table(2, 2);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const int cls = cube.label(r, c) - 1;
      for (int band = 0; band < 2; ++band) {
        const auto base = coherency_to_vector(table[band][cls]);
        const double scale = table[band][cls].real().trace();
        for (int ch = 0; ch < 9; ++ch)
          CHECK(std::abs(cube.feature(band, ch, r, c) - base[ch]) <= 0.02 * scale);
      }
    }
  }
}

TEST_CASE("non-PSD base matrix is rejected") {
  SceneConfig cfg;
  cfg.classes = 2;
  cfg.bands = 2;
  cfg.height = 4;
  cfg.width = 4;
  cfg.signatures = default_signature_table(2, 2);
  cfg.signatures[0][0](0, 0) = -1.0;  // negative power, not PSD
  CHECK_THROWS_AS(generate_synthetic_scene(cfg), ContractError);
}

TEST_CASE("chessboard partition splits 400 tiles into 200 per part") {
  auto split = chessboard_partition(200, 200, 20, 20);
  int black_tiles = 0;
  for (auto p : split.tile_parity)
    if (p == 0) ++black_tiles;
  CHECK(black_tiles == 200);
  CHECK(split.pixels[0].size() + split.pixels[1].size() == 200u * 200u);
  CHECK(split.pixels[0].size() == split.pixels[1].size());
}

TEST_CASE("chessboard 2x2 grid forms the checkerboard pattern") {
  auto split = chessboard_partition(4, 4, 2, 2);
  CHECK(split.part_of(0, 0) == 0);
  CHECK(split.part_of(0, 3) == 1);
  CHECK(split.part_of(3, 0) == 1);
  CHECK(split.part_of(3, 3) == 0);
}

TEST_CASE("chessboard parts are disjoint and exhaustive over random configurations") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int H = 1 + rng.uniform_int(60);
    const int W = 1 + rng.uniform_int(60);
    const int gr = 1 + rng.uniform_int(H);
    const int gc = 1 + rng.uniform_int(W);
    auto split = chessboard_partition(H, W, gr, gc);
    std::set<int64_t> seen;
    for (int part = 0; part < 2; ++part)
      for (int64_t px : split.pixels[part]) CHECK(seen.insert(px).second);
    CHECK(static_cast<int64_t>(seen.size()) == static_cast<int64_t>(H) * W);
  }
  CHECK_THROWS_AS(chessboard_partition(5, 5, 6, 2), ContractError);
}

namespace {
PolSarCube small_scene(uint64_t seed = 7) {
  SceneConfig cfg;
  cfg.classes = 3;
  cfg.bands = 2;
  cfg.height = 40;
  cfg.width = 40;
  cfg.seed = seed;
  return generate_synthetic_scene(cfg);
}
}  // namespace

TEST_CASE("draw_training_samples selects per class inside the requested part") {
  auto cube = small_scene();
  auto split = chessboard_partition(40, 40, 4, 4);
  auto s1 = draw_training_samples(cube, split, 0, 10, 99);
  CHECK(s1.anchors.size() == 30u);
  for (const auto& a : s1.anchors) {
    CHECK(a.label >= 1);
    CHECK(split.part_of(a.row, a.col) == 0);  // never leaks into the other part
  }
  auto s2 = draw_training_samples(cube, split, 0, 10, 99);
  for (size_t i = 0; i < s1.anchors.size(); ++i) {
    CHECK(s1.anchors[i].row == s2.anchors[i].row);
    CHECK(s1.anchors[i].col == s2.anchors[i].col);
  }

  try {
    draw_training_samples(cube, split, 0, 100000, 1);
    FAIL("expected a deficient-class error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
}

TEST_CASE("extract_patch windows and mirror padding") {
  auto cube = small_scene();
  const int n = 5;
  auto patch = extract_patch(cube, 0, 20, 20, n);
  for (int ch = 0; ch < 9; ++ch)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        CHECK(patch[(ch * n + i) * n + j] ==
              cube.feature(0, ch, 20 - n / 2 + i, 20 - n / 2 + j));

  auto corner = extract_patch(cube, 1, 0, 0, 13);
  for (int ch = 0; ch < 9; ++ch)
    CHECK(corner[(ch * 13 + 6) * 13 + 6] == cube.feature(1, ch, 0, 0));
  CHECK(corner.size() == 9u * 13u * 13u);
}

TEST_CASE("patch center equals the raster value for every band") {
  auto cube = small_scene(3);
  Rng rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const int r = rng.uniform_int(40), c = rng.uniform_int(40);
    for (int band = 0; band < 2; ++band) {
      auto p = extract_patch(cube, band, r, c, 13);
      for (int ch = 0; ch < 9; ++ch)
        CHECK(p[(ch * 13 + 6) * 13 + 6] == cube.feature(band, ch, r, c));
    }
  }
}

TEST_CASE("augmentations compose as dihedral group elements") {
  Rng rng(17);
  std::vector<float> p(9 * 7 * 7);
  for (auto& v : p) v = static_cast<float>(rng.normal());
  std::vector<float> a(p.size()), b(p.size());

  augment_patch(p.data(), a.data(), 9, 7, Augment::rot90);
  for (int k = 0; k < 3; ++k) {
    augment_patch(a.data(), b.data(), 9, 7, Augment::rot90);
    std::swap(a, b);
  }
  CHECK(a == p);

  augment_patch(p.data(), a.data(), 9, 7, Augment::hflip);
  augment_patch(a.data(), b.data(), 9, 7, Augment::hflip);
  CHECK(b == p);

  // every mode composed with its inverse is the identity
  const std::pair<Augment, Augment> inverses[] = {
      {Augment::identity, Augment::identity}, {Augment::hflip, Augment::hflip},
      {Augment::vflip, Augment::vflip},       {Augment::rot90, Augment::rot270},
      {Augment::rot180, Augment::rot180},     {Augment::rot270, Augment::rot90}};
  for (auto [m, inv] : inverses) {
    augment_patch(p.data(), a.data(), 9, 7, m);
    augment_patch(a.data(), b.data(), 9, 7, inv);
    CHECK(b == p);
  }
}

TEST_CASE("offline augmentation expands the training set six-fold") {
  auto cube = small_scene();
  auto split = chessboard_partition(40, 40, 4, 4);
  auto samples = draw_training_samples(cube, split, 0, 5, 1, 9);
  const std::vector<int> bands = {1, 2};
  auto store = build_sample_store(cube, samples, bands, true);
  CHECK(store.n_samples == 15 * 6);
  auto plain = build_sample_store(cube, samples, bands, false);
  CHECK(plain.n_samples == 15);
}

TEST_CASE("MFPC cube round trip is lossless") {
  auto cube = small_scene(21);
  const auto path = tmp_path("mfstf_test_cube.mfpc");
  write_cube(cube, path);
  auto back = read_cube(path);
  CHECK(back.bands == cube.bands);
  CHECK(back.height == cube.height);
  CHECK(back.width == cube.width);
  CHECK(back.classes == cube.classes);
  CHECK(back.labels == cube.labels);
  for (int b = 0; b < cube.bands; ++b) CHECK(back.features[b] == cube.features[b]);
  std::filesystem::remove(path);
}

TEST_CASE("MFPC parse errors are descriptive and atomic") {
  const auto path = tmp_path("mfstf_bad_cube.mfpc");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE" << std::string(64, '\0');
  }
  CHECK_THROWS_AS(read_cube(path), ParseError);

  auto cube = small_scene(22);
  write_cube(cube, path);
  // truncate: drop the last band's payload and the labels
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full / 2);
  CHECK_THROWS_AS(read_cube(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("MFLB raster round trip and magic check") {
  std::vector<uint16_t> labels = {0, 1, 2, 3, 1, 0};
  const auto path = tmp_path("mfstf_test.mflb");
  write_label_raster(path, 2, 3, labels);
  int h = 0, w = 0;
  auto back = read_label_raster(path, h, w);
  CHECK(h == 2);
  CHECK(w == 3);
  CHECK(back == labels);
  {
    std::ofstream f(path, std::ios::binary);
    f << "MFPC" << std::string(16, '\0');
  }
  CHECK_THROWS_AS(read_label_raster(path, h, w), ParseError);
  std::filesystem::remove(path);
}
