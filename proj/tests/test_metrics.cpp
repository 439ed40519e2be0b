#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mfstf/common.hpp"
#include "mfstf/metrics.hpp"

using namespace mfstf;

TEST_CASE("perfect agreement scores ones across the board") {
  ConfusionMatrix cm(3);
  cm.add(1, 1, 10);
  cm.add(2, 2, 20);
  cm.add(3, 3, 5);
  auto m = compute_metrics(cm);
  CHECK(m.oa == doctest::Approx(1.0));
  CHECK(m.aa == doctest::Approx(1.0));
  CHECK(m.kappa == doctest::Approx(1.0));
}

TEST_CASE("the two-class hand case gives kappa 0.4") {
  ConfusionMatrix cm(2);
  cm.add(1, 1, 40);
  cm.add(1, 2, 10);
  cm.add(2, 1, 20);
  cm.add(2, 2, 30);
  auto m = compute_metrics(cm);
  CHECK(std::abs(m.oa - 0.7) <= 1e-12);
  CHECK(std::abs(m.kappa - 0.4) <= 1e-9);
  CHECK(m.per_class[0] == doctest::Approx(0.8));
  CHECK(m.per_class[1] == doctest::Approx(0.6));
}

TEST_CASE("near-uniform confusion drives kappa toward zero") {
  ConfusionMatrix cm(4);
  for (int t = 1; t <= 4; ++t)
    for (int p = 1; p <= 4; ++p) cm.add(t, p, 100000);
  auto m = compute_metrics(cm);
  CHECK(std::abs(m.kappa) <= 1e-9);
  CHECK(m.oa == doctest::Approx(0.25));
}

TEST_CASE("accumulate skips unlabeled pixels and validates predictions") {
  ConfusionMatrix cm(2);
  const std::vector<uint16_t> truth = {0, 1, 2, 0, 1};
  const std::vector<uint16_t> pred = {2, 1, 2, 1, 2};
  cm.accumulate(truth, pred);
  CHECK(cm.total() == 3);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.at(1, 2) == 1);
  CHECK(cm.at(2, 2) == 1);

  const std::vector<uint16_t> bad_pred = {1, 0, 1, 1, 1};
  ConfusionMatrix cm2(2);
  CHECK_THROWS_AS(cm2.accumulate(truth, bad_pred), ContractError);

  ConfusionMatrix cm3(2);
  const std::vector<uint16_t> unlabeled(5, 0);
  cm3.accumulate(unlabeled, pred);
  CHECK(cm3.total() == 0);
  CHECK_THROWS_AS(compute_metrics(cm3), ContractError);
}

TEST_CASE("accumulation over rasters equals the merged matrices") {
  Rng rng(5);
  std::vector<uint16_t> t1(50), p1(50), t2(50), p2(50);
  for (int i = 0; i < 50; ++i) {
    t1[i] = static_cast<uint16_t>(rng.uniform_int(4));  // 0..3, includes unlabeled
    t2[i] = static_cast<uint16_t>(rng.uniform_int(4));
    p1[i] = static_cast<uint16_t>(1 + rng.uniform_int(3));
    p2[i] = static_cast<uint16_t>(1 + rng.uniform_int(3));
  }
  ConfusionMatrix both(3), a(3), b(3);
  both.accumulate(t1, p1);
  both.accumulate(t2, p2);
  a.accumulate(t1, p1);
  b.accumulate(t2, p2);
  a.merge(b);
  for (int t = 1; t <= 3; ++t)
    for (int p = 1; p <= 3; ++p) CHECK(a.at(t, p) == both.at(t, p));

  ConfusionMatrix ba(3);
  ba.accumulate(t2, p2);
  ConfusionMatrix a1(3);
  a1.accumulate(t1, p1);
  ba.merge(a1);  // commutes
  for (int t = 1; t <= 3; ++t)
    for (int p = 1; p <= 3; ++p) CHECK(ba.at(t, p) == both.at(t, p));
}

TEST_CASE("metrics are invariant under simultaneous class permutation") {
  Rng rng(6);
  ConfusionMatrix cm(4);
  for (int t = 1; t <= 4; ++t)
    for (int p = 1; p <= 4; ++p) cm.add(t, p, rng.uniform_int(50));
  cm.add(1, 1, 40);  // keep the total positive and diagonal-heavy
  const int perm[4] = {3, 1, 4, 2};
  ConfusionMatrix pm(4);
  for (int t = 1; t <= 4; ++t)
    for (int p = 1; p <= 4; ++p) pm.add(perm[t - 1], perm[p - 1], cm.at(t, p));
  auto m1 = compute_metrics(cm), m2 = compute_metrics(pm);
  CHECK(m1.oa == doctest::Approx(m2.oa).epsilon(1e-12));
  CHECK(m1.aa == doctest::Approx(m2.aa).epsilon(1e-12));
  CHECK(m1.kappa == doctest::Approx(m2.kappa).epsilon(1e-12));
}

TEST_CASE("kappa never exceeds overall accuracy for plausible matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionMatrix cm(3);
    for (int t = 1; t <= 3; ++t)
      for (int p = 1; p <= 3; ++p) cm.add(t, p, rng.uniform_int(30));
    if (cm.total() == 0) continue;
    auto m = compute_metrics(cm);
    CHECK(m.kappa <= m.oa + 1e-12);
  }
}

TEST_CASE("classes absent from the ground truth stay out of the average accuracy") {
  ConfusionMatrix cm(3);
  cm.add(1, 1, 8);
  cm.add(1, 2, 2);
  cm.add(2, 2, 10);
  auto m = compute_metrics(cm);
  CHECK(std::isnan(m.per_class[2]));
  CHECK(m.aa == doctest::Approx(0.5 * (0.8 + 1.0)));
}

TEST_CASE("render_map writes exact palette colors") {
  const auto path = (std::filesystem::temp_directory_path() / "mfstf_map.ppm").string();
  const std::vector<uint16_t> raster = {0, 1, 2, 1};
  const std::vector<Color> palette = {{0, 0, 0}, {255, 0, 0}, {0, 255, 0}};
  render_map(raster, 2, 2, palette, path);

  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  CHECK(header == "P6");
  std::string dims, maxval;
  std::getline(in, dims);
  std::getline(in, maxval);
  CHECK(dims == "2 2");
  std::vector<uint8_t> px(12);
  in.read(reinterpret_cast<char*>(px.data()), 12);
  CHECK(px[0] == 0);
  CHECK(px[3] == 255);
  CHECK(px[7] == 255);
  CHECK(px[9] == 255);
  std::filesystem::remove(path);

  const std::vector<uint16_t> out_of_palette = {0, 3, 0, 0};
  CHECK_THROWS_AS(render_map(out_of_palette, 2, 2, palette, path), ContractError);
}

TEST_CASE("default palette assigns distinct colors per class") {
  auto palette = default_palette(15);
  CHECK(palette.size() == 16u);
  for (size_t i = 1; i < palette.size(); ++i)
    for (size_t j = i + 1; j < palette.size(); ++j) CHECK(palette[i] != palette[j]);
}
