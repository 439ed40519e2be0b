#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "mfstf/fusion.hpp"
#include "mfstf/train.hpp"

using namespace mfstf;
using T = Tensor<double>;

namespace {

// Simplex grid search for min over alpha of sum_k alpha_k^gamma * L_k,
// independent of the closed form. Two bands: flat grid; three bands: a coarse
// pass refined around its own minimum down to the requested step.
std::vector<double> grid_search_alpha(const std::vector<double>& losses, double gamma,
                                      double step = 1e-4) {
  const auto objective = [&](const std::vector<double>& a) {
    double v = 0.0;
    for (size_t k = 0; k < a.size(); ++k) v += std::pow(a[k], gamma) * losses[k];
    return v;
  };
  if (losses.size() == 2) {
    std::vector<double> best = {0.0, 1.0};
    double best_v = objective(best);
    const int n = static_cast<int>(std::lround(1.0 / step));
    for (int i = 0; i <= n; ++i) {
      const std::vector<double> a = {i * step, 1.0 - i * step};
      const double v = objective(a);
      if (v < best_v) {
        best_v = v;
        best = a;
      }
    }
    return best;
  }
  // three bands: coarse-to-fine
  std::vector<double> best = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  double best_v = objective(best);
  double lo1 = 0.0, hi1 = 1.0, lo2 = 0.0, hi2 = 1.0, cur = 1.0 / 200;
  for (int stage = 0; stage < 3; ++stage) {
    for (double a1 = lo1; a1 <= hi1 + 1e-12; a1 += cur) {
      for (double a2 = lo2; a2 <= std::min(hi2, 1.0 - a1) + 1e-12; a2 += cur) {
        const std::vector<double> a = {a1, a2, 1.0 - a1 - a2};
        if (a[2] < -1e-12) continue;
        const double v = objective({a[0], a[1], std::max(0.0, a[2])});
        if (v < best_v) {
          best_v = v;
          best = {a[0], a[1], std::max(0.0, a[2])};
        }
      }
    }
    lo1 = std::max(0.0, best[0] - 2 * cur);
    hi1 = std::min(1.0, best[0] + 2 * cur);
    lo2 = std::max(0.0, best[1] - 2 * cur);
    hi2 = std::min(1.0, best[1] + 2 * cur);
    cur = std::max(step, cur / 20);
  }
  return best;
}

PolSarCube toy_scene(uint64_t seed = 7) {
  SceneConfig cfg;
  cfg.classes = 3;
  cfg.bands = 2;
  cfg.height = 48;
  cfg.width = 48;
  cfg.seed = seed;
  return generate_synthetic_scene(cfg);
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.per_class_count = 12;
  cfg.batch_size = 48;
  cfg.bsfe_width = 4;
  cfg.patch = 9;
  cfg.k_neighbors = 4;
  cfg.grid_rows = 4;
  cfg.grid_cols = 4;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("awf_fuse applies the powered weights") {
  auto z1 = T::from({2}, {0.2, 0.8});
  auto z2 = T::from({2}, {0.6, 0.4});
  std::vector<T> z = {z1, z2};

  AwfState st = AwfState::uniform(2, 2.0);
  auto y = awf_fuse(std::span<const T>(z), st);
  CHECK(y.values()(0) == doctest::Approx(0.25 * 0.8));
  CHECK(y.values()(1) == doctest::Approx(0.25 * 1.2));

  st.alpha = {1.0, 0.0};
  auto y2 = awf_fuse(std::span<const T>(z), st);
  CHECK((y2.values() == z1.values()).all());

  AwfState one = AwfState::uniform(1, 7.5);
  std::vector<T> zk = {z1};
  CHECK((awf_fuse(std::span<const T>(zk), one).values() == z1.values()).all());

  std::vector<T> bad = {z1, T::zeros({3})};
  CHECK_THROWS_AS(awf_fuse(std::span<const T>(bad), st), ContractError);
}

TEST_CASE("update_alpha closed form") {
  auto even = update_alpha(std::vector<double>{1.0, 1.0}, 5.0);
  CHECK(even[0] == doctest::Approx(0.5).epsilon(1e-12));

  auto worked = update_alpha(std::vector<double>{1.0, 4.0}, 3.0);
  CHECK(std::abs(worked[0] - 2.0 / 3.0) <= 1e-9);
  CHECK(std::abs(worked[1] - 1.0 / 3.0) <= 1e-9);

  auto a = update_alpha(std::vector<double>{0.3, 1.7, 0.9}, 2.5);
  auto b = update_alpha(std::vector<double>{0.3 * 7.1, 1.7 * 7.1, 0.9 * 7.1}, 2.5);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-12);

  CHECK_THROWS_AS(update_alpha(std::vector<double>{1.0, std::nan("")}, 2.0), ContractError);
  CHECK_THROWS_AS(update_alpha(std::vector<double>{1.0, 2.0}, 1.0), ContractError);
}

TEST_CASE("update_alpha and the grid-search oracle agree") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const int K = trial % 2 == 0 ? 2 : 3;
    const double gamma = 2.0 + rng.uniform_int(3);
    std::vector<double> losses;
    for (int k = 0; k < K; ++k) losses.push_back(rng.uniform(0.05, 5.0));
    auto closed = update_alpha(losses, gamma);
    auto oracle = grid_search_alpha(losses, gamma);
    for (int k = 0; k < K; ++k) CHECK(std::abs(closed[k] - oracle[k]) <= 1e-3);
  }
}

TEST_CASE("update_alpha preserves the simplex and the loss ordering") {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const int K = 2 + rng.uniform_int(4);
    const double gamma = 1.0 + rng.uniform(0.2, 6.0);
    std::vector<double> losses;
    for (int k = 0; k < K; ++k) losses.push_back(rng.uniform(1e-3, 10.0));
    auto alpha = update_alpha(losses, gamma);
    double s = 0.0;
    for (double v : alpha) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        if (losses[i] < losses[j]) CHECK(alpha[i] > alpha[j]);
  }
}

TEST_CASE("compute_losses components and special cases") {
  std::vector<int> label = {1};
  AwfState st = AwfState::uniform(1, 2.0);

  SUBCASE("identical fused outputs have zero consistency loss") {
    auto z = T::from({1, 3}, {0.2, 0.5, 0.3});
    std::vector<T> zs = {z}, zt = {z};
    auto out = compute_losses(std::span<const T>(zs), std::span<const T>(zt), label, st, 0.5, 1);
    CHECK(out.report.l_consistency == doctest::Approx(0.0));
  }
  SUBCASE("a 3-4-5 difference vector at N=1 scores one half") {
    std::vector<T> zs = {T::from({1, 3}, {0.5, 0.2, 0.3})};
    std::vector<T> zt = {T::from({1, 3}, {0.2, 0.6, 0.3})};
    auto out = compute_losses(std::span<const T>(zs), std::span<const T>(zt), label, st, 1.0, 1);
    CHECK(out.report.l_consistency == doctest::Approx(0.5));
  }
  SUBCASE("lambda zero removes the consistency term exactly") {
    std::vector<T> zs = {T::from({1, 3}, {0.5, 0.2, 0.3})};
    std::vector<T> zt = {T::from({1, 3}, {0.2, 0.6, 0.3})};
    auto out = compute_losses(std::span<const T>(zs), std::span<const T>(zt), label, st, 0.0, 1);
    CHECK(out.report.l_total == out.report.l_sic + out.report.l_tpc);
  }
  SUBCASE("total equals the sum of reported components") {
    Rng rng(33);
    AwfState st2 = AwfState::uniform(2, 3.0);
    st2.alpha = {0.8, 0.2};
    for (int trial = 0; trial < 20; ++trial) {
      auto mk = [&rng] {
        ArrayX<double> v(4 * 3);
        for (int i = 0; i < 12; ++i) v(i) = rng.uniform(0.05, 1.0);
        return softmax(T({4, 3}, std::move(v)));
      };
      std::vector<T> zs = {mk(), mk()}, zt = {mk(), mk()};
      std::vector<int> labels = {0, 1, 2, 1};
      auto out =
          compute_losses(std::span<const T>(zs), std::span<const T>(zt), labels, st2, 0.1, 4);
      CHECK(std::abs(out.report.l_total -
                     (out.report.l_sic + out.report.l_tpc + 0.1 * out.report.l_consistency)) <=
            1e-9);
      CHECK(out.report.l_sic >= 0.0);
      CHECK(out.report.l_tpc >= 0.0);
      CHECK(out.report.l_consistency >= 0.0);
    }
  }
  SUBCASE("missing TPC outputs violate the contract") {
    std::vector<T> zs = {T::from({1, 3}, {0.5, 0.2, 0.3})};
    std::vector<T> zt;
    CHECK_THROWS_AS(
        compute_losses(std::span<const T>(zs), std::span<const T>(zt), label, st, 0.1, 1),
        ContractError);
  }
}

TEST_CASE("baseline fusions") {
  auto z1 = T::from({2}, {0.2, 0.8});
  auto z2 = T::from({2}, {0.6, 0.4});
  std::vector<T> z = {z1, z2};

  auto mx = baseline_fuse(std::span<const T>(z), FusionMode::max);
  CHECK(mx.values()(0) == doctest::Approx(0.6));
  CHECK(mx.values()(1) == doctest::Approx(0.8));

  std::vector<T> with_ones = {z1, T::constant({2}, 1.0)};
  auto prod = baseline_fuse(std::span<const T>(with_ones), FusionMode::product);
  CHECK((prod.values() == z1.values()).all());

  auto eq = baseline_fuse(std::span<const T>(z), FusionMode::equal);
  CHECK(eq.values()(0) == doctest::Approx(0.4));
  CHECK(eq.values()(1) == doctest::Approx(0.6));

  CHECK_THROWS_AS(baseline_fuse(std::span<const T>(z), FusionMode::awf), ContractError);
  CHECK_THROWS_AS(fusion_mode_from_string("bogus"), ParseError);
}

TEST_CASE("positive rescaling never changes the fused argmax") {
  Rng rng(34);
  AwfState st = AwfState::uniform(3, 3.0);
  st.alpha = {0.5, 0.3, 0.2};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<T> z, zs;
    const double c = rng.uniform(0.01, 50.0);
    for (int k = 0; k < 3; ++k) {
      ArrayX<double> v(5);
      for (int i = 0; i < 5; ++i) v(i) = rng.uniform(0.0, 1.0);
      z.push_back(T({5}, v));
      zs.push_back(T({5}, (v * c).eval()));
    }
    auto pick = [](const T& y) {
      int best = 0;
      for (int i = 1; i < 5; ++i)
        if (y.values()(i) > y.values()(best)) best = i;
      return best;
    };
    CHECK(pick(awf_fuse(std::span<const T>(z), st)) ==
          pick(awf_fuse(std::span<const T>(zs), st)));
  }
}

TEST_CASE("training descends, logs simplex weights and is reproducible") {
  auto cube = toy_scene();
  auto split = chessboard_partition(cube.height, cube.width, 4, 4);
  auto cfg = toy_config();

  std::ostringstream log;
  auto r1 = train_model<double>(cube, split, 0, cfg, &log);
  CHECK(r1.history.size() == 4u);
  CHECK(r1.history.back().l_total < r1.history.front().l_total);
  for (const auto& e : r1.history) {
    double s = 0.0;
    for (double a : e.alpha) {
      CHECK(a >= 0.0);
      s += a;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
  CHECK(log.str().find("epoch=1 ") != std::string::npos);

  auto r2 = train_model<double>(cube, split, 0, cfg);
  for (size_t e = 0; e < r1.history.size(); ++e) {
    CHECK(r1.history[e].l_total == r2.history[e].l_total);  // bit-identical
    CHECK(r1.history[e].alpha == r2.history[e].alpha);
  }
}

TEST_CASE("ablation and baseline configurations train") {
  auto cube = toy_scene(9);
  auto split = chessboard_partition(cube.height, cube.width, 4, 4);
  auto cfg = toy_config();
  cfg.epochs = 2;

  SUBCASE("no cross-band interaction") {
    cfg.cifem = false;
    auto r = train_model<float>(cube, split, 0, cfg);
    CHECK(r.model.concat_width() == cfg.bsfe_width);
  }
  SUBCASE("no topological branch") {
    cfg.tpc = false;
    auto r = train_model<float>(cube, split, 0, cfg);
    CHECK(r.history.back().l_tpc == 0.0);
    CHECK(r.history.back().l_consistency == 0.0);
  }
  SUBCASE("single band") {
    cfg.bands = {2};
    cfg.cifem = false;
    auto r = train_model<float>(cube, split, 0, cfg);
    CHECK(r.model.band_count() == 1);
    CHECK(r.model.awf.alpha.size() == 1u);
  }
  SUBCASE("concat fusion") {
    cfg.fusion = FusionMode::concat;
    auto r = train_model<float>(cube, split, 0, cfg);
    CHECK(r.model.concat_head.weight.shape() == std::vector<int>{3, 6});
  }
  SUBCASE("max fusion") {
    cfg.fusion = FusionMode::max;
    CHECK_NOTHROW(train_model<float>(cube, split, 0, cfg));
  }
}

TEST_CASE("an absurd learning rate raises a divergence error") {
  auto cube = toy_scene(10);
  auto split = chessboard_partition(cube.height, cube.width, 4, 4);
  auto cfg = toy_config();
  cfg.learning_rate = 1e18;
  cfg.epochs = 8;
  CHECK_THROWS_AS((train_model<float>(cube, split, 0, cfg)), DivergenceError);
}

TEST_CASE("prediction routes each part through the other model") {
  auto cube = toy_scene(11);
  auto split = chessboard_partition(cube.height, cube.width, 4, 4);
  auto cfg = toy_config();
  cfg.epochs = 2;
  auto black = train_model<float>(cube, split, 0, cfg);
  auto white = train_model<float>(cube, split, 1, cfg);

  auto raster = predict_image(cube, black.model, white.model, split);
  for (auto v : raster) {
    CHECK(v >= 1);
    CHECK(v <= 3);
  }

  std::vector<uint16_t> solo(raster.size(), 0);
  predict_pixels(cube, white.model, std::span<const int64_t>(split.pixels[0]), solo);
  for (int64_t px : split.pixels[0])
    CHECK(solo[static_cast<size_t>(px)] == raster[static_cast<size_t>(px)]);
  predict_pixels(cube, black.model, std::span<const int64_t>(split.pixels[1]), solo);
  for (int64_t px : split.pixels[1])
    CHECK(solo[static_cast<size_t>(px)] == raster[static_cast<size_t>(px)]);
}

TEST_CASE("degenerate weights reduce prediction to the first band's head") {
  auto cube = toy_scene(12);
  auto split = chessboard_partition(cube.height, cube.width, 4, 4);
  auto cfg = toy_config();
  cfg.epochs = 2;
  auto result = train_model<float>(cube, split, 0, cfg);
  result.model.awf.alpha = {1.0, 0.0};

  std::vector<int64_t> pixels;
  for (int64_t i = 0; i < 40; ++i) pixels.push_back(i * 7 % (48 * 48));
  std::vector<uint16_t> fused_pred(48 * 48, 0);
  predict_pixels(cube, result.model, pixels, fused_pred);

  // band-1 argmax by hand
  NoGradGuard ng;
  for (int64_t px : pixels) {
    std::vector<Tensor<float>> patches;
    for (int k = 0; k < 2; ++k) {
      auto buf = extract_patch(cube, k, static_cast<int>(px / 48), static_cast<int>(px % 48),
                               cfg.patch);
      ArrayX<float> v(static_cast<int64_t>(buf.size()));
      for (size_t i = 0; i < buf.size(); ++i) v(static_cast<int64_t>(i)) = buf[i];
      patches.push_back(Tensor<float>({1, 9, cfg.patch, cfg.patch}, std::move(v)));
    }
    auto fw = model_forward(result.model, std::span<const Tensor<float>>(patches), Mode::eval);
    const auto& z = fw.z_sic[0].values();
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (z(c) > z(best)) best = c;
    CHECK(fused_pred[static_cast<size_t>(px)] == best + 1);
  }
}

TEST_CASE("fuse_outputs honors the configured mode at prediction time") {
  Rng rng(40);
  Model<double> model;
  model.n_classes = 4;
  model.m = 4;
  model.patch = 5;
  model.bands = {1, 2};
  model.fusion = FusionMode::concat;
  model.init(77, 2.0);
  std::vector<T> z = {softmax(T::from({1, 4}, {1, 0, 0, 0})),
                      softmax(T::from({1, 4}, {0, 1, 0, 0}))};
  auto fused = fuse_outputs(model, std::span<const T>(z));
  CHECK(fused.shape() == std::vector<int>{1, 4});
}
