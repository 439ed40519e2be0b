#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfstf/gradcheck.hpp"
#include "mfstf/topo.hpp"

using namespace mfstf;
using T = Tensor<double>;
using Mat = MatRM<double>;

namespace {

Mat rand_features(Rng& rng, int n, int d) {
  Mat f(n, d);
  for (int i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
  return f;
}

// Plain-loop mean aggregation followed by W and relu; the independent oracle.
Mat brute_force_sage(const BandGraph& g, const Mat& h, const Mat& w) {
  Mat out(g.nodes, w.rows());
  for (int v = 0; v < g.nodes; ++v) {
    Eigen::VectorXd mean = h.row(v);
    for (int u : g.neighbors[static_cast<size_t>(v)]) mean += h.row(u);
    mean /= 1.0 + static_cast<double>(g.neighbors[static_cast<size_t>(v)].size());
    for (int o = 0; o < w.rows(); ++o) {
      double acc = 0.0;
      for (int i = 0; i < w.cols(); ++i) acc += w(o, i) * mean(i);
      out(v, o) = std::max(0.0, acc);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("knn union symmetrization gives the middle of a fan two neighbors") {
  Mat f(3, 2);
  f.row(0) << 1.0, 0.0;
  f.row(1) << std::cos(0.26), std::sin(0.26);
  f.row(2) << std::cos(0.52), std::sin(0.52);
  auto g = build_graph(f, 1);
  CHECK(g.neighbors[1] == std::vector<int>{0, 2});
}

TEST_CASE("identical features tie-break toward the lowest indices") {
  Mat f = Mat::Ones(5, 3);
  auto g = build_graph(f, 2);
  // before symmetrization every node picks the two lowest-index others;
  // nodes 0 and 1 therefore also inherit back edges
  CHECK(g.neighbors[4] == std::vector<int>{0, 1});
  CHECK(g.neighbors[3] == std::vector<int>{0, 1});
  CHECK(g.neighbors[0] == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("adjacency is symmetric with no self loops over random inputs") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const int n = 5 + rng.uniform_int(20);
    const int k = 1 + rng.uniform_int(4);
    auto g = build_graph(rand_features(rng, n, 6), k);
    for (int v = 0; v < n; ++v) {
      for (int u : g.neighbors[static_cast<size_t>(v)]) {
        CHECK(u != v);
        const auto& back = g.neighbors[static_cast<size_t>(u)];
        CHECK(std::find(back.begin(), back.end(), v) != back.end());
      }
    }
  }
}

TEST_CASE("a zero-norm feature vector falls back to lowest-index peers") {
  Rng rng(11);
  Mat f = rand_features(rng, 6, 4);
  f.row(3).setZero();
  auto g = build_graph(f, 2);
  // node 3 contributed edges toward nodes 0 and 1
  const auto& n3 = g.neighbors[3];
  CHECK(std::find(n3.begin(), n3.end(), 0) != n3.end());
  CHECK(std::find(n3.begin(), n3.end(), 1) != n3.end());
  CHECK(build_graph(f, 5).nodes == 6);  // k+1 node bound
  CHECK_THROWS_AS(build_graph(f, 6), ContractError);
}

TEST_CASE("sage_layer averages self plus neighbors before the linear map") {
  BandGraph g;
  g.nodes = 3;
  g.neighbors = {{1, 2}, {0}, {0}};
  auto h = T::from({3, 2}, {1, 0, 3, 0, 5, 0});
  auto W = T::from({2, 2}, {1, 0, 0, 1});
  auto y = sage_layer(g, h, W);
  CHECK(y.values()(0) == doctest::Approx(3.0));  // mean of 1, 3, 5
  CHECK(y.values()(1) == doctest::Approx(0.0));

  auto y0 = sage_layer(g, h, T::zeros({4, 2}));
  CHECK(y0.values().abs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(sage_layer(g, h, T::zeros({4, 3})), ContractError);
}

TEST_CASE("sage_layer matches the brute-force oracle on random graphs") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed * 31 + 7);
    const int n = 3 + rng.uniform_int(18);
    const int k = 1 + rng.uniform_int(std::min(4, n - 1));
    auto g = build_graph(rand_features(rng, n, 5), k);

    const int din = 4, dout = 3;
    Mat h = rand_features(rng, n, din);
    Mat w = rand_features(rng, dout, din);
    ArrayX<double> hv(n * din), wv(dout * din);
    std::copy(h.data(), h.data() + h.size(), hv.data());
    std::copy(w.data(), w.data() + w.size(), wv.data());
    auto y = sage_layer(g, T({n, din}, std::move(hv)), T({dout, din}, std::move(wv)));

    Mat expect = brute_force_sage(g, h, w);
    for (int v = 0; v < n; ++v)
      for (int o = 0; o < dout; ++o)
        CHECK(std::abs(y.values()(v * dout + o) - expect(v, o)) <= 1e-6);
  }
}

TEST_CASE("tpc pipeline widths run 96 -> 64 -> 32 -> C") {
  Rng rng(13);
  TpcParams<double> params;
  params.init(rng, 96, 5);
  CHECK(params.sage1.shape() == std::vector<int>{64, 96});
  CHECK(params.sage2.shape() == std::vector<int>{32, 64});
  CHECK(params.head.weight.shape() == std::vector<int>{5, 32});

  auto g = build_graph(rand_features(rng, 8, 96), 2);
  ArrayX<double> fv(8 * 96);
  for (int i = 0; i < fv.size(); ++i) fv(i) = rng.normal();
  auto z = tpc_forward(g, T({8, 96}, std::move(fv)), params);
  CHECK(z.shape() == std::vector<int>{8, 5});
  for (int v = 0; v < 8; ++v)
    CHECK(std::abs(z.values().segment(v * 5, 5).sum() - 1.0) <= 1e-6);
}

TEST_CASE("an edgeless graph reduces tpc to a per-node perceptron") {
  Rng rng(14);
  TpcParams<double> params;
  params.init(rng, 6, 3);
  BandGraph empty;
  empty.nodes = 4;
  empty.neighbors.assign(4, {});
  ArrayX<double> fv(4 * 6);
  for (int i = 0; i < fv.size(); ++i) fv(i) = rng.normal();
  T feats({4, 6}, fv);
  auto z = tpc_forward(empty, feats, params);
  for (int v = 0; v < 4; ++v) {
    BandGraph one;
    one.nodes = 1;
    one.neighbors.assign(1, {});
    T row({1, 6}, fv.segment(v * 6, 6));
    auto zv = tpc_forward(one, row, params);
    CHECK((z.values().segment(v * 3, 3) - zv.values()).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("two sage layers see exactly the 2-hop neighborhood") {
  // path graph 0 - 1 - 2 - 3 - 4
  BandGraph g;
  g.nodes = 5;
  g.neighbors = {{1}, {0, 2}, {1, 3}, {2, 4}, {3}};
  Rng rng(15);
  TpcParams<double> params;
  params.init(rng, 4, 3);
  Mat base = rand_features(rng, 5, 4);

  auto run = [&](const Mat& f) {
    ArrayX<double> fv(5 * 4);
    std::copy(f.data(), f.data() + f.size(), fv.data());
    return tpc_forward(g, T({5, 4}, std::move(fv)), params);
  };
  auto z0 = run(base);

  Mat two_hop = base;
  two_hop(2, 1) += 0.5;  // node 2 is two hops from node 0
  auto z2 = run(two_hop);
  CHECK((z2.values().segment(0, 3) - z0.values().segment(0, 3)).abs().maxCoeff() > 1e-12);

  Mat three_hop = base;
  three_hop(3, 1) += 0.5;  // node 3 is three hops from node 0
  auto z3 = run(three_hop);
  CHECK((z3.values().segment(0, 3) == z0.values().segment(0, 3)).all());  // bit-identical
}

TEST_CASE("node permutation permutes sage and tpc outputs") {
  Rng rng(16);
  BandGraph g;
  g.nodes = 6;
  g.neighbors = {{1, 2}, {0, 3}, {0, 4, 5}, {1}, {2}, {2}};
  TpcParams<double> params;
  params.init(rng, 4, 3);
  Mat f = rand_features(rng, 6, 4);

  const std::vector<int> perm = {3, 0, 5, 1, 4, 2};  // new index of old node i
  BandGraph pg;
  pg.nodes = 6;
  pg.neighbors.assign(6, {});
  for (int v = 0; v < 6; ++v)
    for (int u : g.neighbors[static_cast<size_t>(v)])
      pg.neighbors[static_cast<size_t>(perm[static_cast<size_t>(v)])].push_back(
          perm[static_cast<size_t>(u)]);
  for (auto& nb : pg.neighbors) std::sort(nb.begin(), nb.end());
  Mat pf(6, 4);
  for (int v = 0; v < 6; ++v) pf.row(perm[static_cast<size_t>(v)]) = f.row(v);

  auto to_tensor = [](const Mat& m) {
    ArrayX<double> v(m.size());
    std::copy(m.data(), m.data() + m.size(), v.data());
    return T({static_cast<int>(m.rows()), static_cast<int>(m.cols())}, std::move(v));
  };
  auto z = tpc_forward(g, to_tensor(f), params);
  auto zp = tpc_forward(pg, to_tensor(pf), params);
  for (int v = 0; v < 6; ++v)
    CHECK((z.values().segment(v * 3, 3) -
           zp.values().segment(perm[static_cast<size_t>(v)] * 3, 3))
              .abs()
              .maxCoeff() <= 1e-12);
}

TEST_CASE("gradients through both layers and the head match finite differences") {
  Rng rng(17);
  auto g = build_graph(rand_features(rng, 7, 5), 2);
  TpcParams<double> params;
  params.init(rng, 5, 3);
  ArrayX<double> fv(7 * 5);
  for (int i = 0; i < fv.size(); ++i) fv(i) = rng.normal();
  T feats({7, 5}, std::move(fv), true);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0};

  std::vector<T> inputs = {feats, params.sage1, params.sage2, params.head.weight,
                           params.head.bias};
  auto f = [&](std::span<const T> in) {
    return cross_entropy(tpc_forward(g, in[0], params), labels);
  };
  CHECK(max_fd_rel_error(f, inputs) <= 1e-4);
}

TEST_CASE("induced subgraph keeps only in-batch edges with local indices") {
  BandGraph g;
  g.nodes = 6;
  g.neighbors = {{1, 2}, {0, 3}, {0, 4, 5}, {1}, {2}, {2}};
  const std::vector<int> ids = {2, 0, 5};
  auto sub = induced_subgraph(g, ids);
  CHECK(sub.nodes == 3);
  CHECK(sub.neighbors[0] == std::vector<int>{1, 2});  // node 2: kept 0 and 5
  CHECK(sub.neighbors[1] == std::vector<int>{0});     // node 0: kept 2
  CHECK(sub.neighbors[2] == std::vector<int>{0});     // node 5: kept 2
}
