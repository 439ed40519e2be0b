#pragma once

// Central finite-difference verification of every differentiable operation
// and of a tiny end-to-end pipeline, at 64-bit precision. The numeric side
// only ever calls forward passes, so it is independent of the backward
// implementations it validates.

#include <functional>
#include <string>
#include <vector>

#include "mfstf/train.hpp"

namespace mfstf {

using GradLossFn = std::function<Tensor<double>(std::span<const Tensor<double>>)>;

/// Worst per-element error |analytic - numeric| / max(1, |analytic|, |numeric|)
/// across all requires-grad inputs. A positive max_per_tensor caps how many
/// elements of each tensor are probed (seeded choice); 0 probes all.
inline double max_fd_rel_error(const GradLossFn& f, std::vector<Tensor<double>>& inputs,
                               double h = 1e-5, int max_per_tensor = 0,
                               uint64_t subsample_seed = 0) {
  for (auto& t : inputs) t.zero_grad();
  Tensor<double> loss = f(inputs);
  check(loss.size() == 1, "max_fd_rel_error: loss must be scalar");
  backward(loss);

  Rng pick(subsample_seed);
  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<int64_t> idx(static_cast<size_t>(t.size()));
    for (int64_t i = 0; i < t.size(); ++i) idx[static_cast<size_t>(i)] = i;
    if (max_per_tensor > 0 && t.size() > max_per_tensor) {
      for (int i = 0; i < max_per_tensor; ++i) {
        const int j = i + pick.uniform_int(static_cast<int>(idx.size()) - i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      }
      idx.resize(static_cast<size_t>(max_per_tensor));
    }
    for (int64_t i : idx) {
      const double orig = t.values()(i);
      double fp, fm;
      {
        NoGradGuard ng;
        t.values()(i) = orig + h;
        fp = f(inputs).item();
        t.values()(i) = orig - h;
        fm = f(inputs).item();
      }
      t.values()(i) = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = t.has_grad() ? t.grad()(i) : 0.0;
      const double err = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

struct OpCheck {
  std::string op;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<OpCheck> ops;
  double tolerance = 1e-4;

  bool pass() const {
    for (const auto& o : ops)
      if (!(o.max_rel_err <= tolerance)) return false;
    return true;
  }
  const OpCheck& worst() const {
    size_t w = 0;
    for (size_t i = 1; i < ops.size(); ++i)
      if (ops[i].max_rel_err > ops[w].max_rel_err) w = i;
    return ops[w];
  }
};

namespace detail {

inline Tensor<double> rand_tensor(Rng& rng, std::vector<int> shape, double lo, double hi,
                                  bool requires_grad = true) {
  ArrayX<double> v(shape_numel(shape));
  for (int64_t i = 0; i < v.size(); ++i) v(i) = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

/// Fixed random projection of an output tensor to a scalar, so every output
/// element influences the loss.
inline Tensor<double> project(const Tensor<double>& t, Rng& rng) {
  ArrayX<double> w(t.size());
  for (int64_t i = 0; i < w.size(); ++i) w(i) = rng.uniform(-1.0, 1.0);
  return sum(elementwise_mul(t, Tensor<double>(t.shape(), std::move(w))));
}

}  // namespace detail

inline GradCheckReport run_gradient_checks(uint64_t seed) {
  using T = Tensor<double>;
  using detail::rand_tensor;
  GradCheckReport report;
  Rng rng(seed);

  auto run = [&report](const std::string& name, const GradLossFn& f,
                       std::vector<Tensor<double>> inputs, int cap = 0, uint64_t sub_seed = 1) {
    report.ops.push_back({name, max_fd_rel_error(f, inputs, 1e-5, cap, sub_seed)});
  };

  {  // relu, inputs biased away from the kink at 0
    T x = rand_tensor(rng, {3, 5}, 0.05, 1.0);
    for (int64_t i = 0; i < x.size(); ++i)
      if (rng.uniform() < 0.5) x.values()(i) = -x.values()(i);
    T w = rand_tensor(rng, {3, 5}, -1.0, 1.0, false);
    run("relu", [w](std::span<const T> in) { return sum(elementwise_mul(relu(in[0]), w)); }, {x});
  }
  {
    T a = rand_tensor(rng, {2, 3, 4}, -1.0, 1.0), b = rand_tensor(rng, {2, 3, 4}, -1.0, 1.0);
    T w = rand_tensor(rng, {2, 3, 4}, -1.0, 1.0, false);
    run("elementwise_mul",
        [w](std::span<const T> in) { return sum(elementwise_mul(elementwise_mul(in[0], in[1]), w)); },
        {a, b});
  }
  {  // maximum with a clear gap so the finite difference cannot flip the max
    T a = rand_tensor(rng, {3, 4}, -1.0, 1.0), b = rand_tensor(rng, {3, 4}, -1.0, 1.0);
    for (int64_t i = 0; i < a.size(); ++i)
      if (std::abs(a.values()(i) - b.values()(i)) < 0.05) a.values()(i) += 0.1;
    T w = rand_tensor(rng, {3, 4}, -1.0, 1.0, false);
    run("maximum", [w](std::span<const T> in) { return sum(elementwise_mul(maximum(in[0], in[1]), w)); },
        {a, b});
  }
  {
    T a = rand_tensor(rng, {2, 3, 3}, -1.0, 1.0), b = rand_tensor(rng, {1, 3, 3}, -1.0, 1.0),
      c = rand_tensor(rng, {4, 3, 3}, -1.0, 1.0);
    T w = rand_tensor(rng, {7, 3, 3}, -1.0, 1.0, false);
    run("concat_channels",
        [w](std::span<const T> in) {
          return sum(elementwise_mul(concat_channels({in[0], in[1], in[2]}), w));
        },
        {a, b, c});
  }
  {
    T x = rand_tensor(rng, {2, 3, 4, 5}, -1.0, 1.0);
    T w = rand_tensor(rng, {2, 3}, -1.0, 1.0, false);
    run("global_avg_pool",
        [w](std::span<const T> in) { return sum(elementwise_mul(global_avg_pool(in[0]), w)); }, {x});
  }
  {
    T x = rand_tensor(rng, {3, 6}, -1.0, 1.0), W = rand_tensor(rng, {4, 6}, -1.0, 1.0),
      b = rand_tensor(rng, {4}, -0.5, 0.5);
    T w = rand_tensor(rng, {3, 4}, -1.0, 1.0, false);
    run("linear",
        [w](std::span<const T> in) { return sum(elementwise_mul(linear(in[0], in[1], in[2]), w)); },
        {x, W, b});
  }
  {
    T x = rand_tensor(rng, {3, 6}, -1.0, 1.0), W = rand_tensor(rng, {4, 6}, -1.0, 1.0);
    T w = rand_tensor(rng, {3, 4}, -1.0, 1.0, false);
    run("matmul", [w](std::span<const T> in) { return sum(elementwise_mul(matmul(in[0], in[1]), w)); },
        {x, W});
  }
  {
    T z = rand_tensor(rng, {3, 5}, -2.0, 2.0);
    T w = rand_tensor(rng, {3, 5}, -1.0, 1.0, false);
    run("softmax", [w](std::span<const T> in) { return sum(elementwise_mul(softmax(in[0]), w)); }, {z});
  }
  {
    T z = rand_tensor(rng, {4, 6}, -2.0, 2.0);
    std::vector<int> labels = {2, 0, 5, 3};
    run("cross_entropy_softmax",
        [labels](std::span<const T> in) { return cross_entropy(softmax(in[0]), labels); }, {z});
  }
  {
    T p = rand_tensor(rng, {6}, 0.1, 1.0);
    run("cross_entropy_direct", [](std::span<const T> in) { return cross_entropy(in[0], 2); }, {p});
  }
  {
    T x = rand_tensor(rng, {7}, 0.5, 1.5);
    run("l2_norm", [](std::span<const T> in) { return l2_norm(in[0]); }, {x});
  }
  {
    T x = rand_tensor(rng, {2, 3, 5, 5}, -1.0, 1.0), k = rand_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5),
      b = rand_tensor(rng, {4}, -0.5, 0.5);
    T w = rand_tensor(rng, {2, 4, 5, 5}, -1.0, 1.0, false);
    run("conv2d",
        [w](std::span<const T> in) { return sum(elementwise_mul(conv2d(in[0], in[1], in[2]), w)); },
        {x, k, b});
  }
  {
    T x = rand_tensor(rng, {2, 2, 4, 4}, -1.0, 1.0), k = rand_tensor(rng, {3, 2, 1, 1}, -0.5, 0.5),
      b = rand_tensor(rng, {3}, -0.5, 0.5);
    T w = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0, false);
    run("conv2d_1x1",
        [w](std::span<const T> in) { return sum(elementwise_mul(conv2d(in[0], in[1], in[2]), w)); },
        {x, k, b});
  }
  {
    T x = rand_tensor(rng, {3, 2, 3, 3}, -1.0, 1.0), g = rand_tensor(rng, {2}, 0.5, 1.5),
      b = rand_tensor(rng, {2}, -0.5, 0.5);
    T w = rand_tensor(rng, {3, 2, 3, 3}, -1.0, 1.0, false);
    auto stats = std::make_shared<BnStats<double>>(2);
    run("batchnorm2d_train",
        [w, stats](std::span<const T> in) {
          return sum(elementwise_mul(
              batchnorm2d(in[0], in[1], in[2], *stats, Mode::train), w));
        },
        {x, g, b});
  }
  {
    T x = rand_tensor(rng, {3, 2, 3, 3}, -1.0, 1.0), g = rand_tensor(rng, {2}, 0.5, 1.5),
      b = rand_tensor(rng, {2}, -0.5, 0.5);
    T w = rand_tensor(rng, {3, 2, 3, 3}, -1.0, 1.0, false);
    auto stats = std::make_shared<BnStats<double>>(2);
    {
      NoGradGuard ng;
      T prime = rand_tensor(rng, {4, 2, 3, 3}, -1.0, 1.0, false);
      batchnorm2d(prime, g.detach(), b.detach(), *stats, Mode::train);
    }
    run("batchnorm2d_eval",
        [w, stats](std::span<const T> in) {
          return sum(elementwise_mul(batchnorm2d(in[0], in[1], in[2], *stats, Mode::eval), w));
        },
        {x, g, b});
  }
  {
    T a = rand_tensor(rng, {2, 3, 2, 2}, -1.0, 1.0), b = rand_tensor(rng, {2, 3, 2, 2}, -1.0, 1.0);
    T w = rand_tensor(rng, {2, 9, 2, 2}, -1.0, 1.0, false);
    run("cifem_correlate",
        [w](std::span<const T> in) { return sum(elementwise_mul(cifem_correlate(in[0], in[1]), w)); },
        {a, b});
  }
  {  // graph mean aggregation and a two-layer stack on a fixed small graph
    MatRM<double> gf(6, 3);
    Rng grng(seed ^ 0xABCD);
    for (int i = 0; i < gf.size(); ++i) gf.data()[i] = grng.uniform(-1.0, 1.0);
    const BandGraph graph = build_graph(gf, 2);
    T x = rand_tensor(rng, {6, 5}, -1.0, 1.0);
    T w = rand_tensor(rng, {6, 5}, -1.0, 1.0, false);
    run("graph_mean",
        [w, graph](std::span<const T> in) { return sum(elementwise_mul(graph_mean(in[0], graph), w)); },
        {x});
    T W1 = rand_tensor(rng, {4, 5}, -0.7, 0.7), W2 = rand_tensor(rng, {3, 4}, -0.7, 0.7);
    T w2 = rand_tensor(rng, {6, 3}, -1.0, 1.0, false);
    run("sage_layer",
        [w2, graph](std::span<const T> in) {
          return sum(elementwise_mul(sage_layer(graph, sage_layer(graph, in[0], in[1]), in[2]), w2));
        },
        {x, W1, W2});
  }
  {  // fused losses over two bands
    T za = rand_tensor(rng, {4, 3}, -1.5, 1.5), zb = rand_tensor(rng, {4, 3}, -1.5, 1.5),
      ta = rand_tensor(rng, {4, 3}, -1.5, 1.5), tb = rand_tensor(rng, {4, 3}, -1.5, 1.5);
    AwfState st = AwfState::uniform(2, 3.0);
    st.alpha = {0.7, 0.3};
    std::vector<int> labels = {0, 2, 1, 1};
    run("compute_losses",
        [st, labels](std::span<const T> in) {
          std::vector<T> zs = {softmax(in[0]), softmax(in[1])};
          std::vector<T> zt = {softmax(in[2]), softmax(in[3])};
          return compute_losses(std::span<const T>(zs), std::span<const T>(zt), labels, st, 0.1,
                                4)
              .total;
        },
        {za, zb, ta, tb});
  }
  {  // tiny end-to-end pipeline: every semantic parameter plus sampled
     // topological weights and input patches
    TrainConfig tiny;
    tiny.bsfe_width = 4;
    tiny.patch = 5;
    tiny.gamma = 3.0;
    tiny.k_neighbors = 2;
    Model<double> model;
    model.n_classes = 3;
    model.m = 4;
    model.patch = 5;
    model.bands = {1, 2};
    model.init(seed ^ 0x5EED, tiny.gamma);
    model.awf.alpha = {0.6, 0.4};

    const int B = 8;
    T pa = rand_tensor(rng, {B, 9, 5, 5}, -1.0, 1.0);
    T pb = rand_tensor(rng, {B, 9, 5, 5}, -1.0, 1.0);
    std::vector<int> labels;
    for (int i = 0; i < B; ++i) labels.push_back(rng.uniform_int(3));

    std::vector<BandGraph> graphs;
    {
      NoGradGuard ng;
      std::vector<T> patches = {pa.detach(), pb.detach()};
      auto fw = model_forward(model, std::span<const T>(patches), Mode::batch_stats);
      for (int k = 0; k < 2; ++k) {
        MatRM<double> feats(B, model.concat_width());
        for (int i = 0; i < B; ++i)
          feats.row(i) = Eigen::Map<const Eigen::Matrix<double, 1, Eigen::Dynamic>>(
              fw.pooled[static_cast<size_t>(k)].values().data() +
                  static_cast<int64_t>(i) * model.concat_width(),
              model.concat_width());
        graphs.push_back(build_graph(feats, tiny.k_neighbors));
      }
    }

    std::vector<T> inputs;
    std::vector<std::string> names;
    for (auto& [name, t] : model.named_tensors()) {
      names.push_back(name);
      inputs.push_back(*t);
    }
    inputs.push_back(pa);
    inputs.push_back(pb);

    auto f = [&model, &graphs, labels](std::span<const T> in) {
      std::vector<T> patches = {in[in.size() - 2], in[in.size() - 1]};
      auto fw = model_forward(model, std::span<const T>(patches), Mode::batch_stats, &graphs);
      return batch_objective(model, fw, labels, 0.1).total;
    };
    run("pipeline", f, inputs, 384, seed ^ 0xFD);
  }

  return report;
}

}  // namespace mfstf
