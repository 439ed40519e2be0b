#pragma once

// Topological branch: k-nearest-neighbor graph over training samples under
// cosine similarity, two GraphSAGE layers with mean aggregation, and the
// per-band TPC head.

#include <Eigen/Core>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <vector>

#include "mfstf/semantic.hpp"
#include "mfstf/tensor.hpp"

namespace mfstf {

/// Node adjacency over training samples. Neighbor lists are sorted, carry no
/// self-loops, and are symmetric (u in N(v) iff v in N(u)).
struct BandGraph {
  int nodes = 0;
  std::vector<std::vector<int>> neighbors;
};

/// k-NN graph under cosine similarity, symmetrized by union. Ties break
/// toward the lower node index. A zero-norm feature vector cannot be ranked
/// by cosine; such a node connects to its k lowest-index peers (warned).
template <typename S>
BandGraph build_graph(const MatRM<S>& features, int k_neighbors) {
  const int n = static_cast<int>(features.rows());
  check(k_neighbors >= 1, "build_graph: k_neighbors must be >= 1");
  check(n >= k_neighbors + 1,
        "build_graph: need at least k_neighbors + 1 nodes, got " + std::to_string(n));

  MatRM<S> unit = features;
  std::vector<char> degenerate(static_cast<size_t>(n), 0);
  int n_degenerate = 0;
  for (int v = 0; v < n; ++v) {
    const S norm = unit.row(v).norm();
    if (norm > S(0)) {
      unit.row(v) /= norm;
    } else {
      degenerate[static_cast<size_t>(v)] = 1;
      ++n_degenerate;
    }
  }
  if (n_degenerate > 0)
    std::fprintf(stderr,
                 "warning: build_graph: %d zero-norm feature vector(s); "
                 "connecting to lowest-index peers\n",
                 n_degenerate);

  BandGraph g;
  g.nodes = n;
  g.neighbors.assign(static_cast<size_t>(n), {});

  // Block the similarity GEMM to bound the score buffer.
  const int block = 1024;
  std::vector<int> cand(static_cast<size_t>(n));
  MatRM<S> sims;
  for (int v0 = 0; v0 < n; v0 += block) {
    const int rows = std::min(block, n - v0);
    sims.noalias() = unit.middleRows(v0, rows) * unit.transpose();
    for (int dv = 0; dv < rows; ++dv) {
      const int v = v0 + dv;
      auto& nbrs = g.neighbors[static_cast<size_t>(v)];
      if (degenerate[static_cast<size_t>(v)]) {
        for (int u = 0; u < n && static_cast<int>(nbrs.size()) < k_neighbors; ++u)
          if (u != v) nbrs.push_back(u);
        continue;
      }
      int n_cand = 0;
      for (int u = 0; u < n; ++u)
        if (u != v) cand[static_cast<size_t>(n_cand++)] = u;
      const S* row = sims.data() + static_cast<int64_t>(dv) * n;
      auto better = [row](int a, int b) {
        if (row[a] != row[b]) return row[a] > row[b];
        return a < b;
      };
      std::nth_element(cand.begin(), cand.begin() + (k_neighbors - 1), cand.begin() + n_cand,
                       better);
      nbrs.assign(cand.begin(), cand.begin() + k_neighbors);
    }
  }

  // Symmetrize by union.
  for (int v = 0; v < n; ++v)
    for (int u : g.neighbors[static_cast<size_t>(v)])
      g.neighbors[static_cast<size_t>(u)].push_back(v);
  for (auto& nbrs : g.neighbors) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  return g;
}

/// Mean over each node's own feature together with its neighbors' features.
/// An isolated node reduces to its own feature.
template <typename S>
Tensor<S> graph_mean(const Tensor<S>& features, const BandGraph& graph) {
  check(features.rank() == 2, "graph_mean: features must be [nodes x width]");
  const int n = features.dim(0), d = features.dim(1);
  check(n == graph.nodes, "graph_mean: feature rows do not match graph nodes");

  ArrayX<S> v(static_cast<int64_t>(n) * d);
  for (int node = 0; node < n; ++node) {
    auto acc = v.segment(static_cast<int64_t>(node) * d, d);
    acc = features.values().segment(static_cast<int64_t>(node) * d, d);
    for (int u : graph.neighbors[static_cast<size_t>(node)])
      acc += features.values().segment(static_cast<int64_t>(u) * d, d);
    acc /= static_cast<S>(1 + graph.neighbors[static_cast<size_t>(node)].size());
  }
  Tensor<S> out({n, d}, std::move(v));
  if (grad_enabled() && features.requires_grad()) {
    // The closure owns a copy of the adjacency so the graph object need not
    // outlive the backward pass.
    attach_backward(out, {features},
                    [fn = features.node().get(), on = out.node().get(),
                     neighbors = graph.neighbors, n, d] {
                      auto& g = fn->ensure_grad();
                      for (int node = 0; node < n; ++node) {
                        const S inv =
                            S(1) / static_cast<S>(1 + neighbors[static_cast<size_t>(node)].size());
                        auto gout = on->grad.segment(static_cast<int64_t>(node) * d, d);
                        g.segment(static_cast<int64_t>(node) * d, d) += inv * gout;
                        for (int u : neighbors[static_cast<size_t>(node)])
                          g.segment(static_cast<int64_t>(u) * d, d) += inv * gout;
                      }
                    });
  }
  return out;
}

/// One GraphSAGE layer: relu(W * mean({self} u neighbors)). No bias.
template <typename S>
Tensor<S> sage_layer(const BandGraph& graph, const Tensor<S>& features, const Tensor<S>& W) {
  check(W.rank() == 2, "sage_layer: weight must be rank 2");
  check(features.rank() == 2 && features.dim(1) == W.dim(1),
        "sage_layer: feature width " + std::to_string(features.dim(1)) +
            " does not match weight input dimension " + std::to_string(W.dim(1)));
  return relu(matmul(graph_mean(features, graph), W));
}

/// GraphSAGE weights (hidden widths 64 then 32) and the TPC head.
template <typename S>
struct TpcParams {
  Tensor<S> sage1, sage2;  // [64, in], [32, 64]
  LinearHead<S> head;      // [C, 32]

  void init(Rng& rng, int in_width, int n_classes, int hidden1 = 64, int hidden2 = 32) {
    auto he = [&rng](int out, int in) {
      const double limit = std::sqrt(6.0 / in);
      ArrayX<S> w(static_cast<int64_t>(out) * in);
      for (int64_t i = 0; i < w.size(); ++i) w(i) = static_cast<S>(rng.uniform(-limit, limit));
      return Tensor<S>({out, in}, std::move(w), true);
    };
    sage1 = he(hidden1, in_width);
    sage2 = he(hidden2, hidden1);
    head.init(rng, hidden2, n_classes);
  }
};

/// Per-node class probabilities from two stacked GraphSAGE layers and the FC
/// head; each node's receptive field covers its 2-hop neighborhood.
template <typename S>
Tensor<S> tpc_forward(const BandGraph& graph, const Tensor<S>& node_features,
                      TpcParams<S>& params) {
  auto h1 = sage_layer(graph, node_features, params.sage1);
  auto h2 = sage_layer(graph, h1, params.sage2);
  return softmax(params.head.forward(h2));
}

/// Induced subgraph over the given (global) node ids; local index order
/// follows the id list.
inline BandGraph induced_subgraph(const BandGraph& graph, std::span<const int> node_ids) {
  BandGraph sub;
  sub.nodes = static_cast<int>(node_ids.size());
  sub.neighbors.assign(node_ids.size(), {});
  std::vector<int> local(static_cast<size_t>(graph.nodes), -1);
  for (int i = 0; i < sub.nodes; ++i) local[static_cast<size_t>(node_ids[static_cast<size_t>(i)])] = i;
  for (int i = 0; i < sub.nodes; ++i) {
    for (int u : graph.neighbors[static_cast<size_t>(node_ids[static_cast<size_t>(i)])]) {
      const int lu = local[static_cast<size_t>(u)];
      if (lu >= 0) sub.neighbors[static_cast<size_t>(i)].push_back(lu);
    }
    std::sort(sub.neighbors[static_cast<size_t>(i)].begin(),
              sub.neighbors[static_cast<size_t>(i)].end());
  }
  return sub;
}

}  // namespace mfstf
