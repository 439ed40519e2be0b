#pragma once

// Semantic branch: per-band convolutional feature extraction (BSFE), the
// cross-band interactive feature extraction module (CIFEM) with its shared
// 1x1 projection, and the pooled SIC classification head.

#include <array>
#include <span>
#include <vector>

#include "mfstf/conv.hpp"
#include "mfstf/tensor.hpp"

namespace mfstf {

/// conv -> BN -> ReLU with same-size zero padding.
template <typename S>
struct ConvBlock {
  Tensor<S> weight, bias, gamma, beta;
  BnStats<S> stats;

  void init(Rng& rng, int cin, int cout, int k) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(cin) * k * k));
    ArrayX<S> w(static_cast<int64_t>(cout) * cin * k * k);
    for (int64_t i = 0; i < w.size(); ++i) w(i) = static_cast<S>(rng.uniform(-limit, limit));
    weight = Tensor<S>({cout, cin, k, k}, std::move(w), true);
    bias = Tensor<S>::zeros({cout}, true);
    gamma = Tensor<S>::constant({cout}, S(1), true);
    beta = Tensor<S>::zeros({cout}, true);
    stats = BnStats<S>(cout);
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode) {
    return relu(batchnorm2d(conv2d(x, weight, bias), gamma, beta, stats, mode));
  }
};

/// Three cascaded conv blocks per band; parameters are never shared across
/// bands. Channel progression 9 -> c1 -> c2 -> m.
template <typename S>
struct BsfeParams {
  std::array<ConvBlock<S>, 3> blocks;

  void init(Rng& rng, int in_channels, const std::array<int, 3>& channels) {
    blocks[0].init(rng, in_channels, channels[0], 3);
    blocks[1].init(rng, channels[0], channels[1], 3);
    blocks[2].init(rng, channels[1], channels[2], 3);
  }
};

/// Output channel counts per BSFE block for a given final width m.
/// m = 64 gives the canonical (16, 32, 64).
inline std::array<int, 3> bsfe_channels(int m) {
  check(m >= 1, "bsfe_channels: m must be positive");
  return {std::max(1, m / 4), std::max(1, m / 2), m};
}

template <typename S>
Tensor<S> bsfe_forward(const Tensor<S>& patch, BsfeParams<S>& params, Mode mode) {
  return params.blocks[2].forward(params.blocks[1].forward(params.blocks[0].forward(patch, mode), mode),
                                  mode);
}

template <typename S>
Tensor<S> bsfe_forward(const Tensor<S>& patch, int band, std::vector<BsfeParams<S>>& params,
                       Mode mode) {
  check(band >= 0 && band < static_cast<int>(params.size()),
        "bsfe_forward: band index " + std::to_string(band) + " out of range");
  return bsfe_forward(patch, params[static_cast<size_t>(band)], mode);
}

/// Shared 1x1 projection block applied to every ordered band pair's
/// correlative maps. One parameter set regardless of the band count.
template <typename S>
struct CifemParams {
  ConvBlock<S> proj;
  int out_channels = 32;

  void init(Rng& rng, int m, int out = 32) {
    out_channels = out;
    proj.init(rng, m * m, out, 1);
  }
};

/// Traversing multiplication of two m-channel maps: output channel i*m + j is
/// the elementwise product of a's channel i with b's channel j (row-major in
/// (i, j)).
template <typename S>
Tensor<S> cifem_correlate(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.rank() == 3 || a.rank() == 4, "cifem_correlate: inputs must be [m,H,W] or [B,m,H,W]");
  check(a.shape() == b.shape(), "cifem_correlate: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  const bool batched = a.rank() == 4;
  const int B = batched ? a.dim(0) : 1;
  const int m = batched ? a.dim(1) : a.dim(0);
  const int64_t hw = static_cast<int64_t>(a.dim(batched ? 2 : 1)) * a.dim(batched ? 3 : 2);

  ArrayX<S> v(static_cast<int64_t>(B) * m * m * hw);
  for (int bi = 0; bi < B; ++bi) {
    const int64_t abase = static_cast<int64_t>(bi) * m * hw;
    const int64_t obase = static_cast<int64_t>(bi) * m * m * hw;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        v.segment(obase + (static_cast<int64_t>(i) * m + j) * hw, hw) =
            a.values().segment(abase + i * hw, hw) * b.values().segment(abase + j * hw, hw);
  }
  std::vector<int> oshape = batched ? std::vector<int>{B, m * m, a.dim(2), a.dim(3)}
                                    : std::vector<int>{m * m, a.dim(1), a.dim(2)};
  Tensor<S> out(std::move(oshape), std::move(v));
  attach_backward(out, {a, b},
                  [an = a.node().get(), bn = b.node().get(), on = out.node().get(), B, m, hw] {
                    for (int bi = 0; bi < B; ++bi) {
                      const int64_t abase = static_cast<int64_t>(bi) * m * hw;
                      const int64_t obase = static_cast<int64_t>(bi) * m * m * hw;
                      for (int i = 0; i < m; ++i) {
                        for (int j = 0; j < m; ++j) {
                          auto g = on->grad.segment(obase + (static_cast<int64_t>(i) * m + j) * hw,
                                                    hw);
                          if (an->requires_grad)
                            an->ensure_grad().segment(abase + i * hw, hw) +=
                                g * bn->value.segment(abase + j * hw, hw);
                          if (bn->requires_grad)
                            bn->ensure_grad().segment(abase + j * hw, hw) +=
                                g * an->value.segment(abase + i * hw, hw);
                        }
                      }
                    }
                  });
  return out;
}

/// Interactive features for band k: for every other band in ascending index
/// order, correlate, project through the shared block, and concatenate.
/// Result has 32*(K-1) channels.
template <typename S>
Tensor<S> cifem_forward(std::span<const Tensor<S>> bsfe_outputs, int band, CifemParams<S>& params,
                        Mode mode) {
  const int K = static_cast<int>(bsfe_outputs.size());
  check(K >= 2, "cifem_forward: undefined for a single band (K must be >= 2)");
  check(band >= 0 && band < K, "cifem_forward: band index out of range");
  std::vector<Tensor<S>> projected;
  projected.reserve(static_cast<size_t>(K) - 1);
  for (int other = 0; other < K; ++other) {
    if (other == band) continue;
    projected.push_back(params.proj.forward(
        cifem_correlate(bsfe_outputs[static_cast<size_t>(band)],
                        bsfe_outputs[static_cast<size_t>(other)]),
        mode));
  }
  if (projected.size() == 1) return projected[0];
  return concat_channels(std::span<const Tensor<S>>(projected));
}

template <typename S>
struct LinearHead {
  Tensor<S> weight, bias;  // [out, in], [out]

  void init(Rng& rng, int in, int out) {
    const double limit = std::sqrt(6.0 / in);
    ArrayX<S> w(static_cast<int64_t>(out) * in);
    for (int64_t i = 0; i < w.size(); ++i) w(i) = static_cast<S>(rng.uniform(-limit, limit));
    weight = Tensor<S>({out, in}, std::move(w), true);
    bias = Tensor<S>::zeros({out}, true);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return linear(x, weight, bias); }
};

/// SIC head: softmax(FC(GAP(concatenated features))).
template <typename S>
Tensor<S> sic_forward(const Tensor<S>& x_con, const LinearHead<S>& head) {
  return softmax(head.forward(global_avg_pool(x_con)));
}

}  // namespace mfstf
