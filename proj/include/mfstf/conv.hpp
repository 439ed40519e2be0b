#pragma once

// 2-D convolution (cross-correlation, zero-padded "same") and batch
// normalization. Convolution is lowered to GEMM via im2col, streamed in
// sample strips so the column matrix stays cache-resident; the backward pass
// rebuilds each strip instead of keeping it alive on the tape.

#include <Eigen/Core>

#include <cstring>
#include <vector>

#include "mfstf/tensor.hpp"

namespace mfstf {

namespace detail {

// Columns for samples [b0, b1): col(r, n) with r = (c*k + di)*k + dj and
// n = ((b - b0)*H + i)*W + j holds x(b, c, i+di-p, j+dj-p), zero outside.
template <typename S>
void im2col(const ArrayX<S>& x, int B, int C, int H, int W, int k, int b0, int b1,
            MatRM<S>& col) {
  (void)B;
  const int p = k / 2;
  const int64_t N = static_cast<int64_t>(b1 - b0) * H * W;
  col.resize(static_cast<int64_t>(C) * k * k, N);
  for (int c = 0; c < C; ++c) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        S* dst_row = col.data() + (static_cast<int64_t>(c) * k * k + di * k + dj) * N;
        const int shift = dj - p;
        const int j0 = std::max(0, -shift);
        const int j1 = std::min(W, W - shift);
        for (int b = b0; b < b1; ++b) {
          for (int i = 0; i < H; ++i) {
            S* dst = dst_row + (static_cast<int64_t>(b - b0) * H + i) * W;
            const int si = i + di - p;
            if (si < 0 || si >= H) {
              std::memset(dst, 0, sizeof(S) * static_cast<size_t>(W));
              continue;
            }
            const S* src = x.data() + ((static_cast<int64_t>(b) * C + c) * H + si) * W;
            for (int j = 0; j < j0; ++j) dst[j] = S(0);
            if (j1 > j0)
              std::memcpy(dst + j0, src + j0 + shift, sizeof(S) * static_cast<size_t>(j1 - j0));
            for (int j = j1; j < W; ++j) dst[j] = S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const MatRM<S>& dcol, ArrayX<S>& dx, int C, int H, int W, int k, int b0, int b1) {
  const int p = k / 2;
  const int64_t N = static_cast<int64_t>(b1 - b0) * H * W;
  for (int c = 0; c < C; ++c) {
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        const S* src_row = dcol.data() + (static_cast<int64_t>(c) * k * k + di * k + dj) * N;
        const int shift = dj - p;
        const int j0 = std::max(0, -shift);
        const int j1 = std::min(W, W - shift);
        for (int b = b0; b < b1; ++b) {
          for (int i = 0; i < H; ++i) {
            const int si = i + di - p;
            if (si < 0 || si >= H) continue;
            const S* src = src_row + (static_cast<int64_t>(b - b0) * H + i) * W;
            S* dst = dx.data() + ((static_cast<int64_t>(b) * C + c) * H + si) * W;
            for (int j = j0; j < j1; ++j) dst[j + shift] += src[j];
          }
        }
      }
    }
  }
}

// Strip width that keeps roughly 4k spatial columns in flight.
inline int conv_strip_samples(int64_t hw) {
  return static_cast<int>(std::max<int64_t>(1, 4096 / std::max<int64_t>(1, hw)));
}

}  // namespace detail

/// Zero-padded same-size cross-correlation.
/// input [Cin,H,W] or [B,Cin,H,W], kernel [Cout,Cin,k,k] (k odd), bias [Cout].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias) {
  check(kernel.rank() == 4, "conv2d: kernel must be [Cout,Cin,k,k]");
  const int cout = kernel.dim(0), cin = kernel.dim(1), k = kernel.dim(2);
  check(kernel.dim(3) == k, "conv2d: kernel must be square");
  check(k % 2 == 1, "conv2d: kernel size must be odd for same padding");
  check(bias.rank() == 1 && bias.dim(0) == cout, "conv2d: bias length must equal Cout");
  check(x.rank() == 3 || x.rank() == 4, "conv2d: input must be [C,H,W] or [B,C,H,W]");
  const bool batched = x.rank() == 4;
  const int B = batched ? x.dim(0) : 1;
  const int C = batched ? x.dim(1) : x.dim(0);
  const int H = batched ? x.dim(2) : x.dim(1);
  const int W = batched ? x.dim(3) : x.dim(2);
  check(C == cin, "conv2d: input has " + std::to_string(C) + " channels but kernel expects " +
                      std::to_string(cin));

  const int64_t hw = static_cast<int64_t>(H) * W;
  const int64_t R = static_cast<int64_t>(cin) * k * k;
  const int strip = detail::conv_strip_samples(hw);
  Eigen::Map<const MatRM<S>> Km(kernel.values().data(), cout, R);

  ArrayX<S> v(static_cast<int64_t>(B) * cout * hw);
  MatRM<S> col, om;
  for (int b0 = 0; b0 < B; b0 += strip) {
    const int b1 = std::min(B, b0 + strip);
    detail::im2col(x.values(), B, C, H, W, k, b0, b1, col);
    om.noalias() = Km * col;
    for (int b = b0; b < b1; ++b)
      for (int co = 0; co < cout; ++co)
        Eigen::Map<ArrayX<S>>(v.data() + (static_cast<int64_t>(b) * cout + co) * hw, hw) =
            Eigen::Map<const ArrayX<S>>(
                om.data() + co * (static_cast<int64_t>(b1 - b0) * hw) +
                    static_cast<int64_t>(b - b0) * hw,
                hw) +
            bias.values()(co);
  }

  std::vector<int> oshape =
      batched ? std::vector<int>{B, cout, H, W} : std::vector<int>{cout, H, W};
  Tensor<S> out(std::move(oshape), std::move(v));

  // Backward rebuilds the column strips from the saved input values.
  attach_backward(out, {x, kernel, bias},
                  [xn = x.node().get(), kn = kernel.node().get(), bn = bias.node().get(),
                   on = out.node().get(), B, C, H, W, k, cout, strip] {
                    const int64_t hw = static_cast<int64_t>(H) * W;
                    const int64_t R = static_cast<int64_t>(C) * k * k;
                    Eigen::Map<const MatRM<S>> Km(kn->value.data(), cout, R);
                    MatRM<S> col, gm, dcol;
                    for (int b0 = 0; b0 < B; b0 += strip) {
                      const int b1 = std::min(B, b0 + strip);
                      const int64_t N = static_cast<int64_t>(b1 - b0) * hw;
                      gm.resize(cout, N);
                      for (int b = b0; b < b1; ++b)
                        for (int co = 0; co < cout; ++co)
                          Eigen::Map<ArrayX<S>>(gm.data() + co * N +
                                                    static_cast<int64_t>(b - b0) * hw,
                                                hw) =
                              Eigen::Map<const ArrayX<S>>(
                                  on->grad.data() + (static_cast<int64_t>(b) * cout + co) * hw,
                                  hw);
                      if (bn->requires_grad)
                        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(bn->ensure_grad().data(),
                                                                        cout)
                            .noalias() += gm.rowwise().sum();
                      if (kn->requires_grad) {
                        detail::im2col(xn->value, B, C, H, W, k, b0, b1, col);
                        Eigen::Map<MatRM<S>>(kn->ensure_grad().data(), cout, R).noalias() +=
                            gm * col.transpose();
                      }
                      if (xn->requires_grad) {
                        dcol.noalias() = Km.transpose() * gm;
                        detail::col2im_add(dcol, xn->ensure_grad(), C, H, W, k, b0, b1);
                      }
                    }
                  });
  return out;
}

template <typename S>
struct BnStats {
  ArrayX<S> running_mean, running_var;
  bool initialized = false;

  BnStats() = default;
  explicit BnStats(int channels)
      : running_mean(ArrayX<S>::Zero(channels)), running_var(ArrayX<S>::Ones(channels)) {}
};

/// Batch normalization over [B,C,H,W] (rank 3 treated as B=1).
/// Train mode normalizes by per-channel batch statistics and updates the
/// running stats by EMA; eval mode normalizes by the running stats;
/// batch_stats mode uses batch statistics without touching the running ones.
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      BnStats<S>& stats, Mode mode, S momentum = S(0.1), S eps = S(1e-5)) {
  check(x.rank() == 3 || x.rank() == 4, "batchnorm2d: input must be [C,H,W] or [B,C,H,W]");
  const bool batched = x.rank() == 4;
  const int B = batched ? x.dim(0) : 1;
  const int C = batched ? x.dim(1) : x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(batched ? 2 : 1)) * x.dim(batched ? 3 : 2);
  check(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
        "batchnorm2d: gamma/beta must have one entry per channel");
  check(stats.running_mean.size() == C, "batchnorm2d: running stats sized for wrong channel count");
  const int64_t n = static_cast<int64_t>(B) * hw;

  ArrayX<S> mean(C), invstd(C);
  if (mode == Mode::train || mode == Mode::batch_stats) {
    check(n >= 2, "batchnorm2d: train mode needs at least 2 values per channel");
    for (int c = 0; c < C; ++c) {
      double s = 0.0, ss = 0.0;
      for (int b = 0; b < B; ++b) {
        auto seg = x.values().segment((static_cast<int64_t>(b) * C + c) * hw, hw);
        s += seg.template cast<double>().sum();
        ss += seg.template cast<double>().square().sum();
      }
      const double mu = s / static_cast<double>(n);
      const double var = std::max(0.0, ss / static_cast<double>(n) - mu * mu);
      mean(c) = static_cast<S>(mu);
      invstd(c) = static_cast<S>(1.0 / std::sqrt(var + double(eps)));
      if (mode == Mode::train) {
        if (!stats.initialized) {
          stats.running_mean(c) = static_cast<S>(mu);
          stats.running_var(c) = static_cast<S>(var);
        } else {
          stats.running_mean(c) = (S(1) - momentum) * stats.running_mean(c) + momentum * S(mu);
          stats.running_var(c) = (S(1) - momentum) * stats.running_var(c) + momentum * S(var);
        }
      }
    }
    if (mode == Mode::train) stats.initialized = true;
  } else {
    check(stats.initialized,
          "batchnorm2d: eval mode before any train step (uninitialized running stats)");
    mean = stats.running_mean;
    invstd = (stats.running_var + eps).sqrt().inverse();
  }

  ArrayX<S> xhat(x.size());
  ArrayX<S> v(x.size());
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
      xhat.segment(off, hw) = (x.values().segment(off, hw) - mean(c)) * invstd(c);
      v.segment(off, hw) = gamma.values()(c) * xhat.segment(off, hw) + beta.values()(c);
    }
  }
  Tensor<S> out(x.shape(), std::move(v));

  if (grad_enabled() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    attach_backward(
        out, {x, gamma, beta},
        [xhat = std::move(xhat), invstd = std::move(invstd), xn = x.node().get(),
         gn = gamma.node().get(), bn = beta.node().get(), on = out.node().get(), B, C, hw, n,
         mode] {
          for (int c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int b = 0; b < B; ++b) {
              const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
              auto dy = on->grad.segment(off, hw);
              sum_dy += dy.template cast<double>().sum();
              sum_dy_xhat += (dy * xhat.segment(off, hw)).template cast<double>().sum();
            }
            if (gn->requires_grad) gn->ensure_grad()(c) += static_cast<S>(sum_dy_xhat);
            if (bn->requires_grad) bn->ensure_grad()(c) += static_cast<S>(sum_dy);
            if (xn->requires_grad) {
              auto& gx = xn->ensure_grad();
              const S g = gn->value(c);
              if (mode != Mode::eval) {
                const S k1 = g * invstd(c) / static_cast<S>(n);
                for (int b = 0; b < B; ++b) {
                  const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
                  gx.segment(off, hw) +=
                      k1 * (static_cast<S>(n) * on->grad.segment(off, hw) -
                            static_cast<S>(sum_dy) -
                            xhat.segment(off, hw) * static_cast<S>(sum_dy_xhat));
                }
              } else {
                const S k1 = g * invstd(c);
                for (int b = 0; b < B; ++b) {
                  const int64_t off = (static_cast<int64_t>(b) * C + c) * hw;
                  gx.segment(off, hw) += k1 * on->grad.segment(off, hw);
                }
              }
            }
          }
        });
  }
  return out;
}

}  // namespace mfstf
