#pragma once

// Adaptive weighting fusion across bands: simplex-constrained weights raised
// to a power gamma > 1, the three-term training objective, the closed-form
// weight update, and the classical fusion baselines.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mfstf/semantic.hpp"
#include "mfstf/tensor.hpp"

namespace mfstf {

enum class FusionMode { awf, equal, concat, max, product, sum };

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "awf") return FusionMode::awf;
  if (s == "equal") return FusionMode::equal;
  if (s == "concat") return FusionMode::concat;
  if (s == "max") return FusionMode::max;
  if (s == "product") return FusionMode::product;
  if (s == "sum") return FusionMode::sum;
  throw ParseError("unknown fusion mode '" + s +
                   "' (expected awf|equal|concat|max|product|sum)");
}

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::awf: return "awf";
    case FusionMode::equal: return "equal";
    case FusionMode::concat: return "concat";
    case FusionMode::max: return "max";
    case FusionMode::product: return "product";
    case FusionMode::sum: return "sum";
  }
  return "?";
}

inline constexpr double kLossFloor = 1e-12;

/// Band weight vector on the simplex plus the power exponent.
struct AwfState {
  std::vector<double> alpha;
  double gamma = 3.0;

  static AwfState uniform(int bands, double gamma) {
    check(bands >= 1, "AwfState: need at least one band");
    check(gamma > 1.0, "AwfState: gamma must be > 1");
    AwfState st;
    st.gamma = gamma;
    st.alpha.assign(static_cast<size_t>(bands), 1.0 / bands);
    return st;
  }

  void validate() const {
    double s = 0.0;
    for (double a : alpha) {
      check(std::isfinite(a) && a >= 0.0, "AwfState: weight out of range");
      s += a;
    }
    check(std::abs(s - 1.0) <= 1e-9, "AwfState: weights do not sum to 1");
  }
};

/// Closed-form minimizer of sum_k alpha_k^gamma * L_k over the simplex:
/// alpha_k proportional to L_k^(1/(1-gamma)). Smaller loss, larger weight.
inline std::vector<double> update_alpha(std::span<const double> losses, double gamma) {
  check(gamma > 1.0, "update_alpha: gamma must be > 1");
  check(!losses.empty(), "update_alpha: no losses");
  const double expo = 1.0 / (1.0 - gamma);
  std::vector<double> alpha(losses.size());
  double denom = 0.0;
  for (size_t k = 0; k < losses.size(); ++k) {
    check(std::isfinite(losses[k]), "update_alpha: non-finite loss");
    alpha[k] = std::pow(std::max(losses[k], kLossFloor), expo);
    denom += alpha[k];
  }
  for (double& a : alpha) a /= denom;
  return alpha;
}

/// Y = sum_k alpha_k^gamma * Z_k.
template <typename S>
Tensor<S> awf_fuse(std::span<const Tensor<S>> z, const AwfState& st) {
  check(!z.empty(), "awf_fuse: no band outputs");
  check(z.size() == st.alpha.size(), "awf_fuse: band count does not match weight count");
  Tensor<S> out = scale(z[0], static_cast<S>(std::pow(st.alpha[0], st.gamma)));
  for (size_t k = 1; k < z.size(); ++k) {
    check_same_shape(z[k], z[0], "awf_fuse");
    out = add(out, scale(z[k], static_cast<S>(std::pow(st.alpha[k], st.gamma))));
  }
  return out;
}

/// Classical fusion baselines over per-band outputs: elementwise max, product
/// or sum, and the equal-weight mean. Concatenation fusion lives with its FC
/// head, see concat_fuse.
template <typename S>
Tensor<S> baseline_fuse(std::span<const Tensor<S>> z, FusionMode mode) {
  check(!z.empty(), "baseline_fuse: no band outputs");
  for (const auto& t : z) check_same_shape(t, z[0], "baseline_fuse");
  switch (mode) {
    case FusionMode::max: {
      Tensor<S> out = z[0];
      for (size_t k = 1; k < z.size(); ++k) out = maximum(out, z[k]);
      return out;
    }
    case FusionMode::product: {
      Tensor<S> out = z[0];
      for (size_t k = 1; k < z.size(); ++k) out = elementwise_mul(out, z[k]);
      return out;
    }
    case FusionMode::sum: {
      Tensor<S> out = z[0];
      for (size_t k = 1; k < z.size(); ++k) out = add(out, z[k]);
      return out;
    }
    case FusionMode::equal: {
      Tensor<S> out = z[0];
      for (size_t k = 1; k < z.size(); ++k) out = add(out, z[k]);
      return scale(out, S(1) / static_cast<S>(z.size()));
    }
    default:
      throw ContractError("baseline_fuse: mode " + to_string(mode) +
                          " is not an elementwise baseline");
  }
}

/// Concatenation fusion: per-band outputs side by side through a dedicated FC
/// to C logits. The same head serves both classifier branches.
template <typename S>
Tensor<S> concat_fuse(std::span<const Tensor<S>> z, const LinearHead<S>& head) {
  check(!z.empty(), "concat_fuse: no band outputs");
  return head.forward(concat_channels(z));
}

struct LossReport {
  std::vector<double> sic_band;  // unweighted per-band cross-entropy means
  std::vector<double> tpc_band;
  double l_sic = 0.0;
  double l_tpc = 0.0;
  double l_consistency = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
};

template <typename S>
struct LossBundle {
  Tensor<S> total;  // differentiable
  LossReport report;
};

/// Three-term objective: weighted per-band cross-entropies for both branches
/// plus lambda times the consistency distance between the fused outputs.
/// The fusion weights are constants for back-propagation purposes.
template <typename S>
LossBundle<S> compute_losses(std::span<const Tensor<S>> z_sic, std::span<const Tensor<S>> z_tpc,
                             std::span<const int> labels, const AwfState& st, double lambda,
                             int n_samples) {
  const size_t K = z_sic.size();
  check(K >= 1, "compute_losses: no band outputs");
  check(z_tpc.size() == K, "compute_losses: need both SIC and TPC outputs for every band");
  for (size_t k = 0; k < K; ++k)
    check(z_sic[k].defined() && z_tpc[k].defined(),
          "compute_losses: need both SIC and TPC outputs for every band");
  check(lambda >= 0.0, "compute_losses: lambda must be >= 0");
  check(n_samples >= 1, "compute_losses: empty batch");

  LossBundle<S> out;
  out.report.lambda = lambda;
  Tensor<S> l_sic, l_tpc;
  for (size_t k = 0; k < K; ++k) {
    const S w = static_cast<S>(std::pow(st.alpha[k], st.gamma));
    Tensor<S> ce_sic = cross_entropy(z_sic[k], labels);
    Tensor<S> ce_tpc = cross_entropy(z_tpc[k], labels);
    out.report.sic_band.push_back(double(ce_sic.item()));
    out.report.tpc_band.push_back(double(ce_tpc.item()));
    l_sic = k == 0 ? scale(ce_sic, w) : add(l_sic, scale(ce_sic, w));
    l_tpc = k == 0 ? scale(ce_tpc, w) : add(l_tpc, scale(ce_tpc, w));
  }
  Tensor<S> y_sic = awf_fuse(z_sic, st);
  Tensor<S> y_tpc = awf_fuse(z_tpc, st);
  Tensor<S> cons = scale(l2_norm(sub(y_sic, y_tpc)), S(1) / static_cast<S>(n_samples));
  out.total = add(add(l_sic, l_tpc), scale(cons, static_cast<S>(lambda)));

  out.report.l_sic = double(l_sic.item());
  out.report.l_tpc = double(l_tpc.item());
  out.report.l_consistency = double(cons.item());
  out.report.l_total = out.report.l_sic + out.report.l_tpc + lambda * out.report.l_consistency;
  return out;
}

}  // namespace mfstf
