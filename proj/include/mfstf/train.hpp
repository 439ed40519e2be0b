#pragma once

// Full model assembly, the training loop (per-band encoders, cross-band
// interaction, both classifier branches, adaptive fusion, closed-form weight
// updates) and stitched full-image prediction over the chessboard parts.

#include <cstdio>
#include <ostream>
#include <span>
#include <vector>

#include "mfstf/adam.hpp"
#include "mfstf/fusion.hpp"
#include "mfstf/polsar.hpp"
#include "mfstf/semantic.hpp"
#include "mfstf/topo.hpp"

namespace mfstf {

struct TrainConfig {
  int epochs = 150;
  double learning_rate = 1e-3;
  int batch_size = 100;
  double lambda = 0.1;
  double gamma = 3.0;
  int k_neighbors = 10;
  int per_class_count = 200;
  bool augment = true;
  uint64_t seed = 1;
  FusionMode fusion = FusionMode::awf;
  bool cifem = true;
  bool tpc = true;
  int bsfe_width = 64;  // m, the final BSFE channel count
  int patch = 13;
  std::vector<int> bands;  // 1-based cube band ids; empty = all bands
  int grid_rows = 20, grid_cols = 20;
  int graph_rebuild_every = 1;
  int graph_sample = 0;  // 0 = full neighborhood aggregation
};

template <typename S>
struct Model {
  int n_classes = 0;
  int m = 64;
  int patch = 13;
  std::vector<int> bands;  // 1-based cube band ids
  bool cifem = true;
  bool tpc = true;
  FusionMode fusion = FusionMode::awf;
  int grid_rows = 20, grid_cols = 20;  // chessboard grid the model was trained under

  std::vector<BsfeParams<S>> bsfe;
  CifemParams<S> cifem_proj;
  std::vector<LinearHead<S>> sic;
  std::vector<TpcParams<S>> tpc_params;
  LinearHead<S> concat_head;
  AwfState awf;

  int band_count() const { return static_cast<int>(bands.size()); }
  int concat_width() const {
    return m + (cifem ? cifem_proj.out_channels * (band_count() - 1) : 0);
  }

  void init(uint64_t seed, double gamma = 3.0) {
    const int K = band_count();
    check(K >= 1, "model: needs at least one band");
    check(n_classes >= 2, "model: needs at least two classes");
    check(!cifem || K >= 2, "model: cross-band interaction requires at least 2 bands");
    Rng rng(seed);
    const auto channels = bsfe_channels(m);
    bsfe.assign(static_cast<size_t>(K), {});
    for (auto& b : bsfe) b.init(rng, 9, channels);
    if (cifem) cifem_proj.init(rng, m);
    sic.assign(static_cast<size_t>(K), {});
    for (auto& h : sic) h.init(rng, concat_width(), n_classes);
    if (tpc) {
      tpc_params.assign(static_cast<size_t>(K), {});
      for (auto& t : tpc_params) t.init(rng, concat_width(), n_classes);
    }
    if (fusion == FusionMode::concat) concat_head.init(rng, K * n_classes, n_classes);
    awf = AwfState::uniform(K, gamma);
  }

  std::vector<Tensor<S>> parameters() {
    std::vector<Tensor<S>> out;
    for (auto& [name, t] : named_tensors()) {
      (void)name;
      out.push_back(*t);
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor<S>*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    for (size_t k = 0; k < bsfe.size(); ++k) {
      for (size_t j = 0; j < 3; ++j) {
        const std::string p = "band" + std::to_string(k) + ".bsfe" + std::to_string(j);
        auto& blk = bsfe[k].blocks[j];
        out.push_back({p + ".conv.weight", &blk.weight});
        out.push_back({p + ".conv.bias", &blk.bias});
        out.push_back({p + ".bn.gamma", &blk.gamma});
        out.push_back({p + ".bn.beta", &blk.beta});
      }
    }
    if (cifem) {
      out.push_back({"cifem.conv.weight", &cifem_proj.proj.weight});
      out.push_back({"cifem.conv.bias", &cifem_proj.proj.bias});
      out.push_back({"cifem.bn.gamma", &cifem_proj.proj.gamma});
      out.push_back({"cifem.bn.beta", &cifem_proj.proj.beta});
    }
    for (size_t k = 0; k < sic.size(); ++k) {
      out.push_back({"band" + std::to_string(k) + ".sic.weight", &sic[k].weight});
      out.push_back({"band" + std::to_string(k) + ".sic.bias", &sic[k].bias});
    }
    for (size_t k = 0; k < tpc_params.size(); ++k) {
      const std::string p = "band" + std::to_string(k) + ".tpc";
      out.push_back({p + ".sage1.weight", &tpc_params[k].sage1});
      out.push_back({p + ".sage2.weight", &tpc_params[k].sage2});
      out.push_back({p + ".fc.weight", &tpc_params[k].head.weight});
      out.push_back({p + ".fc.bias", &tpc_params[k].head.bias});
    }
    if (fusion == FusionMode::concat) {
      out.push_back({"fusion.concat.weight", &concat_head.weight});
      out.push_back({"fusion.concat.bias", &concat_head.bias});
    }
    return out;
  }

  std::vector<std::pair<std::string, BnStats<S>*>> named_stats() {
    std::vector<std::pair<std::string, BnStats<S>*>> out;
    for (size_t k = 0; k < bsfe.size(); ++k)
      for (size_t j = 0; j < 3; ++j)
        out.push_back({"band" + std::to_string(k) + ".bsfe" + std::to_string(j) + ".bn",
                       &bsfe[k].blocks[j].stats});
    if (cifem) out.push_back({"cifem.bn", &cifem_proj.proj.stats});
    return out;
  }
};

template <typename S>
Model<S> make_model(const TrainConfig& cfg, int cube_bands, int cube_classes, uint64_t seed) {
  Model<S> model;
  model.n_classes = cube_classes;
  model.m = cfg.bsfe_width;
  model.patch = cfg.patch;
  model.cifem = cfg.cifem;
  model.tpc = cfg.tpc;
  model.fusion = cfg.fusion;
  model.grid_rows = cfg.grid_rows;
  model.grid_cols = cfg.grid_cols;
  if (cfg.bands.empty()) {
    for (int b = 1; b <= cube_bands; ++b) model.bands.push_back(b);
  } else {
    model.bands = cfg.bands;
    for (int b : model.bands)
      check(b >= 1 && b <= cube_bands,
            "config: band " + std::to_string(b) + " not present in a " +
                std::to_string(cube_bands) + "-band cube");
  }
  model.init(seed, cfg.gamma);
  return model;
}

template <typename S>
struct ForwardOut {
  std::vector<Tensor<S>> z_sic;   // per band [B,C]
  std::vector<Tensor<S>> pooled;  // per band [B,concat_width]
  std::vector<Tensor<S>> z_tpc;   // per band [B,C]; empty without graphs
};

/// One batched pass through the semantic branch (and the topological branch
/// when per-band graphs over the batch's nodes are supplied).
template <typename S>
ForwardOut<S> model_forward(Model<S>& model, std::span<const Tensor<S>> band_patches, Mode mode,
                            const std::vector<BandGraph>* graphs = nullptr) {
  const int K = model.band_count();
  check(static_cast<int>(band_patches.size()) == K, "model_forward: band patch count mismatch");
  std::vector<Tensor<S>> feats;
  feats.reserve(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k)
    feats.push_back(bsfe_forward(band_patches[static_cast<size_t>(k)], model.bsfe[static_cast<size_t>(k)], mode));

  ForwardOut<S> out;
  for (int k = 0; k < K; ++k) {
    Tensor<S> x_con = feats[static_cast<size_t>(k)];
    if (model.cifem && K >= 2) {
      auto x_cor = cifem_forward(std::span<const Tensor<S>>(feats), k, model.cifem_proj, mode);
      x_con = concat_channels({feats[static_cast<size_t>(k)], x_cor});
    }
    auto pooled = global_avg_pool(x_con);
    out.z_sic.push_back(softmax(model.sic[static_cast<size_t>(k)].forward(pooled)));
    out.pooled.push_back(std::move(pooled));
  }
  if (graphs != nullptr) {
    check(model.tpc, "model_forward: graphs supplied but the model has no TPC branch");
    check(static_cast<int>(graphs->size()) == K, "model_forward: graph count mismatch");
    for (int k = 0; k < K; ++k)
      out.z_tpc.push_back(tpc_forward((*graphs)[static_cast<size_t>(k)],
                                      out.pooled[static_cast<size_t>(k)],
                                      model.tpc_params[static_cast<size_t>(k)]));
  }
  return out;
}

/// Fuses per-band outputs according to the model's fusion mode.
template <typename S>
Tensor<S> fuse_outputs(Model<S>& model, std::span<const Tensor<S>> z) {
  switch (model.fusion) {
    case FusionMode::awf: return awf_fuse(z, model.awf);
    case FusionMode::concat: return concat_fuse(z, model.concat_head);
    default: return baseline_fuse(z, model.fusion);
  }
}

/// Objective for one batch under any fusion mode / branch configuration.
/// The AWF + TPC configuration is exactly compute_losses.
template <typename S>
LossBundle<S> batch_objective(Model<S>& model, const ForwardOut<S>& fw,
                              std::span<const int> labels, double lambda) {
  const size_t K = fw.z_sic.size();
  const bool tpc_on = !fw.z_tpc.empty();
  const int n = static_cast<int>(labels.size());
  if (model.fusion == FusionMode::awf && tpc_on)
    return compute_losses(std::span<const Tensor<S>>(fw.z_sic),
                          std::span<const Tensor<S>>(fw.z_tpc), labels, model.awf, lambda, n);

  LossBundle<S> out;
  out.report.lambda = lambda;
  Tensor<S> l_sic, l_tpc;
  for (size_t k = 0; k < K; ++k) {
    const S w = static_cast<S>(model.fusion == FusionMode::awf
                                   ? std::pow(model.awf.alpha[k], model.awf.gamma)
                                   : 1.0 / static_cast<double>(K));
    Tensor<S> ce = cross_entropy(fw.z_sic[k], labels);
    out.report.sic_band.push_back(double(ce.item()));
    l_sic = k == 0 ? scale(ce, w) : add(l_sic, scale(ce, w));
    if (tpc_on) {
      Tensor<S> ce_t = cross_entropy(fw.z_tpc[k], labels);
      out.report.tpc_band.push_back(double(ce_t.item()));
      l_tpc = k == 0 ? scale(ce_t, w) : add(l_tpc, scale(ce_t, w));
    }
  }
  out.total = l_sic;
  out.report.l_sic = double(l_sic.item());
  if (tpc_on) {
    out.total = add(out.total, l_tpc);
    out.report.l_tpc = double(l_tpc.item());
    Tensor<S> y_sic = fuse_outputs(model, std::span<const Tensor<S>>(fw.z_sic));
    Tensor<S> y_tpc = fuse_outputs(model, std::span<const Tensor<S>>(fw.z_tpc));
    Tensor<S> cons = scale(l2_norm(sub(y_sic, y_tpc)), S(1) / static_cast<S>(n));
    out.report.l_consistency = double(cons.item());
    out.total = add(out.total, scale(cons, static_cast<S>(lambda)));
  }
  out.report.l_total =
      out.report.l_sic + out.report.l_tpc + lambda * out.report.l_consistency;
  return out;
}

/// Training patches for all anchors (offline augmentation included), stored
/// per band as flat float rasters.
struct SampleStore {
  int n_samples = 0;
  int patch = 13;
  std::vector<std::vector<float>> data;  // per band: n_samples * 9*n*n floats
  std::vector<int> labels0;              // 0-based class labels
};

inline SampleStore build_sample_store(const PolSarCube& cube, const SampleSet& samples,
                                      std::span<const int> bands, bool augment) {
  SampleStore store;
  store.patch = samples.patch;
  const int n = samples.patch;
  const int64_t psz = static_cast<int64_t>(9) * n * n;
  const int n_modes = augment ? static_cast<int>(kAllAugments.size()) : 1;
  store.n_samples = static_cast<int>(samples.anchors.size()) * n_modes;
  store.data.assign(bands.size(), std::vector<float>(store.n_samples * psz));
  store.labels0.resize(static_cast<size_t>(store.n_samples));

  std::vector<float> base(static_cast<size_t>(psz));
  for (size_t bi = 0; bi < bands.size(); ++bi) {
    const int band = bands[bi] - 1;
    auto& dst = store.data[bi];
    for (size_t a = 0; a < samples.anchors.size(); ++a) {
      const auto& anchor = samples.anchors[a];
      extract_patch(cube, band, anchor.row, anchor.col, n, base.data());
      for (int mi = 0; mi < n_modes; ++mi) {
        const int64_t sample = static_cast<int64_t>(a) * n_modes + mi;
        augment_patch(base.data(), dst.data() + sample * psz, 9, n,
                      kAllAugments[static_cast<size_t>(mi)]);
        store.labels0[static_cast<size_t>(sample)] = anchor.label - 1;
      }
    }
  }
  return store;
}

template <typename S>
Tensor<S> assemble_batch(const SampleStore& store, size_t band_index, std::span<const int> ids) {
  const int n = store.patch;
  const int64_t psz = static_cast<int64_t>(9) * n * n;
  ArrayX<S> v(static_cast<int64_t>(ids.size()) * psz);
  const auto& src = store.data[band_index];
  for (size_t i = 0; i < ids.size(); ++i)
    for (int64_t j = 0; j < psz; ++j)
      v(static_cast<int64_t>(i) * psz + j) =
          static_cast<S>(src[static_cast<size_t>(ids[i]) * psz + j]);
  return Tensor<S>({static_cast<int>(ids.size()), 9, n, n}, std::move(v));
}

/// Pooled concatenated features for every stored sample, computed without
/// gradients using batch statistics (running stats are left untouched).
template <typename S>
std::vector<MatRM<S>> pooled_features(Model<S>& model, const SampleStore& store, int chunk = 256) {
  NoGradGuard ng;
  const int K = model.band_count();
  const int d = model.concat_width();
  std::vector<MatRM<S>> out(static_cast<size_t>(K));
  for (auto& mat : out) mat.resize(store.n_samples, d);
  std::vector<int> ids;
  for (int start = 0; start < store.n_samples; start += chunk) {
    const int count = std::min(chunk, store.n_samples - start);
    ids.resize(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) ids[static_cast<size_t>(i)] = start + i;
    std::vector<Tensor<S>> patches;
    for (int k = 0; k < K; ++k)
      patches.push_back(assemble_batch<S>(store, static_cast<size_t>(k), ids));
    auto fw = model_forward(model, std::span<const Tensor<S>>(patches), Mode::batch_stats);
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < count; ++i)
        out[static_cast<size_t>(k)].row(start + i) =
            Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(
                fw.pooled[static_cast<size_t>(k)].values().data() + static_cast<int64_t>(i) * d, d);
  }
  return out;
}

struct EpochLog {
  double l_sic = 0.0, l_tpc = 0.0, l_consistency = 0.0, l_total = 0.0;
  std::vector<double> alpha;
};

template <typename S>
struct TrainResult {
  Model<S> model;
  std::vector<EpochLog> history;
};

inline void write_epoch_line(std::ostream& os, int epoch, const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "epoch=%d l_sic=%.6f l_tpc=%.6f l_consistency=%.6f l_total=%.6f",
                epoch, e.l_sic, e.l_tpc, e.l_consistency, e.l_total);
  os << buf << " alpha=";
  for (size_t k = 0; k < e.alpha.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%s%.10f", k ? "," : "", e.alpha[k]);
    os << buf;
  }
  os << "\n";
}

/// Trains one model on the anchors of one chessboard part. Deterministic for
/// a fixed config and seed.
template <typename S>
TrainResult<S> train_model(const PolSarCube& cube, const ChessboardSplit& split, int part,
                           const TrainConfig& cfg, std::ostream* log = nullptr) {
  check(cfg.epochs >= 1 && cfg.batch_size >= 1, "train: epochs and batch size must be positive");
  check(cfg.graph_rebuild_every >= 1, "train: graph_rebuild_every must be >= 1");

  const uint64_t base = cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(part + 1);
  const uint64_t seed_draw = base ^ 0x1, seed_init = base ^ 0x2, seed_epoch = base ^ 0x3,
                 seed_graph = base ^ 0x4;

  const SampleSet samples =
      draw_training_samples(cube, split, part, cfg.per_class_count, seed_draw, cfg.patch);

  TrainResult<S> result;
  result.model = make_model<S>(cfg, cube.bands, cube.classes, seed_init);
  Model<S>& model = result.model;
  const int K = model.band_count();

  const SampleStore store = build_sample_store(cube, samples, model.bands, cfg.augment);

  Adam<S> opt(model.parameters(), static_cast<S>(cfg.learning_rate));
  Rng rng_epoch(seed_epoch);
  Rng rng_graph(seed_graph);

  std::vector<BandGraph> graphs(static_cast<size_t>(K));
  std::vector<int> order(static_cast<size_t>(store.n_samples));
  for (int i = 0; i < store.n_samples; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (model.tpc && epoch % cfg.graph_rebuild_every == 0) {
      auto feats = pooled_features(model, store);
      for (int k = 0; k < K; ++k)
        graphs[static_cast<size_t>(k)] =
            build_graph(feats[static_cast<size_t>(k)], cfg.k_neighbors);
    }
    rng_epoch.shuffle(order);

    EpochLog elog;
    std::vector<double> band_sic(static_cast<size_t>(K), 0.0),
        band_tpc(static_cast<size_t>(K), 0.0);
    for (int start = 0; start < store.n_samples; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, store.n_samples - start);
      std::span<const int> ids(order.data() + start, static_cast<size_t>(count));
      std::vector<int> labels(static_cast<size_t>(count));
      for (int i = 0; i < count; ++i)
        labels[static_cast<size_t>(i)] = store.labels0[static_cast<size_t>(ids[static_cast<size_t>(i)])];

      std::vector<Tensor<S>> patches;
      for (int k = 0; k < K; ++k)
        patches.push_back(assemble_batch<S>(store, static_cast<size_t>(k), ids));

      std::vector<BandGraph> subs;
      if (model.tpc) {
        for (int k = 0; k < K; ++k) {
          BandGraph sub = induced_subgraph(graphs[static_cast<size_t>(k)], ids);
          if (cfg.graph_sample > 0) {
            for (auto& nbrs : sub.neighbors) {
              if (static_cast<int>(nbrs.size()) > cfg.graph_sample) {
                for (int i = 0; i < cfg.graph_sample; ++i) {
                  const int j = i + rng_graph.uniform_int(static_cast<int>(nbrs.size()) - i);
                  std::swap(nbrs[static_cast<size_t>(i)], nbrs[static_cast<size_t>(j)]);
                }
                nbrs.resize(static_cast<size_t>(cfg.graph_sample));
                std::sort(nbrs.begin(), nbrs.end());
              }
            }
          }
          subs.push_back(std::move(sub));
        }
      }

      LossBundle<S> loss;
      try {
        auto fw = model_forward(model, std::span<const Tensor<S>>(patches), Mode::train,
                                model.tpc ? &subs : nullptr);
        loss = batch_objective(model, fw, labels, cfg.lambda);
      } catch (const ContractError& e) {
        // NaN activations mid-training are numerical blow-up, not misuse.
        if (std::string(e.what()).find("NaN") != std::string::npos)
          throw DivergenceError("training diverged: " + std::string(e.what()) + " at epoch " +
                                std::to_string(epoch + 1));
        throw;
      }
      if (!std::isfinite(loss.report.l_total))
        throw DivergenceError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch + 1) + ", batch offset " +
                              std::to_string(start));
      backward(loss.total);
      opt.step();

      const double w = static_cast<double>(count);
      elog.l_sic += loss.report.l_sic * w;
      elog.l_tpc += loss.report.l_tpc * w;
      elog.l_consistency += loss.report.l_consistency * w;
      elog.l_total += loss.report.l_total * w;
      for (int k = 0; k < K; ++k) {
        band_sic[static_cast<size_t>(k)] += loss.report.sic_band[static_cast<size_t>(k)] * w;
        if (model.tpc)
          band_tpc[static_cast<size_t>(k)] += loss.report.tpc_band[static_cast<size_t>(k)] * w;
      }
    }
    const double inv_n = 1.0 / static_cast<double>(store.n_samples);
    elog.l_sic *= inv_n;
    elog.l_tpc *= inv_n;
    elog.l_consistency *= inv_n;
    elog.l_total *= inv_n;

    // Closed-form weight update from epoch-mean combined per-band losses,
    // with the network parameters held fixed.
    if (model.fusion == FusionMode::awf) {
      std::vector<double> combined(static_cast<size_t>(K));
      for (int k = 0; k < K; ++k)
        combined[static_cast<size_t>(k)] =
            band_sic[static_cast<size_t>(k)] * inv_n +
            (model.tpc ? band_tpc[static_cast<size_t>(k)] * inv_n : 0.0);
      model.awf.alpha = update_alpha(combined, model.awf.gamma);
      model.awf.validate();
    }
    elog.alpha = model.awf.alpha;
    if (log) write_epoch_line(*log, epoch + 1, elog);
    result.history.push_back(std::move(elog));
  }
  return result;
}

/// Classifies the given pixels with one model (eval mode, SIC branch only,
/// fused per the model's fusion mode; argmax ties break to the lowest class).
template <typename S>
void predict_pixels(const PolSarCube& cube, Model<S>& model, std::span<const int64_t> pixel_ids,
                    std::vector<uint16_t>& raster, int chunk = 512) {
  NoGradGuard ng;
  const int K = model.band_count();
  const int n = model.patch;
  const int64_t psz = static_cast<int64_t>(9) * n * n;
  const int C = model.n_classes;
  for (size_t start = 0; start < pixel_ids.size(); start += static_cast<size_t>(chunk)) {
    const int count = static_cast<int>(std::min<size_t>(static_cast<size_t>(chunk),
                                                        pixel_ids.size() - start));
    std::vector<Tensor<S>> patches;
    for (int k = 0; k < K; ++k) {
      ArrayX<S> v(static_cast<int64_t>(count) * psz);
      std::vector<float> buf(static_cast<size_t>(psz));
      for (int i = 0; i < count; ++i) {
        const int64_t px = pixel_ids[start + static_cast<size_t>(i)];
        extract_patch(cube, model.bands[static_cast<size_t>(k)] - 1,
                      static_cast<int>(px / cube.width), static_cast<int>(px % cube.width), n,
                      buf.data());
        for (int64_t j = 0; j < psz; ++j) v(static_cast<int64_t>(i) * psz + j) = static_cast<S>(buf[static_cast<size_t>(j)]);
      }
      patches.push_back(Tensor<S>({count, 9, n, n}, std::move(v)));
    }
    auto fw = model_forward(model, std::span<const Tensor<S>>(patches), Mode::eval);
    Tensor<S> fused = fuse_outputs(model, std::span<const Tensor<S>>(fw.z_sic));
    for (int i = 0; i < count; ++i) {
      const auto row = fused.values().segment(static_cast<int64_t>(i) * C, C);
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (row(c) > row(best)) best = c;
      raster[static_cast<size_t>(pixel_ids[start + static_cast<size_t>(i)])] =
          static_cast<uint16_t>(best + 1);
    }
  }
}

/// Stitched full-image prediction: every pixel is classified by the model
/// trained on the opposite chessboard part. The topological branch plays no
/// role at inference.
template <typename S>
std::vector<uint16_t> predict_image(const PolSarCube& cube, Model<S>& model_black,
                                    Model<S>& model_white, const ChessboardSplit& split) {
  check(split.height == cube.height && split.width == cube.width,
        "predict_image: split does not match cube dimensions");
  std::vector<uint16_t> raster(static_cast<size_t>(cube.height) * cube.width, 0);
  predict_pixels(cube, model_white, std::span<const int64_t>(split.pixels[0]), raster);
  predict_pixels(cube, model_black, std::span<const int64_t>(split.pixels[1]), raster);
  return raster;
}

}  // namespace mfstf
