#include "mfstf/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mfstf/checkpoint.hpp"
#include "mfstf/config.hpp"
#include "mfstf/gradcheck.hpp"
#include "mfstf/metrics.hpp"
#include "mfstf/polsar.hpp"
#include "mfstf/train.hpp"

namespace mfstf {

namespace {

int to_exit_code(const std::exception& e, std::ostream& err) {
  if (dynamic_cast<const DivergenceError*>(&e)) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  }
  err << "error: " << e.what() << "\n";
  return kExitUsage;
}

std::vector<uint16_t> load_truth_raster(const std::string& path, int& height, int& width) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw ParseError("cannot open: " + path);
  char magic[4] = {};
  probe.read(magic, 4);
  probe.close();
  if (std::memcmp(magic, "MFPC", 4) == 0) {
    PolSarCube cube = read_cube(path);
    height = cube.height;
    width = cube.width;
    return cube.labels;
  }
  return read_label_raster(path, height, width);
}

int truth_class_count(const std::vector<uint16_t>& truth) {
  int c = 0;
  for (uint16_t v : truth) c = std::max(c, static_cast<int>(v));
  return c;
}

struct TrainedPair {
  TrainResult<float> black, white;
};

TrainedPair train_both_parts(const PolSarCube& cube, const TrainConfig& cfg, std::ostream* log_b,
                             std::ostream* log_w) {
  const ChessboardSplit split =
      chessboard_partition(cube.height, cube.width, cfg.grid_rows, cfg.grid_cols);
  TrainedPair pair;
  pair.black = train_model<float>(cube, split, 0, cfg, log_b);
  pair.white = train_model<float>(cube, split, 1, cfg, log_w);
  return pair;
}

double stitched_oa(const PolSarCube& cube, const TrainConfig& cfg, TrainedPair& pair) {
  const ChessboardSplit split =
      chessboard_partition(cube.height, cube.width, cfg.grid_rows, cfg.grid_cols);
  const auto raster = predict_image(cube, pair.black.model, pair.white.model, split);
  ConfusionMatrix cm(cube.classes);
  cm.accumulate(cube.labels, raster);
  return compute_metrics(cm).oa;
}

void print_metrics_block(std::ostream& out, const Metrics& m, int classes) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "oa=%.6f", m.oa);
  out << buf << "\n";
  std::snprintf(buf, sizeof(buf), "aa=%.6f", m.aa);
  out << buf << "\n";
  std::snprintf(buf, sizeof(buf), "kappa=%.6f", m.kappa);
  out << buf << "\n";
  for (int c = 1; c <= classes; ++c) {
    const double acc = m.per_class[static_cast<size_t>(c - 1)];
    if (std::isnan(acc))
      out << "class_" << c << "_acc=nan\n";
    else {
      std::snprintf(buf, sizeof(buf), "class_%d_acc=%.6f", c, acc);
      out << buf << "\n";
    }
  }
}

}  // namespace

int run_gen(const GenOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    check(!opt.out.empty(), "gen: --out is required");
    SceneConfig scene;
    scene.classes = opt.classes;
    scene.bands = opt.bands;
    scene.height = opt.height;
    scene.width = opt.width;
    scene.looks = opt.looks;
    scene.seed = opt.seed;
    const PolSarCube cube = generate_synthetic_scene(scene);
    write_cube(cube, opt.out);
    out << "wrote " << opt.out << " (bands=" << cube.bands << " classes=" << cube.classes
        << " size=" << cube.height << "x" << cube.width << ")\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return to_exit_code(e, err);
  }
}

int run_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    check(!opt.data.empty() && !opt.out.empty(), "train: --data and --out are required");
    check(opt.part == "black" || opt.part == "white" || opt.part == "both",
          "train: --part must be black, white or both");
    check(opt.repeats >= 1, "train: --repeats must be >= 1");
    RunConfig rc = opt.config.empty() ? parse_run_config("{}") : load_run_config(opt.config);
    const PolSarCube cube = read_cube(opt.data);
    const ChessboardSplit split =
        chessboard_partition(cube.height, cube.width, rc.train.grid_rows, rc.train.grid_cols);

    for (int rep = 0; rep < opt.repeats; ++rep) {
      TrainConfig cfg = rc.train;
      cfg.seed += static_cast<uint64_t>(rep);
      const std::string prefix =
          opt.repeats > 1 ? opt.out + "-s" + std::to_string(rep) : opt.out;
      for (int part = 0; part < 2; ++part) {
        const std::string part_name = part == 0 ? "black" : "white";
        if (opt.part != "both" && opt.part != part_name) continue;
        std::ofstream log(prefix + "-" + part_name + ".log");
        if (!log) throw ParseError("cannot open for writing: " + prefix + "-" + part_name + ".log");
        auto result = train_model<float>(cube, split, part, cfg, &log);
        save_model(result.model, cube.bands, prefix + "-" + part_name + ".mfst");
        if (!opt.quiet)
          out << "wrote " << prefix + "-" + part_name + ".mfst"
              << " (epochs=" << cfg.epochs << ")\n";
      }
    }
    return kExitOk;
  } catch (const std::exception& e) {
    return to_exit_code(e, err);
  }
}

int run_predict(const PredictOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    check(!opt.data.empty() && !opt.ckpt_black.empty() && !opt.ckpt_white.empty() &&
              !opt.out.empty(),
          "predict: --data, --ckpt-black, --ckpt-white and --out are required");
    const PolSarCube cube = read_cube(opt.data);
    LoadedModel black = load_model(opt.ckpt_black);
    LoadedModel white = load_model(opt.ckpt_white);
    for (const LoadedModel* lm : {&black, &white}) {
      check(lm->source_bands == cube.bands,
            "predict: checkpoint was trained against a " + std::to_string(lm->source_bands) +
                "-band cube but the data has " + std::to_string(cube.bands) + " bands");
      check(lm->model.n_classes == cube.classes,
            "predict: checkpoint class count " + std::to_string(lm->model.n_classes) +
                " does not match cube class count " + std::to_string(cube.classes));
    }
    check(black.model.grid_rows == white.model.grid_rows &&
              black.model.grid_cols == white.model.grid_cols,
          "predict: the two checkpoints were trained under different chessboard grids");
    const ChessboardSplit split = chessboard_partition(cube.height, cube.width,
                                                       black.model.grid_rows,
                                                       black.model.grid_cols);
    const auto raster = predict_image(cube, black.model, white.model, split);
    write_label_raster(opt.out, cube.height, cube.width, raster);
    out << "wrote " << opt.out << "\n";
    if (!opt.map.empty()) {
      const auto palette = default_palette(cube.classes);
      render_map(raster, cube.height, cube.width, palette, opt.map);
      out << "wrote " << opt.map << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    return to_exit_code(e, err);
  }
}

int run_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    check(!opt.pred.empty() && !opt.truth.empty(), "eval: --pred and --truth are required");
    int th = 0, tw = 0;
    const auto truth = load_truth_raster(opt.truth, th, tw);
    const int classes = truth_class_count(truth);
    check(classes >= 1, "eval: no labeled pixels in the truth raster");

    nlohmann::json jruns = nlohmann::json::array();
    double mean_oa = 0.0, mean_aa = 0.0, mean_kappa = 0.0;
    for (const auto& pred_path : opt.pred) {
      int ph = 0, pw = 0;
      const auto pred = read_label_raster(pred_path, ph, pw);
      check(ph == th && pw == tw, "eval: prediction raster is " + std::to_string(ph) + "x" +
                                      std::to_string(pw) + " but truth is " + std::to_string(th) +
                                      "x" + std::to_string(tw));
      ConfusionMatrix cm(classes);
      cm.accumulate(truth, pred);
      const Metrics m = compute_metrics(cm);
      if (opt.pred.size() > 1) out << "pred=" << pred_path << "\n";
      print_metrics_block(out, m, classes);
      mean_oa += m.oa;
      mean_aa += m.aa;
      mean_kappa += m.kappa;
      nlohmann::json jm;
      jm["pred"] = pred_path;
      jm["oa"] = m.oa;
      jm["aa"] = m.aa;
      jm["kappa"] = m.kappa;
      for (int c = 1; c <= classes; ++c) {
        const double acc = m.per_class[static_cast<size_t>(c - 1)];
        jm["per_class"].push_back(std::isnan(acc) ? nlohmann::json() : nlohmann::json(acc));
      }
      jruns.push_back(jm);
    }
    const double n = static_cast<double>(opt.pred.size());
    if (opt.pred.size() > 1) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "mean_oa=%.6f mean_aa=%.6f mean_kappa=%.6f", mean_oa / n,
                    mean_aa / n, mean_kappa / n);
      out << buf << "\n";
    }
    if (!opt.json_out.empty()) {
      nlohmann::json doc;
      doc["runs"] = jruns;
      doc["mean"] = {{"oa", mean_oa / n}, {"aa", mean_aa / n}, {"kappa", mean_kappa / n}};
      std::ofstream jf(opt.json_out);
      if (!jf) throw ParseError("cannot open for writing: " + opt.json_out);
      jf << doc.dump(2) << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    return to_exit_code(e, err);
  }
}

int run_sweep(const SweepOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    check(!opt.data.empty(), "sweep: --data is required");
    check(opt.param == "gamma" || opt.param == "lambda",
          "sweep: --param must be gamma or lambda");
    check(opt.repeats >= 1, "sweep: --repeats must be >= 1");
    std::vector<double> values = opt.values;
    if (values.empty()) {
      if (opt.param == "gamma")
        values = {1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5, 5.5, 6, 6.5, 7, 7.5, 8};
      else
        values = {0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1};
    }
    for (double v : values) {
      if (opt.param == "gamma") check(v > 1.0, "sweep: gamma values must be > 1");
      if (opt.param == "lambda") check(v >= 0.0, "sweep: lambda values must be >= 0");
    }
    RunConfig rc = opt.config.empty() ? parse_run_config("{}") : load_run_config(opt.config);
    const PolSarCube cube = read_cube(opt.data);

    out << "param=" << opt.param << "\n";
    for (double v : values) {
      double oa_sum = 0.0;
      for (int rep = 0; rep < opt.repeats; ++rep) {
        TrainConfig cfg = rc.train;
        cfg.seed += static_cast<uint64_t>(rep);
        if (opt.param == "gamma")
          cfg.gamma = v;
        else
          cfg.lambda = v;
        TrainedPair pair = train_both_parts(cube, cfg, nullptr, nullptr);
        oa_sum += stitched_oa(cube, cfg, pair);
      }
      char buf[64];
      std::snprintf(buf, sizeof(buf), "value=%g oa=%.6f", v,
                    oa_sum / static_cast<double>(opt.repeats));
      out << buf << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    return to_exit_code(e, err);
  }
}

int run_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const GradCheckReport report = run_gradient_checks(opt.seed);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& op : report.ops) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "op=%s max_rel_err=%.3e %s", op.op.c_str(), op.max_rel_err,
                    op.max_rel_err <= report.tolerance ? "pass" : "FAIL");
      out << buf << "\n";
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "checked %zu ops in %.1f s (tolerance %.0e)",
                  report.ops.size(), seconds, report.tolerance);
    out << buf << "\n";
    if (!report.pass()) {
      const auto& w = report.worst();
      err << "gradient check FAILED: op " << w.op << " max relative error " << w.max_rel_err
          << "\n";
      return kExitCheckFailure;
    }
    return kExitOk;
  } catch (const std::exception& e) {
    return to_exit_code(e, err);
  }
}

}  // namespace mfstf
