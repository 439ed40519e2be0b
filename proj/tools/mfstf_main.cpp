// Command-line entry point: synthetic data generation, training, full-image
// prediction, evaluation, hyperparameter sweeps and the gradient self-check.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mfstf/runner.hpp"

namespace {

bool parse_size(const std::string& s, int& height, int& width) {
  const auto x = s.find('x');
  if (x == std::string::npos) return false;
  try {
    height = std::stoi(s.substr(0, x));
    width = std::stoi(s.substr(x + 1));
  } catch (...) {
    return false;
  }
  return height >= 1 && width >= 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mfstf: multi-frequency PolSAR fusion classifier"};
  app.require_subcommand(1);

  mfstf::GenOptions gen;
  std::string gen_size = "200x200";
  auto* cmd_gen = app.add_subcommand("gen", "generate a synthetic MFPC cube");
  cmd_gen->add_option("--out", gen.out, "output cube path")->required();
  cmd_gen->add_option("--seed", gen.seed, "scene seed");
  cmd_gen->add_option("--bands", gen.bands, "number of frequency bands (>= 2)");
  cmd_gen->add_option("--classes", gen.classes, "number of classes");
  cmd_gen->add_option("--size", gen_size, "scene size HxW (default 200x200)");
  cmd_gen->add_option("--looks", gen.looks, "speckle looks per pixel");

  mfstf::TrainOptions train;
  auto* cmd_train = app.add_subcommand("train", "train chessboard models");
  cmd_train->add_option("--data", train.data, "MFPC cube path")->required();
  cmd_train->add_option("--config", train.config, "JSON config path (defaults when omitted)");
  cmd_train->add_option("--out", train.out, "output prefix for checkpoints and logs")->required();
  cmd_train->add_option("--part", train.part, "black|white|both (default both)");
  cmd_train->add_option("--repeats", train.repeats, "independent runs with seed offsets");

  mfstf::PredictOptions predict;
  auto* cmd_predict = app.add_subcommand("predict", "stitched full-image prediction");
  cmd_predict->add_option("--data", predict.data, "MFPC cube path")->required();
  cmd_predict->add_option("--ckpt-black", predict.ckpt_black, "checkpoint trained on the black part")
      ->required();
  cmd_predict->add_option("--ckpt-white", predict.ckpt_white, "checkpoint trained on the white part")
      ->required();
  cmd_predict->add_option("--out", predict.out, "output MFLB raster path")->required();
  cmd_predict->add_option("--map", predict.map, "optional rendered PPM map path");

  mfstf::EvalOptions eval;
  auto* cmd_eval = app.add_subcommand("eval", "confusion metrics for predictions");
  cmd_eval->add_option("--pred", eval.pred, "MFLB prediction raster(s)")->required();
  cmd_eval->add_option("--truth", eval.truth, "truth labels (MFPC cube or MFLB raster)")
      ->required();
  cmd_eval->add_option("--json", eval.json_out, "optional JSON report path");

  mfstf::SweepOptions sweep;
  auto* cmd_sweep = app.add_subcommand("sweep", "train across a gamma or lambda grid");
  cmd_sweep->add_option("--data", sweep.data, "MFPC cube path")->required();
  cmd_sweep->add_option("--config", sweep.config, "JSON config path");
  cmd_sweep->add_option("--param", sweep.param, "gamma|lambda")->required();
  cmd_sweep->add_option("--values", sweep.values, "grid values (defaults to the documented grid)");
  cmd_sweep->add_option("--repeats", sweep.repeats, "runs per value, averaged");

  mfstf::GradcheckOptions gradcheck;
  auto* cmd_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient self-check");
  cmd_gradcheck->add_option("--seed", gradcheck.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return mfstf::kExitUsage;
  }

  if (cmd_gen->parsed()) {
    if (!parse_size(gen_size, gen.height, gen.width)) {
      std::cerr << "error: --size must be HxW, e.g. 200x200\n";
      return mfstf::kExitUsage;
    }
    return mfstf::run_gen(gen, std::cout, std::cerr);
  }
  if (cmd_train->parsed()) return mfstf::run_train(train, std::cout, std::cerr);
  if (cmd_predict->parsed()) return mfstf::run_predict(predict, std::cout, std::cerr);
  if (cmd_eval->parsed()) return mfstf::run_eval(eval, std::cout, std::cerr);
  if (cmd_sweep->parsed()) return mfstf::run_sweep(sweep, std::cout, std::cerr);
  if (cmd_gradcheck->parsed()) return mfstf::run_gradcheck(gradcheck, std::cout, std::cerr);
  return mfstf::kExitUsage;
}
