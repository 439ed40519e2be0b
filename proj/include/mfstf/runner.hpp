#pragma once

// Subcommand implementations shared by the command-line tool and the tests.
// Exit codes: 0 success, 1 check failure, 2 usage/IO error, 3 divergence.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mfstf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;

struct GenOptions {
  std::string out;
  uint64_t seed = 7;
  int bands = 2;
  int classes = 5;
  int height = 200;
  int width = 200;
  int looks = 4;
};

struct TrainOptions {
  std::string data;
  std::string config;  // empty = documented defaults
  std::string out;     // prefix; "-black"/"-white" and extensions are appended
  std::string part = "both";
  int repeats = 1;
  bool quiet = false;
};

struct PredictOptions {
  std::string data;
  std::string ckpt_black;
  std::string ckpt_white;
  std::string out;
  std::string map;  // optional PPM path
};

struct EvalOptions {
  std::vector<std::string> pred;
  std::string truth;  // MFPC cube or MFLB raster
  std::string json_out;
};

struct SweepOptions {
  std::string data;
  std::string config;
  std::string param;  // "gamma" or "lambda"
  std::vector<double> values;  // empty = documented default grid
  int repeats = 1;
};

struct GradcheckOptions {
  uint64_t seed = 1;
};

int run_gen(const GenOptions& opt, std::ostream& out, std::ostream& err);
int run_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);
int run_predict(const PredictOptions& opt, std::ostream& out, std::ostream& err);
int run_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);
int run_sweep(const SweepOptions& opt, std::ostream& out, std::ostream& err);
int run_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace mfstf
