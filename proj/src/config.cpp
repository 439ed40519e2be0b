#include "mfstf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mfstf {

namespace {

using nlohmann::json;

int require_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ParseError("config: '" + key + "' must be an integer");
  return v.get<int>();
}

double require_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ParseError("config: '" + key + "' must be a number");
  return v.get<double>();
}

bool require_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ParseError("config: '" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string require_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ParseError("config: '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("config: top level must be a JSON object");

  static const std::set<std::string> known = {
      "epochs",        "learning_rate",    "batch_size",      "lambda",
      "gamma",         "k_neighbors",      "per_class_count", "augment",
      "seed",          "fusion",           "cifem",           "tpc",
      "bsfe_width",    "patch",            "bands",           "grid_rows",
      "grid_cols",     "graph_rebuild_every", "graph_sample", "data",
      "out"};
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (!known.count(key)) throw ParseError("config: unknown key '" + key + "'");
  }

  RunConfig cfg;
  TrainConfig& t = cfg.train;
  if (doc.contains("epochs")) t.epochs = require_int(doc["epochs"], "epochs");
  if (doc.contains("learning_rate"))
    t.learning_rate = require_number(doc["learning_rate"], "learning_rate");
  if (doc.contains("batch_size")) t.batch_size = require_int(doc["batch_size"], "batch_size");
  if (doc.contains("lambda")) t.lambda = require_number(doc["lambda"], "lambda");
  if (doc.contains("gamma")) t.gamma = require_number(doc["gamma"], "gamma");
  if (doc.contains("k_neighbors")) t.k_neighbors = require_int(doc["k_neighbors"], "k_neighbors");
  if (doc.contains("per_class_count"))
    t.per_class_count = require_int(doc["per_class_count"], "per_class_count");
  if (doc.contains("augment")) t.augment = require_bool(doc["augment"], "augment");
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_integer()) throw ParseError("config: 'seed' must be an integer");
    t.seed = doc["seed"].get<uint64_t>();
  }
  if (doc.contains("fusion")) t.fusion = fusion_mode_from_string(require_string(doc["fusion"], "fusion"));
  if (doc.contains("cifem")) t.cifem = require_bool(doc["cifem"], "cifem");
  if (doc.contains("tpc")) t.tpc = require_bool(doc["tpc"], "tpc");
  if (doc.contains("bsfe_width")) t.bsfe_width = require_int(doc["bsfe_width"], "bsfe_width");
  if (doc.contains("patch")) t.patch = require_int(doc["patch"], "patch");
  if (doc.contains("bands")) {
    if (!doc["bands"].is_array()) throw ParseError("config: 'bands' must be an array");
    for (const auto& b : doc["bands"]) t.bands.push_back(require_int(b, "bands"));
  }
  if (doc.contains("grid_rows")) t.grid_rows = require_int(doc["grid_rows"], "grid_rows");
  if (doc.contains("grid_cols")) t.grid_cols = require_int(doc["grid_cols"], "grid_cols");
  if (doc.contains("graph_rebuild_every"))
    t.graph_rebuild_every = require_int(doc["graph_rebuild_every"], "graph_rebuild_every");
  if (doc.contains("graph_sample")) t.graph_sample = require_int(doc["graph_sample"], "graph_sample");
  if (doc.contains("data")) cfg.data = require_string(doc["data"], "data");
  if (doc.contains("out")) cfg.out = require_string(doc["out"], "out");

  if (!(t.gamma > 1.0)) throw ParseError("config: gamma must be > 1");
  if (t.lambda < 0.0) throw ParseError("config: lambda must be >= 0");
  if (t.epochs < 1) throw ParseError("config: epochs must be >= 1");
  if (t.batch_size < 1) throw ParseError("config: batch_size must be >= 1");
  if (!(t.learning_rate > 0.0)) throw ParseError("config: learning_rate must be > 0");
  if (t.k_neighbors < 1) throw ParseError("config: k_neighbors must be >= 1");
  if (t.per_class_count < 1) throw ParseError("config: per_class_count must be >= 1");
  if (t.bsfe_width < 1) throw ParseError("config: bsfe_width must be >= 1");
  if (t.patch < 1 || t.patch % 2 == 0) throw ParseError("config: patch must be odd and >= 1");
  if (t.grid_rows < 1 || t.grid_cols < 1)
    throw ParseError("config: grid dimensions must be >= 1");
  if (t.graph_rebuild_every < 1) throw ParseError("config: graph_rebuild_every must be >= 1");
  if (t.graph_sample < 0) throw ParseError("config: graph_sample must be >= 0");
  for (int b : t.bands)
    if (b < 1) throw ParseError("config: band indices are 1-based and must be >= 1");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string default_config_json() {
  const TrainConfig t;
  json doc;
  doc["epochs"] = t.epochs;
  doc["learning_rate"] = t.learning_rate;
  doc["batch_size"] = t.batch_size;
  doc["lambda"] = t.lambda;
  doc["gamma"] = t.gamma;
  doc["k_neighbors"] = t.k_neighbors;
  doc["per_class_count"] = t.per_class_count;
  doc["augment"] = t.augment;
  doc["seed"] = t.seed;
  doc["fusion"] = to_string(t.fusion);
  doc["cifem"] = t.cifem;
  doc["tpc"] = t.tpc;
  doc["bsfe_width"] = t.bsfe_width;
  doc["patch"] = t.patch;
  doc["bands"] = t.bands;
  doc["grid_rows"] = t.grid_rows;
  doc["grid_cols"] = t.grid_cols;
  doc["graph_rebuild_every"] = t.graph_rebuild_every;
  doc["graph_sample"] = t.graph_sample;
  return doc.dump(2);
}

}  // namespace mfstf
