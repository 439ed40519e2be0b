#include "mfstf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace mfstf {

namespace {

struct Record {
  std::vector<int> shape;
  std::vector<float> data;
};

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw ParseError("truncated checkpoint: " + path);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void write_record(std::ofstream& out, const std::string& name, const std::vector<int>& shape,
                  const float* data, int64_t count) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<uint32_t>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
  for (int64_t i = 0; i < count; ++i) put_u32(out, std::bit_cast<uint32_t>(data[i]));
}

void write_scalar(std::ofstream& out, const std::string& name, float v) {
  write_record(out, name, {1}, &v, 1);
}

}  // namespace

void save_model(Model<float>& model, int source_bands, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out.write("MFST", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<uint32_t>(model.band_count()));
  put_u32(out, static_cast<uint32_t>(model.n_classes));
  put_u32(out, static_cast<uint32_t>(model.m));

  write_scalar(out, "meta.patch", static_cast<float>(model.patch));
  write_scalar(out, "meta.cifem", model.cifem ? 1.0f : 0.0f);
  write_scalar(out, "meta.tpc", model.tpc ? 1.0f : 0.0f);
  write_scalar(out, "meta.fusion", static_cast<float>(static_cast<int>(model.fusion)));
  write_scalar(out, "meta.source_bands", static_cast<float>(source_bands));
  write_scalar(out, "meta.grid_rows", static_cast<float>(model.grid_rows));
  write_scalar(out, "meta.grid_cols", static_cast<float>(model.grid_cols));
  {
    std::vector<float> bands(model.bands.begin(), model.bands.end());
    write_record(out, "meta.bands", {model.band_count()}, bands.data(),
                 static_cast<int64_t>(bands.size()));
  }
  bool bn_init = true;
  for (auto& [name, st] : model.named_stats()) {
    (void)name;
    bn_init = bn_init && st->initialized;
  }
  write_scalar(out, "meta.bn_initialized", bn_init ? 1.0f : 0.0f);

  for (auto& [name, t] : model.named_tensors())
    write_record(out, name, t->shape(), t->values().data(), t->size());
  for (auto& [name, st] : model.named_stats()) {
    const int c = static_cast<int>(st->running_mean.size());
    write_record(out, name + ".running_mean", {c}, st->running_mean.data(), c);
    write_record(out, name + ".running_var", {c}, st->running_var.data(), c);
  }
  {
    std::vector<float> alpha(model.awf.alpha.begin(), model.awf.alpha.end());
    write_record(out, "awf.alpha", {static_cast<int>(alpha.size())}, alpha.data(),
                 static_cast<int64_t>(alpha.size()));
    write_scalar(out, "awf.gamma", static_cast<float>(model.awf.gamma));
  }
  if (!out) throw ParseError("write failed: " + path);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "MFST", 4) != 0)
    throw ParseError("bad magic, not an MFST checkpoint: " + path);
  const uint32_t version = get_u32(in, path);
  if (version != 1) throw ParseError("unsupported MFST version " + std::to_string(version));
  const int K = static_cast<int>(get_u32(in, path));
  const int C = static_cast<int>(get_u32(in, path));
  const int m = static_cast<int>(get_u32(in, path));
  if (K < 1 || C < 2 || m < 1) throw ParseError("MFST header has invalid dimensions: " + path);

  std::map<std::string, Record> records;
  while (true) {
    in.peek();
    if (in.eof()) break;
    const uint32_t name_len = get_u32(in, path);
    if (name_len == 0 || name_len > 4096) throw ParseError("corrupt record name: " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<uint32_t>(in.gcount()) != name_len)
      throw ParseError("truncated checkpoint: " + path);
    const uint32_t rank = get_u32(in, path);
    if (rank > 8) throw ParseError("corrupt record rank: " + path);
    Record rec;
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = get_u32(in, path);
      if (d == 0 || d > (1u << 24)) throw ParseError("corrupt record extent: " + path);
      rec.shape.push_back(static_cast<int>(d));
      count *= d;
    }
    if (count > (int64_t(1) << 28)) throw ParseError("record payload overflow: " + path);
    rec.data.resize(static_cast<size_t>(count));
    for (auto& v : rec.data) v = std::bit_cast<float>(get_u32(in, path));
    if (!records.emplace(std::move(name), std::move(rec)).second)
      throw ParseError("duplicate checkpoint record: " + path);
  }

  auto take = [&records, &path](const std::string& name) -> Record {
    auto it = records.find(name);
    if (it == records.end()) throw ParseError("checkpoint missing record '" + name + "': " + path);
    Record rec = std::move(it->second);
    records.erase(it);
    return rec;
  };
  auto take_scalar = [&take](const std::string& name) {
    Record rec = take(name);
    if (rec.data.size() != 1) throw ParseError("record '" + name + "' is not scalar");
    return rec.data[0];
  };

  LoadedModel out;
  Model<float>& model = out.model;
  model.n_classes = C;
  model.m = m;
  model.patch = static_cast<int>(take_scalar("meta.patch"));
  model.cifem = take_scalar("meta.cifem") != 0.0f;
  model.tpc = take_scalar("meta.tpc") != 0.0f;
  const int fusion = static_cast<int>(take_scalar("meta.fusion"));
  if (fusion < 0 || fusion > static_cast<int>(FusionMode::sum))
    throw ParseError("checkpoint has unknown fusion mode: " + path);
  model.fusion = static_cast<FusionMode>(fusion);
  out.source_bands = static_cast<int>(take_scalar("meta.source_bands"));
  model.grid_rows = static_cast<int>(take_scalar("meta.grid_rows"));
  model.grid_cols = static_cast<int>(take_scalar("meta.grid_cols"));
  if (model.grid_rows < 1 || model.grid_cols < 1)
    throw ParseError("checkpoint has invalid chessboard grid: " + path);
  {
    Record rec = take("meta.bands");
    if (static_cast<int>(rec.data.size()) != K)
      throw ParseError("meta.bands does not match band count: " + path);
    for (float v : rec.data) model.bands.push_back(static_cast<int>(v));
  }
  const bool bn_init = take_scalar("meta.bn_initialized") != 0.0f;

  if (model.patch < 1 || model.patch % 2 == 0)
    throw ParseError("checkpoint has invalid patch size: " + path);
  model.init(0);

  for (auto& [name, t] : model.named_tensors()) {
    Record rec = take(name);
    if (rec.shape != t->shape())
      throw ParseError("record '" + name + "' has shape " + shape_str(rec.shape) + ", expected " +
                       shape_str(t->shape()));
    for (int64_t i = 0; i < t->size(); ++i) t->values()(i) = rec.data[static_cast<size_t>(i)];
  }
  for (auto& [name, st] : model.named_stats()) {
    Record mean = take(name + ".running_mean");
    Record var = take(name + ".running_var");
    if (static_cast<int64_t>(mean.data.size()) != st->running_mean.size() ||
        static_cast<int64_t>(var.data.size()) != st->running_var.size())
      throw ParseError("record '" + name + "' has wrong channel count");
    for (int64_t i = 0; i < st->running_mean.size(); ++i) {
      st->running_mean(i) = mean.data[static_cast<size_t>(i)];
      st->running_var(i) = var.data[static_cast<size_t>(i)];
    }
    st->initialized = bn_init;
  }
  {
    Record rec = take("awf.alpha");
    if (static_cast<int>(rec.data.size()) != K)
      throw ParseError("awf.alpha does not match band count: " + path);
    double sum = 0.0;
    model.awf.alpha.clear();
    for (float v : rec.data) {
      if (!(v >= 0.0f)) throw ParseError("awf.alpha has a negative weight: " + path);
      model.awf.alpha.push_back(static_cast<double>(v));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-4) throw ParseError("awf.alpha does not sum to 1: " + path);
    for (double& a : model.awf.alpha) a /= sum;  // restore exact simplex after f32 round trip
    model.awf.gamma = static_cast<double>(take_scalar("awf.gamma"));
    if (!(model.awf.gamma > 1.0)) throw ParseError("awf.gamma must be > 1: " + path);
  }

  if (!records.empty())
    throw ParseError("checkpoint has unexpected record '" + records.begin()->first + "': " + path);
  return out;
}

}  // namespace mfstf
