#include "mfstf/polsar.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace mfstf {

std::array<double, 9> coherency_to_vector(const CoherencyMatrix& T, double tol) {
  const double dev = (T - T.adjoint()).cwiseAbs().maxCoeff();
  check(dev <= tol, "coherency_to_vector: matrix is not Hermitian (deviation " +
                        std::to_string(dev) + ")");
  return {T(0, 0).real(), T(1, 1).real(), T(2, 2).real(),
          T(0, 1).real(), T(0, 2).real(), T(1, 2).real(),
          T(0, 1).imag(), T(0, 2).imag(), T(1, 2).imag()};
}

namespace {

CoherencyMatrix from_lower(std::complex<double> l11, std::complex<double> l21,
                           std::complex<double> l22, std::complex<double> l31,
                           std::complex<double> l32, std::complex<double> l33) {
  CoherencyMatrix L = CoherencyMatrix::Zero();
  L(0, 0) = l11;
  L(1, 0) = l21;
  L(1, 1) = l22;
  L(2, 0) = l31;
  L(2, 1) = l32;
  L(2, 2) = l33;
  return L * L.adjoint();
}

// Six scattering archetypes, all PSD by construction.
const std::array<CoherencyMatrix, 6>& archetypes() {
  using C = std::complex<double>;
  static const std::array<CoherencyMatrix, 6> a = {
      from_lower(C(1.40), C(0.45, 0.28), C(0.55), C(0.10, -0.05), C(0.08, 0.12), C(0.30)),
      from_lower(C(0.65), C(-0.40, 0.35), C(1.15), C(0.05, 0.02), C(0.22, -0.18), C(0.40)),
      from_lower(C(0.95), C(0.10, 0.08), C(0.80), C(0.15, 0.10), C(0.12, -0.09), C(0.70)),
      from_lower(C(1.70), C(0.60, -0.40), C(0.90), C(0.25, 0.15), C(0.30, 0.22), C(0.55)),
      from_lower(C(0.40), C(0.06, 0.04), C(0.30), C(0.02, -0.03), C(0.05, 0.02), C(0.20)),
      from_lower(C(1.10), C(-0.25, -0.30), C(0.70), C(0.18, -0.06), C(-0.15, 0.10), C(0.45)),
  };
  return a;
}

}  // namespace

std::vector<std::vector<CoherencyMatrix>> default_signature_table(int bands, int classes) {
  check(bands >= 1 && classes >= 2, "default_signature_table: need bands >= 1, classes >= 2");
  const auto& arch = archetypes();
  std::vector<std::vector<CoherencyMatrix>> table(static_cast<size_t>(bands));
  for (int b = 0; b < bands; ++b) {
    table[static_cast<size_t>(b)].resize(static_cast<size_t>(classes));
    for (int c = 0; c < classes; ++c) {
      int j;
      if (b == 0) {
        j = (c == 3) ? 2 : c % 6;  // classes 3 and 4 coincide in the first band
      } else if (b == 1) {
        j = (c == 1) ? 3 : (c + 3) % 6;  // classes 1 and 2 coincide in the second band
      } else {
        j = (c + 2 * b) % 6;
      }
      const double gain = 1.0 + 0.4 * (c / 6);  // keeps classes beyond six archetypes apart
      table[static_cast<size_t>(b)][static_cast<size_t>(c)] = gain * arch[static_cast<size_t>(j)];
    }
  }
  return table;
}

PolSarCube generate_synthetic_scene(const SceneConfig& cfg) {
  check(cfg.classes >= 2, "generate_synthetic_scene: need at least 2 classes");
  check(cfg.bands >= 2, "generate_synthetic_scene: need at least 2 bands");
  check(cfg.height >= 1 && cfg.width >= 1, "generate_synthetic_scene: empty scene");
  check(cfg.looks >= 1, "generate_synthetic_scene: looks must be >= 1");

  const auto table = cfg.signatures.empty() ? default_signature_table(cfg.bands, cfg.classes)
                                            : cfg.signatures;
  check(static_cast<int>(table.size()) == cfg.bands,
        "generate_synthetic_scene: signature table has wrong band count");
  for (const auto& row : table)
    check(static_cast<int>(row.size()) == cfg.classes,
          "generate_synthetic_scene: signature table has wrong class count");

  // Factor every base matrix: A A^H = T. Rejects non-PSD inputs.
  std::vector<std::vector<CoherencyMatrix>> factors(table.size());
  for (size_t b = 0; b < table.size(); ++b) {
    factors[b].resize(table[b].size());
    for (size_t c = 0; c < table[b].size(); ++c) {
      const CoherencyMatrix& T = table[b][c];
      check((T - T.adjoint()).cwiseAbs().maxCoeff() <= 1e-9,
            "generate_synthetic_scene: base matrix (band " + std::to_string(b + 1) + ", class " +
                std::to_string(c + 1) + ") is not Hermitian");
      Eigen::SelfAdjointEigenSolver<CoherencyMatrix> es(T);
      const double lmax = std::max(1.0, es.eigenvalues().maxCoeff());
      check(es.eigenvalues().minCoeff() >= -1e-9 * lmax,
            "generate_synthetic_scene: base matrix (band " + std::to_string(b + 1) + ", class " +
                std::to_string(c + 1) + ") is not positive semidefinite");
      Eigen::Vector3d lam = es.eigenvalues().cwiseMax(0.0);
      factors[b][c] = es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
    }
  }

  PolSarCube cube;
  cube.bands = cfg.bands;
  cube.height = cfg.height;
  cube.width = cfg.width;
  cube.classes = cfg.classes;
  const int64_t hw = static_cast<int64_t>(cfg.height) * cfg.width;
  cube.features.assign(static_cast<size_t>(cfg.bands), std::vector<float>(9 * hw));
  cube.labels.resize(static_cast<size_t>(hw));

  Rng rng(cfg.seed);

  // Labeled polygonal regions: Voronoi cells of random sites, classes assigned
  // round-robin so every class appears in several cells.
  const int n_sites = std::max(cfg.classes, cfg.sites_per_class * cfg.classes);
  std::vector<std::array<int, 3>> sites;  // row, col, class
  sites.reserve(static_cast<size_t>(n_sites));
  for (int i = 0; i < n_sites; ++i)
    sites.push_back({rng.uniform_int(cfg.height), rng.uniform_int(cfg.width),
                     i % cfg.classes + 1});
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      int64_t best = INT64_MAX;
      int cls = 1;
      for (const auto& s : sites) {
        const int64_t dr = r - s[0], dc = c - s[1];
        const int64_t d = dr * dr + dc * dc;
        if (d < best) {
          best = d;
          cls = s[2];
        }
      }
      cube.labels[static_cast<size_t>(r) * cfg.width + c] = static_cast<uint16_t>(cls);
    }
  }

  // Multi-look speckle: T = (1/L) sum of u u^H with u = A z, z circular
  // complex Gaussian. E[T] equals the base matrix.
  Eigen::Vector3cd z, u;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      const int cls = cube.labels[static_cast<size_t>(r) * cfg.width + c] - 1;
      for (int b = 0; b < cfg.bands; ++b) {
        const CoherencyMatrix& A = factors[static_cast<size_t>(b)][static_cast<size_t>(cls)];
        CoherencyMatrix acc = CoherencyMatrix::Zero();
        for (int l = 0; l < cfg.looks; ++l) {
          for (int j = 0; j < 3; ++j)
            z(j) = std::complex<double>(rng.normal() * inv_sqrt2, rng.normal() * inv_sqrt2);
          u.noalias() = A * z;
          acc.noalias() += u * u.adjoint();
        }
        acc /= static_cast<double>(cfg.looks);
        const auto v = coherency_to_vector(acc, 1e-8);
        auto& band = cube.features[static_cast<size_t>(b)];
        for (int ch = 0; ch < 9; ++ch)
          band[(static_cast<int64_t>(ch) * cfg.height + r) * cfg.width + c] =
              static_cast<float>(v[static_cast<size_t>(ch)]);
      }
    }
  }
  return cube;
}

ChessboardSplit chessboard_partition(int H, int W, int grid_rows, int grid_cols) {
  check(H >= 1 && W >= 1, "chessboard_partition: empty image");
  check(grid_rows >= 1 && grid_cols >= 1, "chessboard_partition: empty grid");
  check(grid_rows <= H && grid_cols <= W,
        "chessboard_partition: grid " + std::to_string(grid_rows) + "x" +
            std::to_string(grid_cols) + " larger than image " + std::to_string(H) + "x" +
            std::to_string(W));

  ChessboardSplit split;
  split.height = H;
  split.width = W;
  split.grid_rows = grid_rows;
  split.grid_cols = grid_cols;
  split.tile_parity.resize(static_cast<size_t>(grid_rows) * grid_cols);
  for (int tr = 0; tr < grid_rows; ++tr)
    for (int tc = 0; tc < grid_cols; ++tc)
      split.tile_parity[static_cast<size_t>(tr) * grid_cols + tc] =
          static_cast<uint8_t>((tr + tc) % 2);

  const int th = H / grid_rows, tw = W / grid_cols;
  split.part.resize(static_cast<size_t>(H) * W);
  for (int r = 0; r < H; ++r) {
    const int tr = std::min(r / th, grid_rows - 1);
    for (int c = 0; c < W; ++c) {
      const int tc = std::min(c / tw, grid_cols - 1);
      const uint8_t p = split.tile_parity[static_cast<size_t>(tr) * grid_cols + tc];
      split.part[static_cast<size_t>(r) * W + c] = p;
      split.pixels[p].push_back(static_cast<int64_t>(r) * W + c);
    }
  }
  return split;
}

SampleSet draw_training_samples(const PolSarCube& cube, const ChessboardSplit& split, int part,
                                int per_class_count, uint64_t seed, int patch) {
  check(part == 0 || part == 1, "draw_training_samples: part must be 0 or 1");
  check(per_class_count >= 1, "draw_training_samples: per_class_count must be >= 1");
  check(split.height == cube.height && split.width == cube.width,
        "draw_training_samples: split does not match cube dimensions");

  Rng rng(seed);
  SampleSet out;
  out.patch = patch;
  std::vector<int64_t> eligible;
  for (int cls = 1; cls <= cube.classes; ++cls) {
    eligible.clear();
    for (int64_t px : split.pixels[static_cast<size_t>(part)]) {
      if (cube.labels[static_cast<size_t>(px)] == cls) eligible.push_back(px);
    }
    check(static_cast<int>(eligible.size()) >= per_class_count,
          "draw_training_samples: class " + std::to_string(cls) + " has only " +
              std::to_string(eligible.size()) + " labeled pixels in the part, requested " +
              std::to_string(per_class_count));
    for (int i = 0; i < per_class_count; ++i) {
      const int j = i + rng.uniform_int(static_cast<int>(eligible.size()) - i);
      std::swap(eligible[static_cast<size_t>(i)], eligible[static_cast<size_t>(j)]);
      const int64_t px = eligible[static_cast<size_t>(i)];
      out.anchors.push_back({static_cast<int>(px / cube.width),
                             static_cast<int>(px % cube.width), static_cast<uint16_t>(cls)});
    }
  }
  return out;
}

namespace {
inline int mirror_index(int t, int n) {
  while (t < 0 || t >= n) {
    if (t < 0) t = -t - 1;
    if (t >= n) t = 2 * n - t - 1;
  }
  return t;
}
}  // namespace

void extract_patch(const PolSarCube& cube, int band, int row, int col, int n, float* dst) {
  check(band >= 0 && band < cube.bands, "extract_patch: band out of range");
  check(n >= 1 && n % 2 == 1, "extract_patch: patch size must be odd");
  const int h = n / 2;
  const auto& f = cube.features[static_cast<size_t>(band)];
  for (int ch = 0; ch < 9; ++ch) {
    for (int i = 0; i < n; ++i) {
      const int sr = mirror_index(row - h + i, cube.height);
      const float* src = f.data() + (static_cast<int64_t>(ch) * cube.height + sr) * cube.width;
      float* d = dst + (static_cast<int64_t>(ch) * n + i) * n;
      for (int j = 0; j < n; ++j) d[j] = src[mirror_index(col - h + j, cube.width)];
    }
  }
}

std::vector<float> extract_patch(const PolSarCube& cube, int band, int row, int col, int n) {
  std::vector<float> buf(static_cast<size_t>(9) * n * n);
  extract_patch(cube, band, row, col, n, buf.data());
  return buf;
}

void augment_patch(const float* src, float* dst, int channels, int n, Augment mode) {
  auto at = [n](const float* p, int i, int j) { return p[i * n + j]; };
  for (int ch = 0; ch < channels; ++ch) {
    const float* s = src + static_cast<int64_t>(ch) * n * n;
    float* d = dst + static_cast<int64_t>(ch) * n * n;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        float v;
        switch (mode) {
          case Augment::identity: v = at(s, i, j); break;
          case Augment::hflip: v = at(s, i, n - 1 - j); break;
          case Augment::vflip: v = at(s, n - 1 - i, j); break;
          case Augment::rot90: v = at(s, j, n - 1 - i); break;
          case Augment::rot180: v = at(s, n - 1 - i, n - 1 - j); break;
          case Augment::rot270: v = at(s, n - 1 - j, i); break;
          default: throw ContractError("augment_patch: unknown mode");
        }
        d[i * n + j] = v;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Binary formats
// ---------------------------------------------------------------------------

namespace {

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw ParseError("cannot open for writing: " + path);
    path_ = path;
  }
  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw ParseError("write failed: " + path_);
  }
  void u32(uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void u16(uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
  }
  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

 private:
  std::ofstream out_;
  std::string path_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw ParseError("cannot open: " + path);
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      throw ParseError("truncated file: " + path_);
  }
  uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
  }
  uint16_t u16() {
    unsigned char b[2];
    bytes(b, 2);
    return static_cast<uint16_t>(b[0] | b[1] << 8);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace

void write_cube(const PolSarCube& cube, const std::string& path) {
  check(static_cast<int>(cube.features.size()) == cube.bands, "write_cube: band count mismatch");
  const int64_t hw = static_cast<int64_t>(cube.height) * cube.width;
  ByteWriter w(path);
  w.bytes("MFPC", 4);
  w.u32(1);
  w.u32(static_cast<uint32_t>(cube.bands));
  w.u32(static_cast<uint32_t>(cube.height));
  w.u32(static_cast<uint32_t>(cube.width));
  w.u32(static_cast<uint32_t>(cube.classes));
  for (const auto& band : cube.features) {
    check(static_cast<int64_t>(band.size()) == 9 * hw, "write_cube: band raster size mismatch");
    for (float v : band) w.f32(v);
  }
  check(static_cast<int64_t>(cube.labels.size()) == hw, "write_cube: label raster size mismatch");
  for (uint16_t v : cube.labels) w.u16(v);
}

PolSarCube read_cube(const std::string& path) {
  ByteReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MFPC", 4) != 0) throw ParseError("bad magic, not an MFPC cube: " + path);
  const uint32_t version = r.u32();
  if (version != 1) throw ParseError("unsupported MFPC version " + std::to_string(version));
  PolSarCube cube;
  cube.bands = static_cast<int>(r.u32());
  cube.height = static_cast<int>(r.u32());
  cube.width = static_cast<int>(r.u32());
  cube.classes = static_cast<int>(r.u32());
  if (cube.bands < 1 || cube.height < 1 || cube.width < 1 || cube.classes < 1)
    throw ParseError("MFPC header has empty dimensions: " + path);
  const int64_t hw = static_cast<int64_t>(cube.height) * cube.width;
  if (hw > (int64_t(1) << 31) / (9 * cube.bands))
    throw ParseError("MFPC header dimension overflow: " + path);
  cube.features.assign(static_cast<size_t>(cube.bands), std::vector<float>(9 * hw));
  for (auto& band : cube.features)
    for (auto& v : band) v = r.f32();
  cube.labels.resize(static_cast<size_t>(hw));
  for (auto& v : cube.labels) {
    v = r.u16();
    if (v > cube.classes)
      throw ParseError("MFPC label " + std::to_string(v) + " exceeds class count " +
                       std::to_string(cube.classes));
  }
  return cube;
}

void write_label_raster(const std::string& path, int height, int width,
                        const std::vector<uint16_t>& labels) {
  check(static_cast<int64_t>(labels.size()) == static_cast<int64_t>(height) * width,
        "write_label_raster: raster size mismatch");
  ByteWriter w(path);
  w.bytes("MFLB", 4);
  w.u32(static_cast<uint32_t>(height));
  w.u32(static_cast<uint32_t>(width));
  for (uint16_t v : labels) w.u16(v);
}

std::vector<uint16_t> read_label_raster(const std::string& path, int& height, int& width) {
  ByteReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MFLB", 4) != 0)
    throw ParseError("bad magic, not an MFLB raster: " + path);
  height = static_cast<int>(r.u32());
  width = static_cast<int>(r.u32());
  if (height < 1 || width < 1 || static_cast<int64_t>(height) * width > (int64_t(1) << 32))
    throw ParseError("MFLB header dimension overflow: " + path);
  std::vector<uint16_t> labels(static_cast<size_t>(height) * static_cast<size_t>(width));
  for (auto& v : labels) v = r.u16();
  return labels;
}

}  // namespace mfstf
