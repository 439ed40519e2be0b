#pragma once

// PolSAR data layer: coherency-matrix features, the multi-band cube container
// and its file formats, a synthetic multi-look scene generator, chessboard
// partitioning, training-sample selection, patch extraction and augmentation.

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mfstf/common.hpp"

namespace mfstf {

using CoherencyMatrix = Eigen::Matrix3cd;

/// Upper-triangle expansion of a Hermitian coherency matrix:
/// [T11, T22, T33, Re T12, Re T13, Re T23, Im T12, Im T13, Im T23].
std::array<double, 9> coherency_to_vector(const CoherencyMatrix& T, double tol = 1e-10);

/// Multi-band raster of 9-channel coherency features plus a label raster.
/// Feature storage is channel-major per band: feature index (ch*H + r)*W + c.
struct PolSarCube {
  int bands = 0;
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<std::vector<float>> features;  // bands x (9*H*W)
  std::vector<uint16_t> labels;              // H*W, 0 = unlabeled

  float feature(int band, int ch, int r, int c) const {
    return features[static_cast<size_t>(band)]
                   [(static_cast<int64_t>(ch) * height + r) * width + c];
  }
  uint16_t label(int r, int c) const {
    return labels[static_cast<size_t>(r) * static_cast<size_t>(width) + static_cast<size_t>(c)];
  }
};

struct SceneConfig {
  int classes = 5;
  int bands = 2;
  int height = 200;
  int width = 200;
  int looks = 4;
  uint64_t seed = 7;
  int sites_per_class = 8;  // Voronoi sites per class
  // signatures[band][class]: Hermitian PSD base coherency matrix.
  // Empty selects the default table.
  std::vector<std::vector<CoherencyMatrix>> signatures;
};

/// Default per-(band, class) base matrices. Classes 3 and 4 share a matrix in
/// band 1 and classes 1 and 2 share a matrix in band 2 (when C >= 4), so each
/// of those pairs is separable in exactly one band.
std::vector<std::vector<CoherencyMatrix>> default_signature_table(int bands, int classes);

/// Deterministic synthetic scene: a Voronoi patchwork of labeled regions;
/// each pixel is an L-look sample covariance of complex Gaussian scattering
/// vectors drawn from its class-band base matrix.
PolSarCube generate_synthetic_scene(const SceneConfig& cfg);

/// Checkerboard tile partition of the image into two pixel-disjoint,
/// jointly exhaustive parts. Part 0 ("black") contains tile (0,0).
struct ChessboardSplit {
  int height = 0, width = 0;
  int grid_rows = 0, grid_cols = 0;
  std::vector<uint8_t> tile_parity;           // grid_rows*grid_cols
  std::vector<uint8_t> part;                  // per pixel, 0 or 1
  std::array<std::vector<int64_t>, 2> pixels;  // pixel indices (r*W + c) per part

  int part_of(int r, int c) const {
    return part[static_cast<size_t>(r) * static_cast<size_t>(width) + static_cast<size_t>(c)];
  }
};

/// Remainder rows/columns under non-divisible grids fold into the last tiles.
ChessboardSplit chessboard_partition(int H, int W, int grid_rows, int grid_cols);

struct Anchor {
  int row = 0, col = 0;
  uint16_t label = 0;  // 1..C
};

struct SampleSet {
  std::vector<Anchor> anchors;
  int patch = 13;
};

/// Per-class uniform selection without replacement from the labeled pixels of
/// the given part. Deterministic for a fixed seed.
SampleSet draw_training_samples(const PolSarCube& cube, const ChessboardSplit& split, int part,
                                int per_class_count, uint64_t seed, int patch = 13);

/// n x n patch of one band's 9-channel raster centered at (row, col), with
/// mirror padding at the borders. dst must hold 9*n*n floats laid out
/// channel-major.
void extract_patch(const PolSarCube& cube, int band, int row, int col, int n, float* dst);
std::vector<float> extract_patch(const PolSarCube& cube, int band, int row, int col, int n);

enum class Augment { identity, hflip, vflip, rot90, rot180, rot270 };
inline constexpr std::array<Augment, 6> kAllAugments = {
    Augment::identity, Augment::hflip, Augment::vflip,
    Augment::rot90,    Augment::rot180, Augment::rot270};

/// Applies one spatial transform to a channels x n x n patch.
void augment_patch(const float* src, float* dst, int channels, int n, Augment mode);

// MFPC cube file and MFLB label raster formats (little endian throughout).
PolSarCube read_cube(const std::string& path);
void write_cube(const PolSarCube& cube, const std::string& path);

std::vector<uint16_t> read_label_raster(const std::string& path, int& height, int& width);
void write_label_raster(const std::string& path, int height, int width,
                        const std::vector<uint16_t>& labels);

}  // namespace mfstf
