#include "mfstf/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace mfstf {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  check(classes >= 1, "ConfusionMatrix: need at least one class");
  counts_.assign(static_cast<size_t>(classes) * classes, 0);
}

int64_t ConfusionMatrix::at(int truth, int pred) const {
  check(truth >= 1 && truth <= classes_ && pred >= 1 && pred <= classes_,
        "ConfusionMatrix::at: class out of range");
  return counts_[static_cast<size_t>(truth - 1) * classes_ + (pred - 1)];
}

void ConfusionMatrix::add(int truth, int pred, int64_t count) {
  check(truth >= 1 && truth <= classes_, "ConfusionMatrix::add: truth class out of range");
  check(pred >= 1 && pred <= classes_, "ConfusionMatrix::add: predicted class out of range");
  check(count >= 0, "ConfusionMatrix::add: negative count");
  counts_[static_cast<size_t>(truth - 1) * classes_ + (pred - 1)] += count;
  total_ += count;
}

void ConfusionMatrix::accumulate(std::span<const uint16_t> truth,
                                 std::span<const uint16_t> pred) {
  check(truth.size() == pred.size(), "accumulate: raster sizes differ");
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 0) continue;
    check(truth[i] <= classes_, "accumulate: truth class " + std::to_string(truth[i]) +
                                    " exceeds class count " + std::to_string(classes_));
    check(pred[i] >= 1 && pred[i] <= classes_,
          "accumulate: prediction class " + std::to_string(pred[i]) + " outside 1.." +
              std::to_string(classes_));
    counts_[static_cast<size_t>(truth[i] - 1) * classes_ + (pred[i] - 1)] += 1;
    ++total_;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  check(classes_ == other.classes_, "merge: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  check(cm.total() > 0, "compute_metrics: no labeled pixels");
  const int C = cm.classes();
  const double total = static_cast<double>(cm.total());

  Metrics m;
  m.per_class.assign(static_cast<size_t>(C), std::numeric_limits<double>::quiet_NaN());
  double trace = 0.0, pe = 0.0, aa_sum = 0.0;
  int aa_count = 0;
  for (int c = 1; c <= C; ++c) {
    int64_t row = 0, col = 0;
    for (int j = 1; j <= C; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    trace += static_cast<double>(cm.at(c, c));
    pe += static_cast<double>(row) * static_cast<double>(col) / (total * total);
    if (row > 0) {
      m.per_class[static_cast<size_t>(c - 1)] =
          static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
      aa_sum += m.per_class[static_cast<size_t>(c - 1)];
      ++aa_count;
    }
  }
  m.oa = trace / total;
  m.aa = aa_count > 0 ? aa_sum / aa_count : 0.0;
  if (std::abs(1.0 - pe) < 1e-15) {
    // Agreement by chance only: kappa degenerates; diagonal matrices still
    // score perfect agreement.
    m.kappa = std::abs(m.oa - 1.0) < 1e-15 ? 1.0 : 0.0;
  } else {
    m.kappa = (m.oa - pe) / (1.0 - pe);
  }
  return m;
}

std::vector<Color> default_palette(int classes) {
  check(classes >= 1, "default_palette: need at least one class");
  static const std::array<Color, 12> base = {{{31, 119, 180},
                                              {255, 127, 14},
                                              {44, 160, 44},
                                              {214, 39, 40},
                                              {148, 103, 189},
                                              {140, 86, 75},
                                              {227, 119, 194},
                                              {127, 127, 127},
                                              {188, 189, 34},
                                              {23, 190, 207},
                                              {174, 199, 232},
                                              {255, 187, 120}}};
  std::vector<Color> palette;
  palette.push_back({0, 0, 0});  // unlabeled
  for (int c = 0; c < classes; ++c) {
    Color col = base[static_cast<size_t>(c % 12)];
    const int shade = c / 12;
    for (auto& ch : col) ch = static_cast<uint8_t>(ch / (1 + shade));
    palette.push_back(col);
  }
  return palette;
}

void render_map(std::span<const uint16_t> raster, int height, int width,
                std::span<const Color> palette, const std::string& path) {
  check(raster.size() == static_cast<size_t>(height) * static_cast<size_t>(width),
        "render_map: raster size mismatch");
  for (uint16_t v : raster)
    check(v < palette.size(), "render_map: class " + std::to_string(v) + " has no palette entry");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(width) * 3);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Color& col = palette[raster[static_cast<size_t>(r) * width + c]];
      row[static_cast<size_t>(c) * 3 + 0] = col[0];
      row[static_cast<size_t>(c) * 3 + 1] = col[1];
      row[static_cast<size_t>(c) * 3 + 2] = col[2];
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw ParseError("write failed: " + path);
}

}  // namespace mfstf
