#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gfd/data_model.hpp"

namespace gfd {

struct GlcmConfig {
  std::vector<int> distances = {2, 4, 8, 16};
  std::vector<double> angles = {0.0, M_PI / 4, M_PI / 2, 3 * M_PI / 4};
  int levels = 64;
  bool symmetric = true;

  void validate() const;
  size_t vector_size() const { return distances.size() * angles.size(); }
};

/// Pixel displacement for (d, theta): col += round(d cos theta),
/// row -= round(d sin theta). Rows grow downward.
struct GlcmOffset {
  int dcol = 0;
  int drow = 0;
  bool operator==(const GlcmOffset&) const = default;
};

GlcmOffset glcm_offset(int distance, double angle);

/// Gray image quantized to [0, levels).
struct QuantizedImage {
  int rows = 0;
  int cols = 0;
  int levels = 0;
  std::vector<int> values;  // row-major

  int at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
};

/// Uniform binning of [min, max] into `levels` bins; a constant image maps to 0.
QuantizedImage quantize(std::span<const double> gray, int rows, int cols, int levels);

struct GlcmMatrix {
  int levels = 0;
  std::vector<double> p;  // row-major levels x levels, sums to 1

  double at(int i, int j) const { return p[static_cast<size_t>(i) * levels + j]; }
};

GlcmMatrix glcm(const QuantizedImage& image, int distance, double angle, bool symmetric);

/// Pearson correlation of the joint gray-level distribution. Throws
/// "zero_variance" when a marginal is degenerate.
double glcm_correlation(const GlcmMatrix& matrix);

/// Channel-mean gray map of the fingerprint, quantized, then one correlation
/// per (distance, angle), distance-major.
std::vector<double> fingerprint_correlation_vector(const Fingerprint& fp, const GlcmConfig& config);

struct PopulationStats {
  std::vector<double> mean;
  std::vector<double> variance;  // population variance (divide by n)
  int64_t count = 0;
  int64_t skipped = 0;  // degenerate fingerprints
};

PopulationStats population_stats(const std::vector<Fingerprint>& fps, const GlcmConfig& config);
PopulationStats population_stats(const std::vector<std::vector<double>>& vectors);

/// Column labels for a correlation vector, e.g. "C_d2_t0".
std::vector<std::string> correlation_vector_labels(const GlcmConfig& config);

}  // namespace gfd
