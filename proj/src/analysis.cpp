#include "gfd/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "gfd/error.hpp"

namespace gfd {

void GlcmConfig::validate() const {
  if (levels < 2) throw Error("bad_config", "glcm.levels must be >= 2");
  if (distances.empty() || angles.empty()) {
    throw Error("bad_config", "glcm needs at least one distance and angle");
  }
  for (int d : distances) {
    if (d < 1) throw Error("bad_config", "glcm distances must be >= 1");
  }
}

GlcmOffset glcm_offset(int distance, double angle) {
  const auto dcol = static_cast<int>(std::lround(distance * std::cos(angle)));
  const auto drow = -static_cast<int>(std::lround(distance * std::sin(angle)));
  return {dcol, drow};
}

QuantizedImage quantize(std::span<const double> gray, int rows, int cols, int levels) {
  if (rows <= 0 || cols <= 0 || gray.size() != static_cast<size_t>(rows) * cols) {
    throw Error("bad_shape", "gray image size does not match rows x cols");
  }
  if (levels < 2) throw Error("bad_config", "need at least 2 gray levels");
  const auto [lo_it, hi_it] = std::minmax_element(gray.begin(), gray.end());
  const double lo = *lo_it, hi = *hi_it;
  QuantizedImage q{rows, cols, levels, std::vector<int>(gray.size(), 0)};
  if (!(hi > lo)) return q;
  const double scale = levels / (hi - lo);
  for (size_t i = 0; i < gray.size(); ++i) {
    q.values[i] = std::min(levels - 1, static_cast<int>((gray[i] - lo) * scale));
  }
  return q;
}

GlcmMatrix glcm(const QuantizedImage& image, int distance, double angle, bool symmetric) {
  const auto off = glcm_offset(distance, angle);
  if (std::abs(off.drow) >= image.rows || std::abs(off.dcol) >= image.cols) {
    throw Error("image_too_small", "image is smaller than the GLCM offset");
  }
  const int L = image.levels;
  GlcmMatrix m{L, std::vector<double>(static_cast<size_t>(L) * L, 0.0)};
  const int r0 = std::max(0, -off.drow), r1 = std::min(image.rows, image.rows - off.drow);
  const int c0 = std::max(0, -off.dcol), c1 = std::min(image.cols, image.cols - off.dcol);
  std::vector<int64_t> counts(m.p.size(), 0);
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      const int a = image.at(r, c), b = image.at(r + off.drow, c + off.dcol);
      ++counts[static_cast<size_t>(a) * L + b];
      if (symmetric) ++counts[static_cast<size_t>(b) * L + a];
    }
  }
  int64_t total = 0;
  for (auto n : counts) total += n;
  for (size_t i = 0; i < counts.size(); ++i) {
    m.p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return m;
}

double glcm_correlation(const GlcmMatrix& m) {
  const int L = m.levels;
  double mu_i = 0, mu_j = 0;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      mu_i += i * m.at(i, j);
      mu_j += j * m.at(i, j);
    }
  }
  double var_i = 0, var_j = 0, cov = 0;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      const double p = m.at(i, j);
      var_i += (i - mu_i) * (i - mu_i) * p;
      var_j += (j - mu_j) * (j - mu_j) * p;
      cov += (i - mu_i) * (j - mu_j) * p;
    }
  }
  const double denom = std::sqrt(var_i) * std::sqrt(var_j);
  if (!(denom > 1e-12)) throw Error("zero_variance", "zero variance in GLCM marginals");
  return std::clamp(cov / denom, -1.0, 1.0);
}

std::vector<double> fingerprint_correlation_vector(const Fingerprint& fp, const GlcmConfig& config) {
  config.validate();
  auto gray = fp.residual().to(torch::kFloat64).mean(0).contiguous();
  const int rows = static_cast<int>(gray.size(0)), cols = static_cast<int>(gray.size(1));
  std::span<const double> values(gray.data_ptr<double>(), static_cast<size_t>(gray.numel()));
  const auto q = quantize(values, rows, cols, config.levels);
  std::vector<double> out;
  out.reserve(config.vector_size());
  for (int d : config.distances) {
    for (double theta : config.angles) {
      out.push_back(glcm_correlation(glcm(q, d, theta, config.symmetric)));
    }
  }
  return out;
}

PopulationStats population_stats(const std::vector<std::vector<double>>& vectors) {
  PopulationStats s;
  if (vectors.empty()) return s;
  const size_t dim = vectors.front().size();
  s.mean.assign(dim, 0.0);
  s.variance.assign(dim, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != dim) throw Error("bad_shape", "correlation vectors differ in length");
    for (size_t k = 0; k < dim; ++k) s.mean[k] += v[k];
  }
  const double n = static_cast<double>(vectors.size());
  for (auto& m : s.mean) m /= n;
  for (const auto& v : vectors) {
    for (size_t k = 0; k < dim; ++k) s.variance[k] += (v[k] - s.mean[k]) * (v[k] - s.mean[k]);
  }
  for (auto& var : s.variance) var /= n;
  s.count = static_cast<int64_t>(vectors.size());
  return s;
}

PopulationStats population_stats(const std::vector<Fingerprint>& fps, const GlcmConfig& config) {
  std::vector<std::vector<double>> vectors;
  int64_t skipped = 0;
  for (const auto& fp : fps) {
    try {
      vectors.push_back(fingerprint_correlation_vector(fp, config));
    } catch (const Error& e) {
      if (e.code() != "zero_variance") throw;
      ++skipped;
    }
  }
  auto s = population_stats(vectors);
  if (s.mean.empty()) {
    s.mean.assign(config.vector_size(), 0.0);
    s.variance.assign(config.vector_size(), 0.0);
  }
  s.skipped = skipped;
  return s;
}

std::vector<std::string> correlation_vector_labels(const GlcmConfig& config) {
  std::vector<std::string> out;
  for (int d : config.distances) {
    for (double theta : config.angles) {
      // angle in units of pi/4 when it is one, radians otherwise
      const double quarter = theta / (M_PI / 4);
      std::string t = std::abs(quarter - std::round(quarter)) < 1e-9
                          ? std::to_string(static_cast<int>(std::round(quarter))) + "pi/4"
                          : std::to_string(theta);
      out.push_back("C_d" + std::to_string(d) + "_t" + t);
    }
  }
  return out;
}

}  // namespace gfd
