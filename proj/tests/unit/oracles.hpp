#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "gfd/analysis.hpp"
#include "gfd/data_model.hpp"

namespace testing {

inline gfd::QuantizedImage random_quantized(std::mt19937_64& rng, int rows, int cols, int levels) {
  std::uniform_int_distribution<int> pick(0, levels - 1);
  gfd::QuantizedImage q{rows, cols, levels, std::vector<int>(static_cast<size_t>(rows) * cols)};
  for (auto& v : q.values) v = pick(rng);
  return q;
}

// Pair counting written out longhand: every pixel (r, c) whose partner at
// (r + dr, c + dc) lies inside the image contributes one count.
inline std::vector<double> brute_force_glcm(const gfd::QuantizedImage& q, int dr, int dc, bool symmetric) {
  const int L = q.levels;
  std::vector<long> counts(static_cast<size_t>(L) * L, 0);
  long total = 0;
  for (int r = 0; r < q.rows; ++r) {
    for (int c = 0; c < q.cols; ++c) {
      const int r2 = r + dr, c2 = c + dc;
      if (r2 < 0 || r2 >= q.rows || c2 < 0 || c2 >= q.cols) continue;
      const int a = q.values[static_cast<size_t>(r) * q.cols + c];
      const int b = q.values[static_cast<size_t>(r2) * q.cols + c2];
      counts[static_cast<size_t>(a) * L + b] += 1;
      total += 1;
      if (symmetric) {
        counts[static_cast<size_t>(b) * L + a] += 1;
        total += 1;
      }
    }
  }
  std::vector<double> p(counts.size());
  for (size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return p;
}

inline gfd::Fingerprint stripes(int size, bool horizontal, int period) {
  auto t = torch::zeros({3, size, size}, torch::kFloat64);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const int k = horizontal ? r : c;
      t.index_put_({torch::indexing::Slice(), r, c}, std::sin(2 * M_PI * k / period));
    }
  }
  return gfd::Fingerprint(t);
}

}  // namespace testing
