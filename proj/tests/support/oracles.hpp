#ifndef HLI_TESTS_ORACLES_HPP_
#define HLI_TESTS_ORACLES_HPP_

// Reference implementations written independently of the library, used as
// oracles by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "hli/aulm.hpp"
#include "hli/model.hpp"
#include "hli/tensor.hpp"

namespace oracle {

using hli::Matrix;

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

// Euclidean distance between the unit-scaled rows a and b.
inline double unit_distance(const Matrix& e, int a, int b) {
  double na = 0, nb = 0;
  for (int k = 0; k < e.cols(); ++k) {
    na += e(a, k) * e(a, k);
    nb += e(b, k) * e(b, k);
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  double s = 0;
  for (int k = 0; k < e.cols(); ++k) {
    const double d = e(a, k) / na - e(b, k) / nb;
    s += d * d;
  }
  return std::sqrt(s);
}

struct Metrics {
  double mean_ap = 0;
  std::vector<double> cmc;  // cmc[k-1]
  int skipped = 0;
};

// Expected mAP of a uniformly random ranking under the same gallery rules
// as retrieval(): a query with R relevant items among G candidates scores
// (1/G) * ((R-1)/(G-1) * (G - H_G) + H_G) on average, H_G the G-th harmonic
// number. Queries without a relevant item are skipped.
inline double chance_map(const std::vector<int>& ids, const std::vector<int>& cams) {
  const int n = static_cast<int>(ids.size());
  double total = 0;
  int used = 0;
  for (int q = 0; q < n; ++q) {
    int g = 0, r = 0;
    for (int j = 0; j < n; ++j) {
      if (j == q || (ids[j] == ids[q] && cams[j] == cams[q])) continue;
      ++g;
      if (ids[j] == ids[q]) ++r;
    }
    if (r == 0) continue;
    double h = 0;
    for (int k = 1; k <= g; ++k) h += 1.0 / k;
    total += g == 1 ? 1.0 : (static_cast<double>(r - 1) / (g - 1) * (g - h) + h) / g;
    ++used;
  }
  return total / used;
}

// Rank of each gallery item = 1 + number of items strictly closer + number
// of equally close items with a smaller index. AP and CMC are then read off
// those ranks without sorting.
inline Metrics retrieval(const Matrix& emb, const std::vector<int>& ids, const std::vector<int>& cams) {
  const int n = static_cast<int>(emb.rows());
  Metrics out;
  out.cmc.assign(static_cast<std::size_t>(n - 1), 0.0);
  std::vector<int> first_hit_ranks;
  double ap_sum = 0;
  for (int q = 0; q < n; ++q) {
    std::vector<int> gallery;
    for (int j = 0; j < n; ++j) {
      if (j == q || (ids[j] == ids[q] && cams[j] == cams[q])) continue;
      gallery.push_back(j);
    }
    std::vector<double> dist(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) dist[g] = unit_distance(emb, q, gallery[g]);
    std::vector<int> relevant_ranks;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (ids[gallery[g]] != ids[q]) continue;
      int rank = 1;
      for (std::size_t h = 0; h < gallery.size(); ++h) {
        if (dist[h] < dist[g] || (dist[h] == dist[g] && h < g)) ++rank;
      }
      relevant_ranks.push_back(rank);
    }
    if (relevant_ranks.empty()) {
      ++out.skipped;
      continue;
    }
    double ap = 0;
    for (int r : relevant_ranks) {
      int hits_up_to = 0;
      for (int s : relevant_ranks) hits_up_to += s <= r;
      ap += static_cast<double>(hits_up_to) / r;
    }
    ap_sum += ap / static_cast<double>(relevant_ranks.size());
    first_hit_ranks.push_back(*std::min_element(relevant_ranks.begin(), relevant_ranks.end()));
  }
  const double nq = static_cast<double>(first_hit_ranks.size());
  out.mean_ap = nq > 0 ? ap_sum / nq : 0.0;
  for (int k = 1; k < n; ++k) {
    int c = 0;
    for (int r : first_hit_ranks) c += r <= k;
    out.cmc[static_cast<std::size_t>(k - 1)] = nq > 0 ? c / nq : 0.0;
  }
  return out;
}

// Triple loop over samples, cells and channels.
inline hli::Tensor cam(const hli::Tensor& fm, const hli::Tensor& weight, const std::vector<int>& cls) {
  const int n = fm.dim(0), c = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
  hli::Tensor out({n, h, w});
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0;
        for (int k = 0; k < c; ++k) s += weight.data[static_cast<std::size_t>(cls[i]) * c + k] * fm.at(i, k, y, x);
        out.data[(static_cast<std::size_t>(i) * h + y) * w + x] = s;
      }
  return out;
}

// Exhaustive scan: the first cell in row-major order holding the maximum.
inline std::pair<int, int> argmax_cell(const hli::Tensor& hm, int i) {
  const int h = hm.dim(1), w = hm.dim(2);
  double best = -std::numeric_limits<double>::infinity();
  std::pair<int, int> at{0, 0};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = hm.data[(static_cast<std::size_t>(i) * h + y) * w + x];
      if (v > best) {
        best = v;
        at = {y, x};
      }
    }
  return at;
}

// Per-pixel membership test for the erased box.
inline bool in_erase_box(int y, int x, hli::ImagePoint p, int eh, int ew, int H, int W) {
  if (y < 0 || y >= H || x < 0 || x >= W) return false;
  const int top = p.y - eh / 2, left = p.x - ew / 2;
  return y >= top && y < top + eh && x >= left && x < left + ew;
}

// Sum over anchors of the worst hinge among all (positive, negative) pairs.
inline double triplet_all_pairs(const Matrix& e, const std::vector<int>& labels, double margin) {
  const int n = static_cast<int>(e.rows());
  double total = 0;
  for (int a = 0; a < n; ++a) {
    double worst = 0;
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (int q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        const double dap = (e.row(a) - e.row(p)).norm(), dan = (e.row(a) - e.row(q)).norm();
        worst = std::max(worst, dap - dan + margin);
      }
    }
    total += worst;
  }
  return total / n;
}

// Central differences of f with respect to every entry of x.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = f(x);
      x(i, j) = keep - h;
      const double down = f(x);
      x(i, j) = keep;
      g(i, j) = (up - down) / (2 * h);
    }
  return g;
}

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale < 1e-12 ? (a - b).norm() : (a - b).norm() / scale;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

}  // namespace oracle

#endif  // HLI_TESTS_ORACLES_HPP_
