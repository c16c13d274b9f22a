#include "hli/pseudo.hpp"

#include "hli/normalize.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>

namespace hli {

std::vector<int> PseudoLabeling::histogram() const {
  std::vector<int> h(static_cast<std::size_t>(num_clusters()), 0);
  for (int a : assignments) ++h[static_cast<std::size_t>(a)];
  return h;
}

namespace {

int nearest(const Matrix& x, Eigen::Index i, const Matrix& centroids, double* dist) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = (x.row(i) - centroids.row(k)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

Matrix seed_plus_plus(const Matrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Matrix centroids(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centroids.row(0) = x.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (x.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total > 0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2[pick];
        if (r < 0) break;
      }
    } else {
      pick = first(rng);  // all points coincide with chosen centres
    }
    centroids.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

}  // namespace

PseudoLabeling cluster_targets(const Matrix& embeddings, int num_clusters, std::uint64_t seed,
                               const KMeansOptions& options) {
  const Eigen::Index n = embeddings.rows();
  if (num_clusters < 1) throw Error("cluster_targets: need at least one cluster");
  if (n < num_clusters) {
    throw Error("cluster_targets: " + std::to_string(n) + " samples cannot form " +
                std::to_string(num_clusters) + " clusters");
  }
  if (!embeddings.allFinite()) throw Error("cluster_targets: non-finite embeddings");
  const Matrix x = l2_normalize_rows(embeddings);

  std::mt19937_64 rng(seed);
  PseudoLabeling out;
  out.centroids = seed_plus_plus(x, num_clusters, rng);
  out.assignments.assign(static_cast<std::size_t>(n), -1);

  std::vector<double> dist(static_cast<std::size_t>(n));
  auto update_centroids = [&]() {
    Matrix sums = Matrix::Zero(num_clusters, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(num_clusters), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(out.assignments[i]) += x.row(i);
      ++counts[out.assignments[i]];
    }
    for (int k = 0; k < num_clusters; ++k) {
      if (counts[k] > 0) out.centroids.row(k) = sums.row(k) / counts[k];
    }
    return counts;
  };

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    bool changed = false;
    double inertia = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = nearest(x, i, out.centroids, &dist[i]);
      changed |= a != out.assignments[i];
      out.assignments[i] = a;
      inertia += dist[i];
    }
    out.inertia_history.push_back(inertia);
    out.inertia = inertia;
    out.iterations = iter + 1;
    if (!changed) break;

    std::vector<int> counts = update_centroids();
    for (int k = 0; k < num_clusters; ++k) {
      if (counts[k] > 0) continue;
      // Farthest point from the centroid it is currently assigned to.
      Eigen::Index far = 0;
      double far_d = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[out.assignments[i]] <= 1) continue;  // never empty another cluster
        const double d = (x.row(i) - out.centroids.row(out.assignments[i])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[out.assignments[far]];
      out.assignments[far] = k;
      counts[k] = 1;
      out.centroids.row(k) = x.row(far);
    }
  }
  // Centroids are the means of the final assignment.
  update_centroids();
  double inertia = 0;
  for (Eigen::Index i = 0; i < n; ++i) inertia += (x.row(i) - out.centroids.row(out.assignments[i])).squaredNorm();
  out.inertia = inertia;
  return out;
}

TargetView relabel_dataset(TargetView targets, const PseudoLabeling& labeling) {
  if (labeling.assignments.size() != targets.size()) {
    throw Error("relabel_dataset: " + std::to_string(labeling.assignments.size()) + " assignments for " +
                std::to_string(targets.size()) + " samples");
  }
  targets.set_pseudo_labels(labeling.assignments);
  return targets;
}

double normalized_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) throw Error("normalized_mutual_information: length mismatch");
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1;
    pb[b[i]] += 1;
    pab[{a[i], b[i]}] += 1;
  }
  auto entropy = [n](const std::map<int, double>& p) {
    double h = 0;
    for (const auto& [_, c] : p) h -= c / n * std::log(c / n);
    return h;
  };
  double mi = 0;
  for (const auto& [key, c] : pab) mi += c / n * std::log(c * n / (pa[key.first] * pb[key.second]));
  const double ha = entropy(pa), hb = entropy(pb);
  if (ha == 0 && hb == 0) return 1.0;
  if (ha == 0 || hb == 0) return 0.0;
  return mi / std::sqrt(ha * hb);
}

void write_assignments_csv(const std::filesystem::path& path, const PseudoLabeling& labeling) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "sample_index,pseudo_label\n";
  for (std::size_t i = 0; i < labeling.assignments.size(); ++i) out << i << "," << labeling.assignments[i] << "\n";
}

}  // namespace hli
