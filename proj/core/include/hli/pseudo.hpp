#ifndef HLI_PSEUDO_HPP_
#define HLI_PSEUDO_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hli/datagen.hpp"
#include "hli/tensor.hpp"

namespace hli {

struct PseudoLabeling {
  std::vector<int> assignments;  // one cluster index per target sample
  Matrix centroids;              // M_t x D, in the L2-normalized embedding space
  double inertia = 0.0;
  int epoch = 0;
  int iterations = 0;
  std::vector<double> inertia_history;  // after every assignment step

  int num_clusters() const { return static_cast<int>(centroids.rows()); }
  std::vector<int> histogram() const;
};

struct KMeansOptions {
  int max_iterations = 100;
};

// k-means++ seeding followed by Lloyd iterations on the row-normalized
// embeddings. Stops at an assignment fixpoint. An emptied cluster is
// re-seeded at the point farthest from its own centroid.
PseudoLabeling cluster_targets(const Matrix& embeddings, int num_clusters, std::uint64_t seed,
                               const KMeansOptions& options = {});

// Copies `targets` with pseudo labels taken from `labeling`.
TargetView relabel_dataset(TargetView targets, const PseudoLabeling& labeling);

double normalized_mutual_information(std::span<const int> a, std::span<const int> b);

// sample_index,pseudo_label
void write_assignments_csv(const std::filesystem::path& path, const PseudoLabeling& labeling);

}  // namespace hli

#endif  // HLI_PSEUDO_HPP_
