#ifndef HLI_DATAGEN_HPP_
#define HLI_DATAGEN_HPP_

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hli/tensor.hpp"

namespace hli {

enum class Domain { kSource, kTarget };

std::string to_string(Domain d);

// One rendered image, planar channel-major (C x H x W), values in [0, 1].
struct SampleRecord {
  std::vector<double> image;
  int identity = 0;
  Domain domain = Domain::kSource;
  int nuisance_id = 0;  // synthetic camera
};

struct DatasetSpec {
  int n_identities_source = 16;
  int n_identities_target = 16;
  int samples_per_identity = 10;
  int image_height = 64;
  int image_width = 32;
  int n_cameras = 4;
  double shift_magnitude = 0.6;
  std::uint64_t seed = 0;

  // Throws hli::Error naming the offending field.
  void validate() const;
};

inline constexpr int kImageChannels = 3;

struct DomainPair {
  std::vector<SampleRecord> source;
  std::vector<SampleRecord> target;
};

// Renders every identity as a parametric glyph. Target identities are
// disjoint from source identities and go through the domain transform
// scaled by spec.shift_magnitude. Pure function of spec.
DomainPair generate_domain_pair(const DatasetSpec& spec);

// Counts reads of withheld target identities. Reads made while a
// GradientStepScope is alive are recorded separately so tests can assert
// that no optimizer step ever consumed ground truth.
class LabelAudit {
 public:
  static void record_read();
  static std::uint64_t total_reads();
  static std::uint64_t reads_during_gradient_steps();
  static bool in_gradient_step();
  static void reset();

 private:
  friend class GradientStepScope;
  static thread_local int gradient_depth_;
  static std::atomic<std::uint64_t> total_;
  static std::atomic<std::uint64_t> during_step_;
};

class GradientStepScope {
 public:
  GradientStepScope() { ++LabelAudit::gradient_depth_; }
  ~GradientStepScope() { --LabelAudit::gradient_depth_; }
  GradientStepScope(const GradientStepScope&) = delete;
  GradientStepScope& operator=(const GradientStepScope&) = delete;
};

// Target-domain dataset with ground-truth identities withheld. Training
// code sees images, camera ids and pseudo labels only; ground truth is
// reachable solely through identities_for_evaluation(), which is audited.
class TargetView {
 public:
  TargetView() = default;
  explicit TargetView(std::vector<SampleRecord> records);

  std::size_t size() const { return images_.size(); }
  std::span<const double> image(std::size_t i) const { return images_[i]; }
  int nuisance_id(std::size_t i) const { return nuisance_[i]; }
  std::span<const int> nuisance_ids() const { return nuisance_; }

  bool has_pseudo_labels() const { return !pseudo_.empty(); }
  std::span<const int> pseudo_labels() const { return pseudo_; }
  void set_pseudo_labels(std::vector<int> labels);

  std::span<const int> identities_for_evaluation() const;

 private:
  std::vector<std::vector<double>> images_;
  std::vector<int> nuisance_;
  std::vector<int> pseudo_;
  std::vector<int> withheld_identity_;
};

struct PkBatch {
  std::vector<int> indices;  // into the dataset
  std::vector<int> labels;   // label of each drawn record
};

// P distinct labels, K records each; labels with fewer than K records are
// drawn with replacement.
PkBatch make_pk_batch(std::span<const int> labels, int P, int K, std::mt19937_64& rng);

std::vector<int> identities_of(std::span<const SampleRecord> records);

// Packs the selected images into an N x C x H x W tensor.
Tensor gather_images(std::span<const SampleRecord> records, std::span<const int> indices,
                     int height, int width);
Tensor gather_images(const TargetView& view, std::span<const int> indices, int height,
                     int width);

// Directory of 16-bit PNGs plus manifest.csv (path,identity,domain,nuisance_id).
void save_dataset(const std::filesystem::path& dir, std::span<const SampleRecord> records,
                  int height, int width);
std::vector<SampleRecord> load_dataset(const std::filesystem::path& dir, int height,
                                       int width);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace hli

#endif  // HLI_DATAGEN_HPP_
