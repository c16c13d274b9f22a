#ifndef HLI_MODEL_HPP_
#define HLI_MODEL_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hli/tensor.hpp"

namespace hli {

struct NamedTensor {
  std::string name;
  Tensor value;
  bool trainable = true;  // false for normalization running statistics
};

// Flat ordered parameter set. Order and names are fixed by the Network that
// created it and survive checkpoint round-trips.
class ModelParams {
 public:
  void add(std::string name, Tensor value, bool trainable);

  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Same names, order and shapes.
  bool same_schema(const ModelParams& other) const;
  std::string schema_string() const;
  ModelParams zeros_like() const;
  void set_zero();

 private:
  std::vector<NamedTensor> entries_;
};

struct ArchConfig {
  int in_channels = 3;
  int height = 64;
  int width = 32;
  // Output channels of the four conv blocks; the last equals the embedding size.
  std::vector<int> channels{8, 16, 32, 64};
  int num_classes = 16;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;  // weight of the new batch in running statistics
};

enum class Mode { kTrain, kEval };

// Outputs of one forward pass over N images.
struct FeatureBundle {
  Tensor spatial_map;  // N x C_f x H_f x W_f, last conv block after ReLU
  Matrix embedding;    // N x D, global average of spatial_map
  Matrix logits;       // N x num_classes
};

// Activations retained for backward().
struct ForwardCache {
  struct Block {
    Tensor input;
    Tensor normalized;  // batch-normalized conv output before scale/shift
    Tensor activated;   // after ReLU, before pooling
    std::vector<double> mean, inv_std;
  };
  Mode mode = Mode::kEval;
  std::vector<Block> blocks;
};

// Four conv blocks (3x3 conv -> batch norm -> ReLU -> 2x2 average pool; the
// last block keeps its resolution), global average pooling and a linear
// classifier on the pooled embedding.
class Network {
 public:
  explicit Network(ArchConfig arch);

  const ArchConfig& arch() const { return arch_; }
  int embedding_dim() const { return arch_.channels.back(); }
  int feature_height() const;
  int feature_width() const;
  int stride() const { return arch_.height / feature_height(); }

  ModelParams init_params(std::uint64_t seed) const;

  // Pure in params and images. cache, when non-null, receives what
  // backward() needs.
  FeatureBundle forward(const ModelParams& params, const Tensor& images, Mode mode,
                        ForwardCache* cache = nullptr) const;

  // Accumulates parameter gradients of a scalar loss whose gradients with
  // respect to the embedding and logits are given. Empty matrices mean zero.
  void backward(const ModelParams& params, const ForwardCache& cache, const Matrix& d_embedding,
                const Matrix& d_logits, ModelParams& grads) const;

  // Folds the batch statistics of a training-mode forward into the
  // running mean/var buffers.
  void update_running_stats(ModelParams& params, const ForwardCache& cache) const;

  // Embeds `images` in evaluation mode, chunked to bound memory.
  Matrix embed(const ModelParams& params, const Tensor& images, int chunk = 64) const;

 private:
  ArchConfig arch_;
};

int num_classes(const ModelParams& params);

// Re-initializes the classifier head to `num_classes` outputs with N(0, std^2)
// weights and zero bias.
void reset_classifier(ModelParams& params, int num_classes, double std, std::mt19937_64& rng);

// Sets classifier weights to the given rows (num_classes x D), bias to zero.
void set_classifier(ModelParams& params, const Matrix& weights);

// N x H_f x W_f class activation maps.
using HeatMap = Tensor;

// heatmap[i] = sum_c W[class_index[i], c] * spatial_map[i, c]; unnormalized.
HeatMap compute_cam(const FeatureBundle& bundle, const ModelParams& params,
                    std::span<const int> class_index);

struct ImagePoint {
  int x = 0;  // column
  int y = 0;  // row
  bool operator==(const ImagePoint&) const = default;
};

// Argmax cell of each heatmap (ties: smallest row-major index), mapped to
// the pixel at the centre of its stride cell: (col*s + s/2, row*s + s/2).
std::vector<ImagePoint> most_informative_point(const HeatMap& heatmap, int image_height,
                                               int image_width);

// Feature-map argmax only (row, col) per sample.
std::vector<std::pair<int, int>> heatmap_argmax(const HeatMap& heatmap);

}  // namespace hli

#endif  // HLI_MODEL_HPP_
