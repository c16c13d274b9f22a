#ifndef HLI_AULM_HPP_
#define HLI_AULM_HPP_

#include <array>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hli/datagen.hpp"
#include "hli/model.hpp"

namespace hli {

enum class EraseFill { kDatasetMean, kZero, kUniformNoise };

EraseFill parse_erase_fill(const std::string& s);
std::string to_string(EraseFill f);

struct EraseConfig {
  double prob = 0.4;
  int erase_h = 16;
  int erase_w = 8;
  EraseFill fill = EraseFill::kDatasetMean;
  std::array<double, kImageChannels> channel_mean{0.5, 0.5, 0.5};

  void validate(int image_height, int image_width) const;
};

// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct EraseRect {
  int y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
  bool operator==(const EraseRect&) const = default;
};

// erase_w x erase_h box whose centre pixel is `p` (left/top of centre for
// even sizes), clipped to the image.
EraseRect erase_rectangle(ImagePoint p, int erase_h, int erase_w, int image_height, int image_width);

// For each image, one uniform draw from `rng` decides (draw < prob) whether
// the rectangle around its point is overwritten with the fill; untouched
// images pass through bit-identical. `erased`, when given, records the
// per-image decision.
Tensor adaptive_erase(const Tensor& images, std::span<const ImagePoint> points, const EraseConfig& cfg,
                      std::mt19937_64& rng, std::vector<char>* erased = nullptr);

// Uniformly random points: the non-adaptive comparison arm.
std::vector<ImagePoint> random_points(std::size_t n, int image_height, int image_width, std::mt19937_64& rng);

std::array<double, kImageChannels> channel_means(std::span<const SampleRecord> records);

// Writes <prefix>_<i>_{orig,erased,cam}.png for every image.
void dump_erase_debug(const std::filesystem::path& dir, const std::string& prefix, const Tensor& before,
                      const Tensor& after, const HeatMap& heatmaps);

}  // namespace hli

#endif  // HLI_AULM_HPP_
