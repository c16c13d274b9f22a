#include "hli/aulm.hpp"

#include <algorithm>
#include <cmath>

#include "hli/image_io.hpp"

namespace hli {

EraseFill parse_erase_fill(const std::string& s) {
  if (s == "dataset_mean") return EraseFill::kDatasetMean;
  if (s == "zero") return EraseFill::kZero;
  if (s == "uniform_noise") return EraseFill::kUniformNoise;
  throw Error("unknown erase fill '" + s + "' (expected dataset_mean, zero or uniform_noise)");
}

std::string to_string(EraseFill f) {
  switch (f) {
    case EraseFill::kDatasetMean: return "dataset_mean";
    case EraseFill::kZero: return "zero";
    case EraseFill::kUniformNoise: return "uniform_noise";
  }
  return "?";
}

void EraseConfig::validate(int image_height, int image_width) const {
  if (!(prob >= 0.0 && prob <= 1.0)) throw Error("erase.prob: must lie in [0,1]");
  if (erase_h <= 0 || erase_h > image_height) throw Error("erase.erase_h: must lie in [1, image height]");
  if (erase_w <= 0 || erase_w > image_width) throw Error("erase.erase_w: must lie in [1, image width]");
}

EraseRect erase_rectangle(ImagePoint p, int erase_h, int erase_w, int image_height, int image_width) {
  EraseRect r;
  r.y0 = std::max(0, p.y - erase_h / 2);
  r.y1 = std::min(image_height, p.y - erase_h / 2 + erase_h);
  r.x0 = std::max(0, p.x - erase_w / 2);
  r.x1 = std::min(image_width, p.x - erase_w / 2 + erase_w);
  return r;
}

Tensor adaptive_erase(const Tensor& images, std::span<const ImagePoint> points, const EraseConfig& cfg,
                      std::mt19937_64& rng, std::vector<char>* erased) {
  if (images.shape.size() != 4) throw Error("adaptive_erase: expected N x C x H x W images");
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (static_cast<int>(points.size()) != n) throw Error("adaptive_erase: one point per image required");
  cfg.validate(h, w);
  for (const auto& p : points) {
    if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h) {
      throw Error("adaptive_erase: point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                  ") outside " + std::to_string(w) + "x" + std::to_string(h) + " image");
    }
  }

  Tensor out = images;
  if (erased) erased->assign(static_cast<std::size_t>(n), 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    if (!(unit(rng) < cfg.prob)) continue;
    if (erased) (*erased)[i] = 1;
    const EraseRect r = erase_rectangle(points[i], cfg.erase_h, cfg.erase_w, h, w);
    for (int k = 0; k < c; ++k) {
      for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
          double v = 0.0;
          switch (cfg.fill) {
            case EraseFill::kZero: break;
            case EraseFill::kDatasetMean: v = cfg.channel_mean[static_cast<std::size_t>(k % kImageChannels)]; break;
            case EraseFill::kUniformNoise: v = unit(rng); break;
          }
          out.at(i, k, y, x) = v;
        }
      }
    }
  }
  return out;
}

std::vector<ImagePoint> random_points(std::size_t n, int image_height, int image_width, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ys(0, image_height - 1), xs(0, image_width - 1);
  std::vector<ImagePoint> out(n);
  for (auto& p : out) {
    p.x = xs(rng);
    p.y = ys(rng);
  }
  return out;
}

std::array<double, kImageChannels> channel_means(std::span<const SampleRecord> records) {
  std::array<double, kImageChannels> mean{};
  std::size_t count = 0;
  for (const auto& r : records) {
    const std::size_t plane = r.image.size() / kImageChannels;
    for (int k = 0; k < kImageChannels; ++k) {
      for (std::size_t j = 0; j < plane; ++j) mean[k] += r.image[k * plane + j];
    }
    count += plane;
  }
  if (count) {
    for (double& m : mean) m /= static_cast<double>(count);
  }
  return mean;
}

void dump_erase_debug(const std::filesystem::path& dir, const std::string& prefix, const Tensor& before,
                      const Tensor& after, const HeatMap& heatmaps) {
  std::filesystem::create_directories(dir);
  const int n = before.dim(0), c = before.dim(1), h = before.dim(2), w = before.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  const int fh = heatmaps.dim(1), fw = heatmaps.dim(2);
  for (int i = 0; i < n; ++i) {
    const std::string stem = prefix + "_" + std::to_string(i);
    std::span<const double> b(before.data.data() + i * per, per), a(after.data.data() + i * per, per);
    write_png(dir / (stem + "_orig.png"), b, h, w);
    write_png(dir / (stem + "_erased.png"), a, h, w);

    // Heatmap min-max scaled and blended in red over a dimmed image.
    const double* hm = heatmaps.data.data() + static_cast<std::ptrdiff_t>(i) * fh * fw;
    const auto [lo, hi] = std::minmax_element(hm, hm + fh * fw);
    const double range = *hi - *lo > 0 ? *hi - *lo : 1.0;
    std::vector<double> overlay(per);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double heat = (hm[(y * fh / h) * fw + (x * fw / w)] - *lo) / range;
        const std::size_t j = static_cast<std::size_t>(y) * w + x;
        overlay[j] = 0.5 * b[j] + 0.5 * heat;
        overlay[plane + j] = 0.5 * b[plane + j];
        overlay[2 * plane + j] = 0.5 * b[2 * plane + j] + 0.5 * (1 - heat);
      }
    }
    write_png(dir / (stem + "_cam.png"), overlay, h, w);
  }
}

}  // namespace hli
