#include "hli/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hli {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// ModelParams

void ModelParams::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  entries_.push_back({std::move(name), std::move(value), trainable});
}

Tensor& ModelParams::get(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw Error("unknown parameter '" + std::string(name) + "'");
}

const Tensor& ModelParams::get(std::string_view name) const {
  return const_cast<ModelParams*>(this)->get(name);
}

bool ModelParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

bool ModelParams::same_schema(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.shape != other.entries_[i].value.shape) return false;
  }
  return true;
}

std::string ModelParams::schema_string() const {
  std::ostringstream os;
  for (const auto& e : entries_) os << e.name << shape_string(e.value.shape) << ";";
  return os.str();
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  for (const auto& e : entries_) out.add(e.name, Tensor(e.value.shape), e.trainable);
  return out;
}

void ModelParams::set_zero() {
  for (auto& e : entries_) e.value.fill(0.0);
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

std::string block_name(std::size_t b) { return "block" + std::to_string(b + 1); }

// 3x3, stride 1, zero padding 1.
void im2col(const double* in, int channels, int height, int width, double* col) {
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col + static_cast<std::ptrdiff_t>((c * 9 + ky * 3 + kx)) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - 1;
            row[y * width + x] = (sy >= 0 && sy < height && sx >= 0 && sx < width)
                                     ? in[(c * height + sy) * width + sx]
                                     : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int height, int width, double* out) {
  const int hw = height * width;
  std::fill(out, out + static_cast<std::ptrdiff_t>(channels) * hw, 0.0);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = col + static_cast<std::ptrdiff_t>((c * 9 + ky * 3 + kx)) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= width) continue;
            out[(c * height + sy) * width + sx] += row[y * width + x];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& in, const Tensor& weight) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int cout = weight.dim(0);
  Tensor out({n, cout, h, w});
  std::vector<double> col(static_cast<std::size_t>(cin) * 9 * h * w);
  ConstMap wmat(weight.data.data(), cout, cin * 9);
  for (int i = 0; i < n; ++i) {
    im2col(in.data.data() + static_cast<std::ptrdiff_t>(i) * cin * h * w, cin, h, w, col.data());
    ConstMap cmat(col.data(), cin * 9, h * w);
    MutMap omat(out.data.data() + static_cast<std::ptrdiff_t>(i) * cout * h * w, cout, h * w);
    omat.noalias() = wmat * cmat;
  }
  return out;
}

// d_in may be null when the input gradient is not needed.
void conv_backward(const Tensor& in, const Tensor& weight, const Tensor& d_out, Tensor& d_weight,
                   Tensor* d_in) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int cout = weight.dim(0);
  std::vector<double> col(static_cast<std::size_t>(cin) * 9 * h * w);
  std::vector<double> dcol(col.size());
  ConstMap wmat(weight.data.data(), cout, cin * 9);
  MutMap dw(d_weight.data.data(), cout, cin * 9);
  if (d_in) *d_in = Tensor(in.shape);
  for (int i = 0; i < n; ++i) {
    im2col(in.data.data() + static_cast<std::ptrdiff_t>(i) * cin * h * w, cin, h, w, col.data());
    ConstMap cmat(col.data(), cin * 9, h * w);
    ConstMap gmat(d_out.data.data() + static_cast<std::ptrdiff_t>(i) * cout * h * w, cout, h * w);
    dw.noalias() += gmat * cmat.transpose();
    if (d_in) {
      MutMap dc(dcol.data(), cin * 9, h * w);
      dc.noalias() = wmat.transpose() * gmat;
      col2im(dcol.data(), cin, h, w, d_in->data.data() + static_cast<std::ptrdiff_t>(i) * cin * h * w);
    }
  }
}

Tensor avg_pool2(const Tensor& in) {
  const int n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor out({n, c, h / 2, w / 2});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x)
          out.at(i, k, y, x) = 0.25 * (in.at(i, k, 2 * y, 2 * x) + in.at(i, k, 2 * y, 2 * x + 1) +
                                       in.at(i, k, 2 * y + 1, 2 * x) + in.at(i, k, 2 * y + 1, 2 * x + 1));
  return out;
}

Tensor avg_pool2_backward(const Tensor& d_out, const std::vector<int>& in_shape) {
  Tensor d_in(in_shape);
  const int n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) d_in.at(i, k, y, x) = 0.25 * d_out.at(i, k, y / 2, x / 2);
  return d_in;
}

}  // namespace

// ---------------------------------------------------------------------------
// Network

Network::Network(ArchConfig arch) : arch_(std::move(arch)) {
  if (arch_.channels.size() != 4) throw Error("Network: expected four conv blocks");
  if (arch_.height % 8 != 0 || arch_.width % 8 != 0) {
    throw Error("Network: input height and width must be multiples of 8");
  }
  if (arch_.num_classes <= 0) throw Error("Network: num_classes must be positive");
}

int Network::feature_height() const { return arch_.height / 8; }
int Network::feature_width() const { return arch_.width / 8; }

ModelParams Network::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ModelParams p;
  int cin = arch_.in_channels;
  for (std::size_t b = 0; b < arch_.channels.size(); ++b) {
    const int cout = arch_.channels[b];
    const std::string name = block_name(b);
    Tensor w({cout, cin, 3, 3});
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / (cin * 9)));
    for (double& v : w.data) v = he(rng);
    p.add(name + ".conv.weight", std::move(w), true);
    p.add(name + ".bn.weight", Tensor({cout}, 1.0), true);
    p.add(name + ".bn.bias", Tensor({cout}, 0.0), true);
    p.add(name + ".bn.running_mean", Tensor({cout}, 0.0), false);
    p.add(name + ".bn.running_var", Tensor({cout}, 1.0), false);
    cin = cout;
  }
  p.add("classifier.weight", Tensor({arch_.num_classes, cin}), true);
  p.add("classifier.bias", Tensor({arch_.num_classes}, 0.0), true);
  reset_classifier(p, arch_.num_classes, 0.01, rng);
  return p;
}

FeatureBundle Network::forward(const ModelParams& params, const Tensor& images, Mode mode,
                               ForwardCache* cache) const {
  if (images.shape.size() != 4 || images.dim(1) != arch_.in_channels || images.dim(2) != arch_.height ||
      images.dim(3) != arch_.width) {
    throw Error("forward: expected input N x " + std::to_string(arch_.in_channels) + " x " +
                std::to_string(arch_.height) + " x " + std::to_string(arch_.width) + ", got " +
                shape_string(images.shape));
  }
  if (cache) {
    cache->mode = mode;
    cache->blocks.clear();
  }
  const int n = images.dim(0);
  Tensor x = images;
  for (std::size_t b = 0; b < arch_.channels.size(); ++b) {
    const std::string name = block_name(b);
    const Tensor& weight = params.get(name + ".conv.weight");
    const Tensor& gamma = params.get(name + ".bn.weight");
    const Tensor& beta = params.get(name + ".bn.bias");
    Tensor y = conv_forward(x, weight);
    const int c = y.dim(1), hw = y.dim(2) * y.dim(3);
    const double m = static_cast<double>(n) * hw;

    std::vector<double> mean(c), inv_std(c);
    if (mode == Mode::kTrain) {
      for (int k = 0; k < c; ++k) {
        double s = 0, ss = 0;
        for (int i = 0; i < n; ++i) {
          const double* p = &y.at(i, k, 0, 0);
          for (int j = 0; j < hw; ++j) s += p[j];
        }
        mean[k] = s / m;
        for (int i = 0; i < n; ++i) {
          const double* p = &y.at(i, k, 0, 0);
          for (int j = 0; j < hw; ++j) ss += (p[j] - mean[k]) * (p[j] - mean[k]);
        }
        inv_std[k] = 1.0 / std::sqrt(ss / m + arch_.bn_eps);
      }
    } else {
      const Tensor& rm = params.get(name + ".bn.running_mean");
      const Tensor& rv = params.get(name + ".bn.running_var");
      for (int k = 0; k < c; ++k) {
        mean[k] = rm.data[k];
        inv_std[k] = 1.0 / std::sqrt(rv.data[k] + arch_.bn_eps);
      }
    }
    Tensor normalized(y.shape);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < c; ++k) {
        const double* src = &y.at(i, k, 0, 0);
        double* dst = &normalized.at(i, k, 0, 0);
        double* out = &y.at(i, k, 0, 0);
        for (int j = 0; j < hw; ++j) {
          dst[j] = (src[j] - mean[k]) * inv_std[k];
          out[j] = std::max(0.0, gamma.data[k] * dst[j] + beta.data[k]);
        }
      }
    }
    const bool pool = b + 1 < arch_.channels.size();
    if (cache) {
      ForwardCache::Block blk;
      blk.input = std::move(x);
      blk.normalized = std::move(normalized);
      blk.mean = std::move(mean);
      blk.inv_std = std::move(inv_std);
      blk.activated = y;
      cache->blocks.push_back(std::move(blk));
    }
    x = pool ? avg_pool2(y) : std::move(y);
  }

  FeatureBundle out;
  const int c = x.dim(1), hw = x.dim(2) * x.dim(3);
  out.embedding = Matrix::Zero(n, c);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) {
      const double* p = &x.at(i, k, 0, 0);
      double s = 0;
      for (int j = 0; j < hw; ++j) s += p[j];
      out.embedding(i, k) = s / hw;
    }
  }
  const Tensor& cw = params.get("classifier.weight");
  const Tensor& cb = params.get("classifier.bias");
  ConstMap wmat(cw.data.data(), cw.dim(0), cw.dim(1));
  Eigen::Map<const Eigen::RowVectorXd> bias(cb.data.data(), cb.dim(0));
  out.logits = out.embedding * wmat.transpose();
  out.logits.rowwise() += bias;
  out.spatial_map = std::move(x);
  return out;
}

void Network::backward(const ModelParams& params, const ForwardCache& cache, const Matrix& d_embedding,
                       const Matrix& d_logits, ModelParams& grads) const {
  if (cache.blocks.size() != arch_.channels.size()) throw Error("backward: cache is empty");
  const ForwardCache::Block& last = cache.blocks.back();
  const int n = last.activated.dim(0);
  const int d = embedding_dim();

  Matrix d_emb = d_embedding.size() ? d_embedding : Matrix::Zero(n, d);
  if (d_logits.size()) {
    const Tensor& cw = params.get("classifier.weight");
    ConstMap wmat(cw.data.data(), cw.dim(0), cw.dim(1));
    // Recompute the embedding from the cached final activation.
    Matrix emb(n, d);
    const int hw = last.activated.dim(2) * last.activated.dim(3);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) {
        const double* p = &last.activated.at(i, k, 0, 0);
        double s = 0;
        for (int j = 0; j < hw; ++j) s += p[j];
        emb(i, k) = s / hw;
      }
    MutMap dw(grads.get("classifier.weight").data.data(), cw.dim(0), cw.dim(1));
    dw.noalias() += d_logits.transpose() * emb;
    Tensor& db = grads.get("classifier.bias");
    for (int k = 0; k < cw.dim(0); ++k) db.data[k] += d_logits.col(k).sum();
    d_emb.noalias() += d_logits * wmat;
  }

  // Global average pool.
  Tensor grad(last.activated.shape);
  {
    const int hw = grad.dim(2) * grad.dim(3);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) {
        double* p = &grad.at(i, k, 0, 0);
        for (int j = 0; j < hw; ++j) p[j] = d_emb(i, k) / hw;
      }
  }

  for (std::size_t bi = arch_.channels.size(); bi-- > 0;) {
    const ForwardCache::Block& blk = cache.blocks[bi];
    const std::string name = block_name(bi);
    if (bi + 1 < arch_.channels.size()) grad = avg_pool2_backward(grad, blk.activated.shape);

    // ReLU
    for (std::size_t j = 0; j < grad.size(); ++j) {
      if (blk.activated.data[j] <= 0.0) grad.data[j] = 0.0;
    }

    // Batch norm
    const Tensor& gamma = params.get(name + ".bn.weight");
    Tensor& d_gamma = grads.get(name + ".bn.weight");
    Tensor& d_beta = grads.get(name + ".bn.bias");
    const int c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
    const double m = static_cast<double>(n) * hw;
    Tensor d_conv(grad.shape);
    for (int k = 0; k < c; ++k) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < n; ++i) {
        const double* g = &grad.at(i, k, 0, 0);
        const double* xh = &blk.normalized.at(i, k, 0, 0);
        for (int j = 0; j < hw; ++j) {
          sum_dy += g[j];
          sum_dy_xhat += g[j] * xh[j];
        }
      }
      d_gamma.data[k] += sum_dy_xhat;
      d_beta.data[k] += sum_dy;
      const double scale = gamma.data[k] * blk.inv_std[k];
      for (int i = 0; i < n; ++i) {
        const double* g = &grad.at(i, k, 0, 0);
        const double* xh = &blk.normalized.at(i, k, 0, 0);
        double* out = &d_conv.at(i, k, 0, 0);
        if (cache.mode == Mode::kTrain) {
          for (int j = 0; j < hw; ++j) out[j] = scale * (g[j] - sum_dy / m - xh[j] * sum_dy_xhat / m);
        } else {
          for (int j = 0; j < hw; ++j) out[j] = scale * g[j];
        }
      }
    }

    // Conv
    Tensor d_in;
    conv_backward(blk.input, params.get(name + ".conv.weight"), d_conv,
                  grads.get(name + ".conv.weight"), bi > 0 ? &d_in : nullptr);
    grad = std::move(d_in);
  }
}

void Network::update_running_stats(ModelParams& params, const ForwardCache& cache) const {
  if (cache.mode != Mode::kTrain) return;
  const double mom = arch_.bn_momentum;
  for (std::size_t b = 0; b < cache.blocks.size(); ++b) {
    const auto& blk = cache.blocks[b];
    const std::string name = block_name(b);
    Tensor& rm = params.get(name + ".bn.running_mean");
    Tensor& rv = params.get(name + ".bn.running_var");
    const double m = static_cast<double>(blk.normalized.dim(0)) * blk.normalized.dim(2) * blk.normalized.dim(3);
    for (std::size_t k = 0; k < blk.mean.size(); ++k) {
      const double biased = 1.0 / (blk.inv_std[k] * blk.inv_std[k]) - arch_.bn_eps;
      const double unbiased = m > 1 ? biased * m / (m - 1) : biased;
      rm.data[k] = (1 - mom) * rm.data[k] + mom * blk.mean[k];
      rv.data[k] = (1 - mom) * rv.data[k] + mom * unbiased;
    }
  }
}

Matrix Network::embed(const ModelParams& params, const Tensor& images, int chunk) const {
  const int n = images.dim(0);
  const std::size_t per = images.size() / static_cast<std::size_t>(std::max(n, 1));
  Matrix out(n, embedding_dim());
  for (int start = 0; start < n; start += chunk) {
    const int len = std::min(chunk, n - start);
    Tensor part({len, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(start * per), len * per, part.data.begin());
    out.middleRows(start, len) = forward(params, part, Mode::kEval).embedding;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classifier head

int num_classes(const ModelParams& params) { return params.get("classifier.weight").dim(0); }

void reset_classifier(ModelParams& params, int classes, double std, std::mt19937_64& rng) {
  Tensor& w = params.get("classifier.weight");
  const int d = w.dim(1);
  w = Tensor({classes, d});
  std::normal_distribution<double> dist(0.0, std);
  for (double& v : w.data) v = dist(rng);
  params.get("classifier.bias") = Tensor({classes}, 0.0);
}

void set_classifier(ModelParams& params, const Matrix& weights) {
  Tensor& w = params.get("classifier.weight");
  if (weights.cols() != w.dim(1)) throw Error("set_classifier: embedding width mismatch");
  const int classes = static_cast<int>(weights.rows());
  w = Tensor({classes, static_cast<int>(weights.cols())});
  MutMap(w.data.data(), classes, weights.cols()) = weights;
  params.get("classifier.bias") = Tensor({classes}, 0.0);
}

// ---------------------------------------------------------------------------
// CAM

HeatMap compute_cam(const FeatureBundle& bundle, const ModelParams& params,
                    std::span<const int> class_index) {
  const Tensor& fm = bundle.spatial_map;
  const int n = fm.dim(0), c = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
  if (static_cast<int>(class_index.size()) != n) throw Error("compute_cam: one class index per sample required");
  const Tensor& cw = params.get("classifier.weight");
  if (cw.dim(1) != c) throw Error("compute_cam: classifier width does not match feature channels");
  HeatMap out({n, h, w});
  const int hw = h * w;
  for (int i = 0; i < n; ++i) {
    const int cls = class_index[i];
    if (cls < 0 || cls >= cw.dim(0)) {
      throw Error("compute_cam: class index " + std::to_string(cls) + " out of range [0," +
                  std::to_string(cw.dim(0)) + ")");
    }
    double* dst = out.data.data() + static_cast<std::ptrdiff_t>(i) * hw;
    for (int k = 0; k < c; ++k) {
      const double wk = cw.data[static_cast<std::size_t>(cls) * c + k];
      const double* src = &fm.at(i, k, 0, 0);
      for (int j = 0; j < hw; ++j) dst[j] += wk * src[j];
    }
  }
  return out;
}

std::vector<std::pair<int, int>> heatmap_argmax(const HeatMap& heatmap) {
  if (heatmap.shape.size() != 3 || heatmap.size() == 0) throw Error("heatmap_argmax: expected non-empty N x H x W");
  const int n = heatmap.dim(0), h = heatmap.dim(1), w = heatmap.dim(2);
  std::vector<std::pair<int, int>> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double* p = heatmap.data.data() + static_cast<std::ptrdiff_t>(i) * h * w;
    int best = 0;
    for (int j = 1; j < h * w; ++j) {
      if (p[j] > p[best]) best = j;  // strict: first maximum wins
    }
    out.emplace_back(best / w, best % w);
  }
  return out;
}

std::vector<ImagePoint> most_informative_point(const HeatMap& heatmap, int image_height, int image_width) {
  const auto cells = heatmap_argmax(heatmap);
  const int h = heatmap.dim(1), w = heatmap.dim(2);
  if (image_height % h != 0 || image_width % w != 0) {
    throw Error("most_informative_point: image size is not an integer multiple of the heatmap");
  }
  const int sy = image_height / h, sx = image_width / w;
  std::vector<ImagePoint> out;
  out.reserve(cells.size());
  for (auto [row, col] : cells) out.push_back({col * sx + sx / 2, row * sy + sy / 2});
  return out;
}

}  // namespace hli
