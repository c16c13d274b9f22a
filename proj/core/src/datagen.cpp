#include "hli/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "hli/image_io.hpp"

namespace hli {

namespace {

using Rgb = std::array<double, 3>;

// Shared palette; identities pick three entries so that attributes repeat
// across people and color alone is not a unique key.
constexpr std::array<Rgb, 8> kPalette{{
    {0.85, 0.15, 0.15},
    {0.15, 0.65, 0.20},
    {0.20, 0.30, 0.85},
    {0.90, 0.80, 0.20},
    {0.75, 0.30, 0.80},
    {0.20, 0.75, 0.80},
    {0.95, 0.55, 0.15},
    {0.15, 0.15, 0.15},
}};

struct Glyph {
  int torso_shape = 0;  // 0 box, 1 wide shoulders, 2 wide hips, 3 rounded
  bool skirt = false;
  double aspect = 1.0;  // body width multiplier
  double stripe_row = 0.4;
  Rgb head{}, torso{}, legs{};
};

// Axis-aligned background patch in unit image coordinates.
struct Clutter {
  double u0, v0, u1, v1;
  Rgb color;
};

struct Nuisance {
  double dx = 0, dy = 0, scale = 1, brightness = 1;
  Rgb bg{};
  double bg_slope = 0;
  std::vector<Clutter> clutter;
  Rgb cast{};
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Glyph make_glyph(std::uint64_t seed, int global_identity) {
  std::mt19937_64 rng(mix_seed(seed, 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(global_identity)));
  Glyph g;
  g.torso_shape = static_cast<int>(rng() % 4);
  g.skirt = (rng() % 3) == 0;
  g.aspect = uniform(rng, 0.7, 1.05);
  g.stripe_row = uniform(rng, 0.30, 0.52);
  auto pick = [&](Rgb& c) {
    const Rgb& base = kPalette[rng() % kPalette.size()];
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(base[k] + uniform(rng, -0.08, 0.08), 0.0, 1.0);
  };
  pick(g.head);
  pick(g.torso);
  pick(g.legs);
  return g;
}

Rgb camera_cast(std::uint64_t seed, int camera) {
  std::mt19937_64 rng(mix_seed(seed, 0xc0ffee00ULL + static_cast<std::uint64_t>(camera)));
  Rgb c{};
  for (auto& v : c) v = uniform(rng, -0.1, 0.1);
  return c;
}

// Torso half-width (in units of image width) at relative torso height t in [0,1].
double torso_half_width(const Glyph& g, double t) {
  switch (g.torso_shape) {
    case 1: return 0.30 - 0.10 * t;
    case 2: return 0.20 + 0.10 * t;
    case 3: return 0.18 + 0.12 * std::sqrt(std::max(0.0, 1.0 - (2 * t - 1) * (2 * t - 1)));
    default: return 0.25;
  }
}

enum class Part { kBackground, kHead, kTorso, kStripe, kLegs };

Part classify(const Glyph& g, const Nuisance& n, double u, double v) {
  // u,v in glyph space: centered horizontally, 0 at top, 1 at bottom.
  u = (u - 0.5 - n.dx) / (n.scale * g.aspect);
  v = (v - 0.5 - n.dy) / n.scale + 0.5;
  const double head_dx = u / 0.5;  // image aspect is 2:1
  const double head_dy = v - 0.14;
  if (head_dx * head_dx + head_dy * head_dy < 0.085 * 0.085) return Part::kHead;
  if (v >= 0.24 && v < 0.58) {
    const double t = (v - 0.24) / 0.34;
    if (std::abs(u) < torso_half_width(g, t)) {
      if (std::abs(v - g.stripe_row) < 0.03) return Part::kStripe;
      return Part::kTorso;
    }
    // arms
    if (std::abs(std::abs(u) - 0.36) < 0.05 && v < 0.52) return Part::kTorso;
    return Part::kBackground;
  }
  if (v >= 0.58 && v < 0.95) {
    const double t = (v - 0.58) / 0.37;
    if (g.skirt) {
      if (std::abs(u) < 0.22 + 0.12 * t) return Part::kLegs;
    } else if (std::abs(u) > 0.03 && std::abs(u) < 0.21) {
      return Part::kLegs;
    }
  }
  return Part::kBackground;
}

void render(const Glyph& g, const Nuisance& n, Domain domain, double shift,
            std::uint64_t seed, int height, int width, std::mt19937_64& rng,
            std::vector<double>& out) {
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  out.assign(kImageChannels * plane, 0.0);

  // Target-domain color transform: hue rotation by a quarter turn plus
  // contrast compression, blended in by `shift`.
  const double m = domain == Domain::kTarget ? shift : 0.0;
  const double angle = std::numbers::pi / 2.0;
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);
  const double s3 = std::sqrt(3.0);
  std::array<Rgb, 3> hue{};
  // Rotation about the gray axis (standard hue-rotation matrix).
  const double k1 = (1 - cos_a) / 3.0;
  hue[0] = {cos_a + k1, k1 - sin_a / s3, k1 + sin_a / s3};
  hue[1] = {k1 + sin_a / s3, cos_a + k1, k1 - sin_a / s3};
  hue[2] = {k1 - sin_a / s3, k1 + sin_a / s3, cos_a + k1};
  constexpr double kContrast = 0.65;
  constexpr double kOffset = 0.12;

  std::normal_distribution<double> noise(0.0, 1.0);
  const double texture_phase = static_cast<double>(seed % 97) * 0.1;

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double v = (y + 0.5) / height;
      Rgb px{};
      const Part part = classify(g, n, u, v);
      switch (part) {
        case Part::kHead: px = g.head; break;
        case Part::kTorso: px = g.torso; break;
        case Part::kStripe:
          for (int k = 0; k < 3; ++k) px[k] = 0.5 * (g.head[k] + g.legs[k]);
          break;
        case Part::kLegs: px = g.legs; break;
        case Part::kBackground: {
          Rgb scene = n.bg;
          for (const auto& c : n.clutter) {
            if (u >= c.u0 && u < c.u1 && v >= c.v0 && v < c.v1) scene = c.color;
          }
          const double stripes =
              0.5 + 0.3 * (std::sin((x + 0.5 * y) * 1.3 + texture_phase) > 0 ? 1.0 : -1.0);
          for (int k = 0; k < 3; ++k) px[k] = (1 - m) * (scene[k] + n.bg_slope * (v - 0.5)) + m * stripes;
          break;
        }
      }
      for (int k = 0; k < 3; ++k) px[k] = px[k] * n.brightness + n.cast[k];

      Rgb shifted{};
      for (int k = 0; k < 3; ++k) {
        const double rotated = hue[k][0] * px[0] + hue[k][1] * px[1] + hue[k][2] * px[2];
        const double domain_px = kContrast * rotated + kOffset;
        shifted[k] = (1 - m) * px[k] + m * domain_px;
      }
      for (int k = 0; k < 3; ++k) {
        const double sensor = 0.03 * noise(rng);
        const double domain_noise = 0.06 * m * noise(rng);
        const double value = std::clamp(shifted[k] + sensor + domain_noise, 0.0, 1.0);
        out[k * plane + static_cast<std::size_t>(y) * width + x] = value;
      }
    }
  }
}

std::vector<SampleRecord> render_domain(const DatasetSpec& spec, Domain domain,
                                        int first_identity, int n_identities) {
  std::vector<SampleRecord> records;
  records.reserve(static_cast<std::size_t>(n_identities) * spec.samples_per_identity);
  std::vector<Rgb> casts;
  for (int c = 0; c < spec.n_cameras; ++c) casts.push_back(camera_cast(spec.seed, c));

  for (int id = first_identity; id < first_identity + n_identities; ++id) {
    const Glyph glyph = make_glyph(spec.seed, id);
    for (int j = 0; j < spec.samples_per_identity; ++j) {
      // Per-sample stream: independent of every other sample.
      std::mt19937_64 rng(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(id)),
                                   static_cast<std::uint64_t>(j)));
      SampleRecord rec;
      rec.identity = id;
      rec.domain = domain;
      rec.nuisance_id = static_cast<int>((static_cast<std::uint64_t>(j) + rng()) % spec.n_cameras);
      Nuisance n;
      n.dx = uniform(rng, -0.08, 0.08);
      n.dy = uniform(rng, -0.05, 0.05);
      n.scale = uniform(rng, 0.85, 1.1);
      n.brightness = uniform(rng, 0.75, 1.25);
      for (auto& c : n.bg) c = uniform(rng, 0.1, 0.9);
      n.bg_slope = uniform(rng, -0.3, 0.3);
      // Scene clutter behind the person, colored from the same palette so it
      // competes with clothing for attention.
      const int patches = 2 + static_cast<int>(rng() % 3);
      for (int p = 0; p < patches; ++p) {
        Clutter c{};
        const double cu = uniform(rng, 0.0, 1.0), cv = uniform(rng, 0.0, 1.0);
        const double hw = uniform(rng, 0.1, 0.35), hh = uniform(rng, 0.05, 0.2);
        c.u0 = cu - hw;
        c.u1 = cu + hw;
        c.v0 = cv - hh;
        c.v1 = cv + hh;
        const Rgb& base = kPalette[rng() % kPalette.size()];
        for (int k = 0; k < 3; ++k) c.color[k] = std::clamp(base[k] + uniform(rng, -0.1, 0.1), 0.0, 1.0);
        n.clutter.push_back(c);
      }
      n.cast = casts[static_cast<std::size_t>(rec.nuisance_id)];
      render(glyph, n, domain, spec.shift_magnitude, spec.seed, spec.image_height,
             spec.image_width, rng, rec.image);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void DatasetSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error("dataset." + field + ": " + why);
  };
  if (n_identities_source <= 0) fail("n_identities_source", "must be positive");
  if (n_identities_target <= 0) fail("n_identities_target", "must be positive");
  if (samples_per_identity <= 0) fail("samples_per_identity", "must be positive");
  if (image_height <= 0) fail("image_height", "must be positive");
  if (image_width <= 0) fail("image_width", "must be positive");
  if (n_cameras <= 0) fail("n_cameras", "must be positive");
  if (!(shift_magnitude >= 0.0 && shift_magnitude <= 1.0)) fail("shift_magnitude", "must lie in [0,1]");
}

DomainPair generate_domain_pair(const DatasetSpec& spec) {
  spec.validate();
  DomainPair pair;
  pair.source = render_domain(spec, Domain::kSource, 0, spec.n_identities_source);
  pair.target = render_domain(spec, Domain::kTarget, spec.n_identities_source,
                              spec.n_identities_target);
  return pair;
}

// ---------------------------------------------------------------------------
// LabelAudit / TargetView

thread_local int LabelAudit::gradient_depth_ = 0;
std::atomic<std::uint64_t> LabelAudit::total_{0};
std::atomic<std::uint64_t> LabelAudit::during_step_{0};

void LabelAudit::record_read() {
  total_.fetch_add(1);
  if (gradient_depth_ > 0) during_step_.fetch_add(1);
}
std::uint64_t LabelAudit::total_reads() { return total_.load(); }
std::uint64_t LabelAudit::reads_during_gradient_steps() { return during_step_.load(); }
bool LabelAudit::in_gradient_step() { return gradient_depth_ > 0; }
void LabelAudit::reset() {
  total_ = 0;
  during_step_ = 0;
}

TargetView::TargetView(std::vector<SampleRecord> records) {
  images_.reserve(records.size());
  for (auto& r : records) {
    if (r.domain != Domain::kTarget) throw Error("TargetView: record is not from the target domain");
    images_.push_back(std::move(r.image));
    nuisance_.push_back(r.nuisance_id);
    withheld_identity_.push_back(r.identity);
  }
}

void TargetView::set_pseudo_labels(std::vector<int> labels) {
  if (labels.size() != size()) {
    throw Error("pseudo label count " + std::to_string(labels.size()) + " != dataset size " +
                std::to_string(size()));
  }
  pseudo_ = std::move(labels);
}

std::span<const int> TargetView::identities_for_evaluation() const {
  LabelAudit::record_read();
  return withheld_identity_;
}

// ---------------------------------------------------------------------------
// Batching

PkBatch make_pk_batch(std::span<const int> labels, int P, int K, std::mt19937_64& rng) {
  if (P < 2 || K < 2) throw Error("make_pk_batch: P and K must both be >= 2");
  if (labels.empty()) throw Error("make_pk_batch: empty dataset");

  // Ordered map keeps the draw independent of hash iteration order.
  std::map<int, std::vector<int>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(static_cast<int>(i));
  if (static_cast<int>(by_label.size()) < P) {
    throw Error("make_pk_batch: need " + std::to_string(P) + " distinct identities, dataset has " +
                std::to_string(by_label.size()));
  }
  std::vector<int> keys;
  keys.reserve(by_label.size());
  for (const auto& [k, _] : by_label) keys.push_back(k);
  std::shuffle(keys.begin(), keys.end(), rng);

  PkBatch batch;
  batch.indices.reserve(static_cast<std::size_t>(P) * K);
  for (int p = 0; p < P; ++p) {
    std::vector<int> members = by_label[keys[p]];
    if (static_cast<int>(members.size()) >= K) {
      std::shuffle(members.begin(), members.end(), rng);
      members.resize(K);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      std::vector<int> drawn;
      for (int k = 0; k < K; ++k) drawn.push_back(members[pick(rng)]);
      members = std::move(drawn);
    }
    for (int idx : members) {
      batch.indices.push_back(idx);
      batch.labels.push_back(keys[p]);
    }
  }
  return batch;
}

std::vector<int> identities_of(std::span<const SampleRecord> records) {
  std::vector<int> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.identity);
  return ids;
}

namespace {
template <typename GetImage>
Tensor gather(std::size_t n, GetImage&& get, std::span<const int> indices, int height, int width) {
  Tensor out({static_cast<int>(indices.size()), kImageChannels, height, width});
  const std::size_t per = static_cast<std::size_t>(kImageChannels) * height * width;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= n) throw Error("gather_images: index out of range");
    std::span<const double> img = get(static_cast<std::size_t>(indices[i]));
    if (img.size() != per) throw Error("gather_images: image size does not match configured shape");
    std::copy(img.begin(), img.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}
}  // namespace

Tensor gather_images(std::span<const SampleRecord> records, std::span<const int> indices,
                     int height, int width) {
  return gather(records.size(), [&](std::size_t i) { return std::span<const double>(records[i].image); },
                indices, height, width);
}

Tensor gather_images(const TargetView& view, std::span<const int> indices, int height, int width) {
  return gather(view.size(), [&](std::size_t i) { return view.image(i); }, indices, height, width);
}

// ---------------------------------------------------------------------------
// Dump / load

void save_dataset(const std::filesystem::path& dir, std::span<const SampleRecord> records,
                  int height, int width) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw Error("cannot write " + (dir / "manifest.csv").string());
  manifest << "path,identity,domain,nuisance_id\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::ostringstream name;
    name << "images/" << to_string(records[i].domain) << "_" << i << ".png";
    write_png(dir / name.str(), records[i].image, height, width, 16);
    manifest << name.str() << "," << records[i].identity << "," << to_string(records[i].domain)
             << "," << records[i].nuisance_id << "\n";
  }
}

std::vector<SampleRecord> load_dataset(const std::filesystem::path& dir, int height, int width) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw Error("cannot read " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(manifest, line);
  if (line != "path,identity,domain,nuisance_id") throw Error("manifest.csv: unexpected header");
  std::vector<SampleRecord> out;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string path, identity, domain, nuisance;
    std::getline(ss, path, ',');
    std::getline(ss, identity, ',');
    std::getline(ss, domain, ',');
    std::getline(ss, nuisance, ',');
    SampleRecord rec;
    int h = 0, w = 0;
    rec.image = read_png(dir / path, h, w);
    if (h != height || w != width) throw Error(path + ": image size mismatch");
    rec.identity = std::stoi(identity);
    if (domain == "source") {
      rec.domain = Domain::kSource;
    } else if (domain == "target") {
      rec.domain = Domain::kTarget;
    } else {
      throw Error(path + ": unknown domain '" + domain + "'");
    }
    rec.nuisance_id = std::stoi(nuisance);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace hli
