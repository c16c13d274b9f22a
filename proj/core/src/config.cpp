#include "hli/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <cstdio>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace hli {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& field, const std::string& s) {
  const std::string t = trim(s);
  double v = 0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError(field + ": expected a number, got '" + s + "'");
  }
  return v;
}

long long to_int(const std::string& field, const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError(field + ": expected an integer, got '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

struct Field {
  std::string section, key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& field, const std::string&)> set;
};

template <typename T>
Field int_field(std::string section, std::string key, T ExperimentConfig::*group, int T::*member) {
  return {section, key, [=](const ExperimentConfig& c) { return std::to_string((c.*group).*member); },
          [=](ExperimentConfig& c, const std::string& f, const std::string& v) {
            (c.*group).*member = static_cast<int>(to_int(f, v));
          }};
}

template <typename T>
Field double_field(std::string section, std::string key, T ExperimentConfig::*group, double T::*member) {
  return {section, key, [=](const ExperimentConfig& c) { return fmt_double((c.*group).*member); },
          [=](ExperimentConfig& c, const std::string& f, const std::string& v) {
            (c.*group).*member = to_double(f, v);
          }};
}

const std::vector<Field>& fields() {
  using E = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back(int_field("dataset", "n_identities_source", &E::dataset, &DatasetSpec::n_identities_source));
    t.push_back(int_field("dataset", "n_identities_target", &E::dataset, &DatasetSpec::n_identities_target));
    t.push_back(int_field("dataset", "samples_per_identity", &E::dataset, &DatasetSpec::samples_per_identity));
    t.push_back(int_field("dataset", "image_height", &E::dataset, &DatasetSpec::image_height));
    t.push_back(int_field("dataset", "image_width", &E::dataset, &DatasetSpec::image_width));
    t.push_back(int_field("dataset", "n_cameras", &E::dataset, &DatasetSpec::n_cameras));
    t.push_back(double_field("dataset", "shift_magnitude", &E::dataset, &DatasetSpec::shift_magnitude));
    t.push_back({"dataset", "seed", [](const E& c) { return std::to_string(c.dataset.seed); },
                 [](E& c, const std::string& f, const std::string& v) {
                   const long long s = to_int(f, v);
                   if (s < 0) throw ConfigError(f + ": must be >= 0");
                   c.dataset.seed = static_cast<std::uint64_t>(s);
                 }});

    t.push_back({"model", "channels",
                 [](const E& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.arch.channels.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.arch.channels[i]);
                   }
                   return s;
                 },
                 [](E& c, const std::string& f, const std::string& v) {
                   c.arch.channels.clear();
                   for (const auto& item : split(v, ',')) c.arch.channels.push_back(static_cast<int>(to_int(f, item)));
                 }});
    t.push_back(double_field("model", "bn_eps", &E::arch, &ArchConfig::bn_eps));
    t.push_back(double_field("model", "bn_momentum", &E::arch, &ArchConfig::bn_momentum));

    t.push_back(int_field("train", "epochs_pretrain", &E::train, &TrainConfig::epochs_pretrain));
    t.push_back(int_field("train", "epochs_adapt", &E::train, &TrainConfig::epochs_adapt));
    t.push_back(int_field("train", "steps_per_epoch", &E::train, &TrainConfig::steps_per_epoch));
    t.push_back(double_field("train", "learning_rate", &E::train, &TrainConfig::learning_rate));
    t.push_back(double_field("train", "weight_decay", &E::train, &TrainConfig::weight_decay));
    t.push_back({"train", "lr_schedule",
                 [](const E& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.train.lr_schedule.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.train.lr_schedule[i].first) + ":" +
                          fmt_double(c.train.lr_schedule[i].second);
                   }
                   return s;
                 },
                 [](E& c, const std::string& f, const std::string& v) {
                   c.train.lr_schedule.clear();
                   for (const auto& item : split(v, ',')) {
                     const auto colon = item.find(':');
                     if (colon == std::string::npos) throw ConfigError(f + ": expected epoch:multiplier, got '" + item + "'");
                     c.train.lr_schedule.emplace_back(static_cast<int>(to_int(f, item.substr(0, colon))),
                                                      to_double(f, item.substr(colon + 1)));
                   }
                 }});
    t.push_back(int_field("train", "P", &E::train, &TrainConfig::P));
    t.push_back(int_field("train", "K", &E::train, &TrainConfig::K));
    t.push_back({"train", "seed", [](const E& c) { return std::to_string(c.train.seed); },
                 [](E& c, const std::string& f, const std::string& v) {
                   const long long s = to_int(f, v);
                   if (s < 0) throw ConfigError(f + ": must be >= 0");
                   c.train.seed = static_cast<std::uint64_t>(s);
                 }});

    t.push_back(int_field("cluster", "num_clusters", &E::train, &TrainConfig::num_clusters));
    t.push_back(int_field("cluster", "max_iterations", &E::train, &TrainConfig::kmeans_max_iterations));

    auto lw = [](std::string key, double LossWeights::*m) {
      return Field{"loss", key, [=](const E& c) { return fmt_double(c.train.loss_weights.*m); },
                   [=](E& c, const std::string& f, const std::string& v) { c.train.loss_weights.*m = to_double(f, v); }};
    };
    t.push_back(lw("lambda_id", &LossWeights::lambda_id));
    t.push_back(lw("lambda_tri", &LossWeights::lambda_tri));
    t.push_back(lw("lambda_imi", &LossWeights::lambda_imi));
    t.push_back(lw("lambda_sd", &LossWeights::lambda_sd));
    t.push_back(lw("alpha", &LossWeights::alpha));
    t.push_back(lw("beta", &LossWeights::beta));
    t.push_back(double_field("loss", "triplet_margin", &E::train, &TrainConfig::triplet_margin));
    t.push_back(double_field("loss", "exploitation_clamp", &E::train, &TrainConfig::exploitation_clamp));

    t.push_back({"erase", "prob", [](const E& c) { return fmt_double(c.train.erase.prob); },
                 [](E& c, const std::string& f, const std::string& v) { c.train.erase.prob = to_double(f, v); }});
    t.push_back({"erase", "erase_h", [](const E& c) { return std::to_string(c.train.erase.erase_h); },
                 [](E& c, const std::string& f, const std::string& v) {
                   c.train.erase.erase_h = static_cast<int>(to_int(f, v));
                 }});
    t.push_back({"erase", "erase_w", [](const E& c) { return std::to_string(c.train.erase.erase_w); },
                 [](E& c, const std::string& f, const std::string& v) {
                   c.train.erase.erase_w = static_cast<int>(to_int(f, v));
                 }});
    t.push_back({"erase", "fill", [](const E& c) { return to_string(c.train.erase.fill); },
                 [](E& c, const std::string& f, const std::string& v) {
                   try {
                     c.train.erase.fill = parse_erase_fill(trim(v));
                   } catch (const Error& e) {
                     throw ConfigError(f + ": " + e.what());
                   }
                 }});
    t.push_back({"erase", "points", [](const E& c) { return to_string(c.train.erase_points); },
                 [](E& c, const std::string& f, const std::string& v) {
                   try {
                     c.train.erase_points = parse_point_source(trim(v));
                   } catch (const Error& e) {
                     throw ConfigError(f + ": " + e.what());
                   }
                 }});

    t.push_back(double_field("ema", "momentum", &E::train, &TrainConfig::momentum_ema));
    return t;
  }();
  return table;
}

}  // namespace

PointSource parse_point_source(const std::string& s) {
  if (s == "adaptive") return PointSource::kAdaptive;
  if (s == "random") return PointSource::kRandom;
  throw Error("unknown point source '" + s + "' (expected adaptive or random)");
}

std::string to_string(PointSource p) { return p == PointSource::kAdaptive ? "adaptive" : "random"; }

void ExperimentConfig::validate() const {
  try {
    dataset.validate();
    train.validate();
    if (arch.channels.size() != 4) throw Error("model.channels: expected four values");
    for (int c : arch.channels) {
      if (c < 1) throw Error("model.channels: values must be >= 1");
    }
    if (!(arch.bn_eps > 0)) throw Error("model.bn_eps: must be > 0");
    if (!(arch.bn_momentum >= 0 && arch.bn_momentum <= 1)) throw Error("model.bn_momentum: must lie in [0,1]");
    if (dataset.image_height % 8 || dataset.image_width % 8) {
      throw Error("dataset.image_height: image sides must be multiples of 8");
    }
    train.erase.validate(dataset.image_height, dataset.image_width);
    if (train.num_clusters > dataset.n_identities_target * dataset.samples_per_identity) {
      throw Error("cluster.num_clusters: exceeds the number of target samples");
    }
    if (train.P > dataset.n_identities_source) throw Error("train.P: exceeds the number of source identities");
    if (train.P > train.num_clusters) throw Error("train.P: exceeds cluster.num_clusters");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(section + ": key outside any section");
    }
    for (const auto& [key, value] : body) {
      const std::string field = section + "." + key;
      const Field* match = nullptr;
      for (const auto& f : fields()) {
        if (f.section == section && f.key == key) match = &f;
      }
      if (!match) throw ConfigError(field + ": unknown key");
      match->set(cfg, field, value.data());
    }
  }
  cfg.arch.in_channels = kImageChannels;
  cfg.arch.height = cfg.dataset.image_height;
  cfg.arch.width = cfg.dataset.image_width;
  cfg.arch.num_classes = cfg.dataset.n_identities_source;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "" : "\n") + ("[" + f.section + "]\n");
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : to_ini(cfg)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hli
