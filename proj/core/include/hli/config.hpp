#ifndef HLI_CONFIG_HPP_
#define HLI_CONFIG_HPP_

#include <filesystem>
#include <string>

#include "hli/datagen.hpp"
#include "hli/model.hpp"
#include "hli/train.hpp"

namespace hli {

// Invalid configuration; what() starts with "<section>.<key>: ".
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ArchConfig arch;  // num_classes is derived from the dataset
  TrainConfig train;

  void validate() const;
};

// Sectioned key = value text. Unknown sections or keys are rejected;
// missing keys keep their defaults.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text listing every field; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& cfg);

// 16 hex digits of FNV-1a over to_ini(cfg).
std::string config_hash(const ExperimentConfig& cfg);

PointSource parse_point_source(const std::string& s);
std::string to_string(PointSource p);

}  // namespace hli

#endif  // HLI_CONFIG_HPP_
