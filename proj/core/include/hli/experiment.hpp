#ifndef HLI_EXPERIMENT_HPP_
#define HLI_EXPERIMENT_HPP_

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hli/config.hpp"
#include "hli/train.hpp"

namespace hli {

// Returns cfg with both the dataset and the training seed set to `seed`.
ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed);

// HLI_OUT_DIR when set, otherwise ./runs.
std::filesystem::path default_out_root();

// Creates <root>/<command>-NNNN with the first unused number. Never reuses
// an existing directory.
std::filesystem::path create_run_dir(const std::filesystem::path& root, const std::string& command);

struct RunManifest {
  std::string command;
  std::string config_ini;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version;
  std::string started_at, finished_at;  // UTC, ISO 8601
  std::map<std::string, std::string> artifacts;
  nlohmann::json results = nlohmann::json::object();

  void write(const std::filesystem::path& run_dir) const;
  static RunManifest read(const std::filesystem::path& run_dir);
};

std::string utc_timestamp();
std::string code_version();

// Which metric an ablation row reports: the fixed-budget final epoch of
// the temporally averaged model.
struct RunOutcome {
  double final_teacher_map = 0, final_teacher_top1 = 0;
  double final_student_map = 0, final_student_top1 = 0;
  double pretrain_map = 0, pretrain_top1 = 0;
  double best_map = 0;
  std::string best_role;
  int best_epoch = 0;
};

RunOutcome outcome_of(const AdaptResult& r);

// Caches one pretrained model per (dataset, pretraining) configuration so
// arms that differ only in adaptation settings share it.
class PretrainCache {
 public:
  struct Entry {
    DomainPair data;
    PretrainResult pretrain;
  };
  const Entry& get(const ExperimentConfig& cfg);

 private:
  std::map<std::string, Entry> entries_;
};

// Pretrain (cached) then adapt one configuration.
AdaptResult run_experiment(const ExperimentConfig& cfg, PretrainCache& cache, const AdaptHooks& hooks = {});

// Ladder rung names, in order.
inline const std::vector<std::string> kComponentLadder{"baseline", "alms", "alms_aulm", "hli"};

// baseline: lambda_imi = lambda_sd = 0, prob = 0; alms: structure
// distillation on; alms_aulm: plus erasing; hli: the base config.
ExperimentConfig apply_component(ExperimentConfig base, const std::string& rung);

struct AblationArm {
  std::string group;  // "component", "prob", "k" or "points"
  std::string name;
  ExperimentConfig cfg;
};

std::vector<AblationArm> component_arms(const ExperimentConfig& base, const std::vector<std::string>& rungs);
std::vector<AblationArm> prob_arms(const ExperimentConfig& base, const std::vector<double>& probs);
std::vector<AblationArm> k_arms(const ExperimentConfig& base, const std::vector<int>& ks);
// Full HLI with uniformly random erase centres.
AblationArm random_point_arm(const ExperimentConfig& base);

struct AblationRow {
  std::string group, name;
  std::vector<std::uint64_t> seeds;
  std::vector<RunOutcome> runs;

  double mean_map() const;
  double mean_top1() const;
  double std_map() const;
};

using AblationProgress = std::function<void(const AblationArm&, std::uint64_t seed, const RunOutcome&)>;

std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms, const std::vector<std::uint64_t>& seeds,
                                      PretrainCache& cache, const AblationProgress& progress = {});

// group,name,seeds,mAP_mean,mAP_std,top1_mean,student_mAP_mean,pretrain_mAP_mean,best_mAP_mean
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
void write_ablation_plot(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                         const std::string& title);

}  // namespace hli

#endif  // HLI_EXPERIMENT_HPP_
