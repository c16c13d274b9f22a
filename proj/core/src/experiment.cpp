#include "hli/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "hli/image_io.hpp"

#ifndef HLI_VERSION
#define HLI_VERSION "dev"
#endif

namespace hli {

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.dataset.seed = seed;
  cfg.train.seed = seed;
  return cfg;
}

std::filesystem::path default_out_root() {
  const char* env = std::getenv("HLI_OUT_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::filesystem::path create_run_dir(const std::filesystem::path& root, const std::string& command) {
  std::filesystem::create_directories(root);
  for (int i = 1; i < 100000; ++i) {
    std::ostringstream name;
    name << command << '-' << std::setw(4) << std::setfill('0') << i;
    const auto dir = root / name.str();
    // create_directory reports false when the entry already exists.
    if (std::filesystem::create_directory(dir)) return dir;
  }
  throw Error("create_run_dir: no free run directory under " + root.string());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string code_version() { return HLI_VERSION; }

void RunManifest::write(const std::filesystem::path& run_dir) const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config_ini;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["code_version"] = code_version;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["artifacts"] = artifacts;
  j["results"] = results;
  std::ofstream out(run_dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + run_dir.string());
  out << std::setw(2) << j << '\n';
}

RunManifest RunManifest::read(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw Error("no manifest in " + run_dir.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_ini = j.at("config").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.code_version = j.at("code_version").get<std::string>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.at("finished_at").get<std::string>();
  m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  m.results = j.at("results");
  return m;
}

RunOutcome outcome_of(const AdaptResult& r) {
  RunOutcome o;
  const EpochMetrics& first = r.epochs.front();
  const EpochMetrics& last = r.epochs.back();
  o.pretrain_map = first.student.mean_ap;
  o.pretrain_top1 = first.student.top1;
  o.final_teacher_map = last.teacher.mean_ap;
  o.final_teacher_top1 = last.teacher.top1;
  o.final_student_map = last.student.mean_ap;
  o.final_student_top1 = last.student.top1;
  o.best_map = r.best.mean_ap;
  o.best_role = r.best.role;
  o.best_epoch = r.best.epoch;
  return o;
}

const PretrainCache::Entry& PretrainCache::get(const ExperimentConfig& cfg) {
  // Only dataset, architecture and pretraining fields matter here.
  ExperimentConfig key_cfg;
  key_cfg.dataset = cfg.dataset;
  key_cfg.arch = cfg.arch;
  key_cfg.train.epochs_pretrain = cfg.train.epochs_pretrain;
  key_cfg.train.steps_per_epoch = cfg.train.steps_per_epoch;
  key_cfg.train.learning_rate = cfg.train.learning_rate;
  key_cfg.train.weight_decay = cfg.train.weight_decay;
  key_cfg.train.lr_schedule = cfg.train.lr_schedule;
  key_cfg.train.P = cfg.train.P;
  key_cfg.train.K = cfg.train.K;
  key_cfg.train.triplet_margin = cfg.train.triplet_margin;
  key_cfg.train.seed = cfg.train.seed;
  const std::string key = to_ini(key_cfg);
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  Entry e;
  e.data = generate_domain_pair(cfg.dataset);
  e.pretrain = pretrain_source(Network(cfg.arch), e.data.source, cfg.train);
  return entries_.emplace(key, std::move(e)).first->second;
}

AdaptResult run_experiment(const ExperimentConfig& cfg, PretrainCache& cache, const AdaptHooks& hooks) {
  const PretrainCache::Entry& e = cache.get(cfg);
  const TargetView target(e.data.target);
  return adapt(Network(cfg.arch), e.pretrain.params, target, cfg.train, hooks);
}

ExperimentConfig apply_component(ExperimentConfig base, const std::string& rung) {
  LossWeights& w = base.train.loss_weights;
  if (rung == "baseline") {
    w.lambda_imi = 0;
    w.lambda_sd = 0;
    base.train.erase.prob = 0;
  } else if (rung == "alms") {
    w.lambda_imi = 0;
    base.train.erase.prob = 0;
  } else if (rung == "alms_aulm") {
    w.lambda_imi = 0;
  } else if (rung != "hli") {
    throw Error("unknown component '" + rung + "' (expected baseline, alms, alms_aulm or hli)");
  }
  return base;
}

std::vector<AblationArm> component_arms(const ExperimentConfig& base, const std::vector<std::string>& rungs) {
  std::vector<AblationArm> arms;
  for (const auto& r : rungs) arms.push_back({"component", r, apply_component(base, r)});
  return arms;
}

std::vector<AblationArm> prob_arms(const ExperimentConfig& base, const std::vector<double>& probs) {
  std::vector<AblationArm> arms;
  for (double p : probs) {
    ExperimentConfig c = base;
    c.train.erase.prob = p;
    c.train.validate();
    std::ostringstream name;
    name << "prob=" << p;
    arms.push_back({"prob", name.str(), c});
  }
  return arms;
}

std::vector<AblationArm> k_arms(const ExperimentConfig& base, const std::vector<int>& ks) {
  std::vector<AblationArm> arms;
  for (int k : ks) {
    ExperimentConfig c = base;
    c.train.num_clusters = k;
    c.validate();
    arms.push_back({"k", "k=" + std::to_string(k), c});
  }
  return arms;
}

AblationArm random_point_arm(const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.train.erase_points = PointSource::kRandom;
  return {"points", "random_points", c};
}

double AblationRow::mean_map() const {
  double s = 0;
  for (const auto& r : runs) s += r.final_teacher_map;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

double AblationRow::mean_top1() const {
  double s = 0;
  for (const auto& r : runs) s += r.final_teacher_top1;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

double AblationRow::std_map() const {
  if (runs.size() < 2) return 0.0;
  const double m = mean_map();
  double s = 0;
  for (const auto& r : runs) s += (r.final_teacher_map - m) * (r.final_teacher_map - m);
  return std::sqrt(s / static_cast<double>(runs.size() - 1));
}

std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms, const std::vector<std::uint64_t>& seeds,
                                      PretrainCache& cache, const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  for (const auto& arm : arms) {
    AblationRow row{arm.group, arm.name, seeds, {}};
    for (std::uint64_t seed : seeds) {
      const RunOutcome o = outcome_of(run_experiment(with_seed(arm.cfg, seed), cache));
      row.runs.push_back(o);
      if (progress) progress(arm, seed, o);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "group,name,seeds,mAP_mean,mAP_std,top1_mean,student_mAP_mean,pretrain_mAP_mean,best_mAP_mean\n";
  for (const auto& r : rows) {
    double student = 0, pre = 0, best = 0;
    for (const auto& o : r.runs) {
      student += o.final_student_map;
      pre += o.pretrain_map;
      best += o.best_map;
    }
    const double n = r.runs.empty() ? 1.0 : static_cast<double>(r.runs.size());
    out << r.group << ',' << r.name << ',' << r.runs.size() << ',' << r.mean_map() << ',' << r.std_map() << ','
        << r.mean_top1() << ',' << student / n << ',' << pre / n << ',' << best / n << '\n';
  }
}

void write_ablation_plot(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                         const std::string& title) {
  std::vector<std::string> labels;
  std::vector<double> values, errors;
  for (const auto& r : rows) {
    labels.push_back(r.name);
    values.push_back(r.mean_map());
    errors.push_back(r.std_map());
  }
  write_bar_plot_svg(path, title, labels, values, errors);
}

}  // namespace hli
