#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hli/checkpoint.hpp"
#include "hli/config.hpp"
#include "hli/experiment.hpp"
#include "hli/train.hpp"

namespace fs = std::filesystem;

namespace {

// Bad input the user can fix; maps to exit code 2.
struct UsageError : hli::Error {
  using hli::Error::Error;
};

struct Common {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
};

hli::ExperimentConfig resolve_config(const Common& c) {
  hli::ExperimentConfig cfg = c.config.empty() ? hli::parse_config("") : hli::load_config(c.config);
  if (c.seed) cfg = hli::with_seed(cfg, *c.seed);
  return cfg;
}

fs::path out_root(const Common& c) { return c.out_dir.empty() ? hli::default_out_root() : fs::path(c.out_dir); }

hli::RunManifest start_manifest(const std::string& command, const hli::ExperimentConfig& cfg) {
  hli::RunManifest m;
  m.command = command;
  m.config_ini = hli::to_ini(cfg);
  m.config_hash = hli::config_hash(cfg);
  m.seed = cfg.train.seed;
  m.code_version = hli::code_version();
  m.started_at = hli::utc_timestamp();
  return m;
}

void echo_config(const fs::path& dir, const hli::ExperimentConfig& cfg) {
  std::ofstream(dir / "config.ini") << hli::to_ini(cfg);
}

hli::LoadedCheckpoint load_required(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  fs::path json = path;
  if (json.extension() != ".json") json += ".json";
  if (!fs::exists(json)) throw UsageError("checkpoint not found: " + path);
  return hli::load_checkpoint(path);
}

template <typename T>
std::vector<T> parse_list(const std::string& flag, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !(is >> std::ws).eof()) throw UsageError(flag + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

int cmd_pretrain(const Common& c) {
  const hli::ExperimentConfig cfg = resolve_config(c);
  const fs::path dir = hli::create_run_dir(out_root(c), "pretrain");
  hli::RunManifest m = start_manifest("pretrain", cfg);
  echo_config(dir, cfg);

  const hli::DomainPair data = hli::generate_domain_pair(cfg.dataset);
  const hli::Network net(cfg.arch);
  const hli::PretrainResult r = hli::pretrain_source(net, data.source, cfg.train);
  hli::write_pretrain_csv(dir / "pretrain_metrics.csv", r.epochs);
  hli::write_steps_csv(dir / "pretrain_steps.csv", r.steps);
  hli::save_checkpoint(dir / "model", r.params,
                       {"student", static_cast<std::int64_t>(r.steps.size()), m.config_hash, cfg.arch});

  const hli::TargetView target(data.target);
  const hli::RetrievalSummary s = hli::evaluate_model(net, r.params, target);
  m.artifacts = {{"checkpoint", "model.json"},
                 {"metrics", "pretrain_metrics.csv"},
                 {"steps", "pretrain_steps.csv"},
                 {"config", "config.ini"}};
  m.results = {{"source_accuracy", r.source_accuracy}, {"target_mAP", s.mean_ap}, {"target_top1", s.top1}};
  m.finished_at = hli::utc_timestamp();
  m.write(dir);
  std::cout << "source accuracy " << r.source_accuracy << ", target mAP " << s.mean_ap << ", top-1 " << s.top1
            << "\nrun directory: " << dir.string() << "\n";
  return 0;
}

int cmd_adapt(const Common& c, bool dump_cam) {
  const hli::ExperimentConfig cfg = resolve_config(c);
  hli::LoadedCheckpoint ck = load_required(c.checkpoint);
  const hli::Network net(cfg.arch);
  if (!ck.params.same_schema(net.init_params(0))) {
    throw UsageError("checkpoint does not match the configured architecture: " + ck.params.schema_string());
  }
  const fs::path dir = hli::create_run_dir(out_root(c), "adapt");
  hli::RunManifest m = start_manifest("adapt", cfg);
  echo_config(dir, cfg);
  fs::create_directories(dir / "checkpoints");

  const hli::DomainPair data = hli::generate_domain_pair(cfg.dataset);
  const hli::TargetView target(data.target);
  hli::AdaptHooks hooks;
  if (dump_cam) hooks.debug_dir = dir / "cam";
  hooks.on_epoch = [&](const hli::EpochMetrics& e, const hli::ModelParams& student, const hli::TeacherState& teacher) {
    std::cout << "epoch " << e.epoch << "  student mAP " << e.student.mean_ap << " top-1 " << e.student.top1
              << "  teacher mAP " << e.teacher.mean_ap << " top-1 " << e.teacher.top1 << std::endl;
    // Retention: only the latest pair is kept; best is written at the end.
    hli::save_checkpoint(dir / "checkpoints" / "last_student", student, {"student", teacher.step, m.config_hash, cfg.arch});
    hli::save_checkpoint(dir / "checkpoints" / "last_teacher", teacher.params,
                         {"teacher", teacher.step, m.config_hash, cfg.arch});
  };
  hooks.on_cluster = [&](int epoch, const hli::PseudoLabeling& l) {
    hli::write_assignments_csv(dir / ("pseudo_labels_epoch" + std::to_string(epoch) + ".csv"), l);
  };
  const hli::AdaptResult r = hli::adapt(net, ck.params, target, cfg.train, hooks);

  hli::write_adapt_csv(dir / "adapt_metrics.csv", r.epochs);
  hli::write_steps_csv(dir / "adapt_steps.csv", r.steps);
  hli::save_checkpoint(dir / "checkpoints" / "best", r.best.params, {r.best.role, r.best.epoch, m.config_hash, cfg.arch});
  hli::RetrievalResult full;
  hli::evaluate_model(net, r.best.params, target, &full);
  hli::write_retrieval_summary_csv(dir / "best_eval.csv", full);
  hli::write_cmc_csv(dir / "best_cmc.csv", full);
  hli::write_cmc_plot(dir / "best_cmc.svg", full, "CMC, best " + r.best.role + " (epoch " + std::to_string(r.best.epoch) + ")");

  const hli::EpochMetrics& last = r.epochs.back();
  m.artifacts = {{"metrics", "adapt_metrics.csv"},
                 {"steps", "adapt_steps.csv"},
                 {"best_checkpoint", "checkpoints/best.json"},
                 {"last_student", "checkpoints/last_student.json"},
                 {"last_teacher", "checkpoints/last_teacher.json"},
                 {"cmc_plot", "best_cmc.svg"},
                 {"config", "config.ini"},
                 {"source_checkpoint", fs::absolute(c.checkpoint).string()}};
  m.results = {{"best_mAP", r.best.mean_ap},
               {"best_role", r.best.role},
               {"best_epoch", r.best.epoch},
               {"final_student_mAP", last.student.mean_ap},
               {"final_student_top1", last.student.top1},
               {"final_teacher_mAP", last.teacher.mean_ap},
               {"final_teacher_top1", last.teacher.top1}};
  m.finished_at = hli::utc_timestamp();
  m.write(dir);
  std::cout << "best mAP " << r.best.mean_ap << " (" << r.best.role << ", epoch " << r.best.epoch
            << ")\nrun directory: " << dir.string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& dataset_spec) {
  hli::ExperimentConfig cfg = dataset_spec.empty() ? resolve_config(c) : hli::load_config(dataset_spec);
  if (c.seed) cfg.dataset.seed = *c.seed;
  const hli::LoadedCheckpoint ck = load_required(c.checkpoint);
  hli::ArchConfig arch = ck.meta.arch;
  arch.num_classes = hli::num_classes(ck.params);
  if (arch.height != cfg.dataset.image_height || arch.width != cfg.dataset.image_width) {
    throw UsageError("checkpoint image size does not match the dataset spec");
  }
  const hli::Network net(arch);
  if (!ck.params.same_schema(net.init_params(0))) throw UsageError("checkpoint tensors do not match its architecture");

  const fs::path dir = hli::create_run_dir(out_root(c), "eval");
  hli::RunManifest m = start_manifest("eval", cfg);
  echo_config(dir, cfg);
  const hli::DomainPair data = hli::generate_domain_pair(cfg.dataset);
  const hli::TargetView target(data.target);
  hli::RetrievalResult full;
  const hli::RetrievalSummary s = hli::evaluate_model(net, ck.params, target, &full);
  hli::write_retrieval_summary_csv(dir / "eval.csv", full);
  hli::write_cmc_csv(dir / "cmc.csv", full);
  hli::write_cmc_plot(dir / "cmc.svg", full, "CMC");
  m.artifacts = {{"summary", "eval.csv"}, {"cmc", "cmc.csv"}, {"cmc_plot", "cmc.svg"},
                 {"checkpoint", fs::absolute(c.checkpoint).string()}};
  m.results = {{"mAP", s.mean_ap}, {"top1", s.top1}, {"top5", s.top5}, {"top10", s.top10}};
  m.finished_at = hli::utc_timestamp();
  m.write(dir);
  std::cout << std::setprecision(17) << "mAP " << s.mean_ap << "\ntop1 " << s.top1 << "\ntop5 " << s.top5
            << "\ntop10 " << s.top10 << "\nrun directory: " << dir.string() << "\n";
  return 0;
}

struct AblateArgs {
  std::string components, prob_sweep, k_sweep;
  bool random_arm = false;
  int seeds = 3;
};

int cmd_ablate(const Common& c, const AblateArgs& a) {
  const hli::ExperimentConfig base = resolve_config(c);
  if (a.seeds < 1) throw UsageError("--seeds: must be >= 1");
  std::vector<hli::AblationArm> arms;
  try {
    if (!a.components.empty()) {
      const auto rungs = parse_list<std::string>("--components", a.components);
      auto part = hli::component_arms(base, rungs);
      arms.insert(arms.end(), part.begin(), part.end());
    }
    if (!a.prob_sweep.empty()) {
      auto part = hli::prob_arms(base, parse_list<double>("--prob-sweep", a.prob_sweep));
      arms.insert(arms.end(), part.begin(), part.end());
    }
    if (!a.k_sweep.empty()) {
      auto part = hli::k_arms(base, parse_list<int>("--k-sweep", a.k_sweep));
      arms.insert(arms.end(), part.begin(), part.end());
    }
  } catch (const UsageError&) {
    throw;
  } catch (const hli::Error& e) {
    throw UsageError(e.what());
  }
  if (a.random_arm) arms.push_back(hli::random_point_arm(base));
  if (arms.empty()) throw UsageError("nothing to run: pass --components, --prob-sweep, --k-sweep or --random-arm");

  const fs::path dir = hli::create_run_dir(out_root(c), "ablate");
  hli::RunManifest m = start_manifest("ablate", base);
  echo_config(dir, base);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.seeds; ++i) seeds.push_back(base.train.seed + static_cast<std::uint64_t>(i));

  hli::PretrainCache cache;
  const auto rows = hli::run_ablation(arms, seeds, cache, [](const hli::AblationArm& arm, std::uint64_t seed,
                                                             const hli::RunOutcome& o) {
    std::cout << arm.group << " " << arm.name << " seed " << seed << ": mAP " << o.final_teacher_map << " top-1 "
              << o.final_teacher_top1 << std::endl;
  });
  hli::write_ablation_csv(dir / "ablation.csv", rows);
  for (const std::string group : {"component", "prob", "k", "points"}) {
    std::vector<hli::AblationRow> sub;
    for (const auto& r : rows) {
      if (r.group == group) sub.push_back(r);
    }
    if (sub.empty()) continue;
    hli::write_ablation_plot(dir / ("ablation_" + group + ".svg"), sub, "Target mAP by " + group);
    m.artifacts["plot_" + group] = "ablation_" + group + ".svg";
  }
  m.artifacts["table"] = "ablation.csv";
  m.artifacts["config"] = "config.ini";
  for (const auto& r : rows) m.results[r.group + ":" + r.name] = {{"mAP", r.mean_map()}, {"top1", r.mean_top1()}};
  m.finished_at = hli::utc_timestamp();
  m.write(dir);
  std::cout << "run directory: " << dir.string() << "\n";
  return 0;
}

int cmd_generate(const Common& c) {
  const hli::ExperimentConfig cfg = resolve_config(c);
  const fs::path dir = hli::create_run_dir(out_root(c), "dataset");
  const hli::DomainPair data = hli::generate_domain_pair(cfg.dataset);
  hli::save_dataset(dir / "source", data.source, cfg.dataset.image_height, cfg.dataset.image_width);
  hli::save_dataset(dir / "target", data.target, cfg.dataset.image_height, cfg.dataset.image_width);
  hli::RunManifest m = start_manifest("generate", cfg);
  echo_config(dir, cfg);
  m.artifacts = {{"source", "source/manifest.csv"}, {"target", "target/manifest.csv"}};
  m.finished_at = hli::utc_timestamp();
  m.write(dir);
  std::cout << "run directory: " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hard-sample-aware unsupervised domain adaptation on a synthetic re-identification benchmark"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("--config", common.config, "Config file (sectioned key = value)");
    sub->add_option("--out-dir", common.out_dir, "Output root (default: $HLI_OUT_DIR or ./runs)");
    sub->add_option("--seed", common.seed, "Overrides the dataset and training seed");
    if (with_checkpoint) sub->add_option("--checkpoint", common.checkpoint, "Checkpoint stem or .json manifest");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Train on the labeled source domain");
  add_common(pretrain, false);
  auto* adapt = app.add_subcommand("adapt", "Adapt a pretrained checkpoint to the target domain");
  add_common(adapt, true);
  bool dump_cam = false;
  adapt->add_flag("--dump-cam", dump_cam, "Write original/erased/CAM images for the first batch of each epoch");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the target domain");
  add_common(eval, true);
  std::string dataset_spec;
  eval->add_option("--dataset-spec", dataset_spec, "Config file whose [dataset] section defines the benchmark");
  auto* ablate = app.add_subcommand("ablate", "Component ladder and hyperparameter sweeps");
  add_common(ablate, false);
  AblateArgs aa;
  ablate->add_option("--components", aa.components, "Comma list from baseline,alms,alms_aulm,hli");
  ablate->add_option("--prob-sweep", aa.prob_sweep, "Comma list of erase probabilities");
  ablate->add_option("--k-sweep", aa.k_sweep, "Comma list of cluster counts");
  ablate->add_flag("--random-arm", aa.random_arm, "Add full HLI with random erase centres");
  ablate->add_option("--seeds", aa.seeds, "Seeds per arm, counting up from the base seed")->capture_default_str();
  auto* generate = app.add_subcommand("generate", "Write the synthetic source and target sets as PNGs");
  add_common(generate, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pretrain) return cmd_pretrain(common);
    if (*adapt) return cmd_adapt(common, dump_cam);
    if (*eval) return cmd_eval(common, dataset_spec);
    if (*ablate) return cmd_ablate(common, aa);
    if (*generate) return cmd_generate(common);
  } catch (const hli::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
