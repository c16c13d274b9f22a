#ifndef HLI_TRAIN_HPP_
#define HLI_TRAIN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hli/aulm.hpp"
#include "hli/datagen.hpp"
#include "hli/ema.hpp"
#include "hli/eval.hpp"
#include "hli/losses.hpp"
#include "hli/model.hpp"
#include "hli/pseudo.hpp"

namespace hli {

enum class PointSource { kAdaptive, kRandom };

struct TrainConfig {
  int epochs_pretrain = 10;
  int epochs_adapt = 6;
  int steps_per_epoch = 20;
  double learning_rate = 3.5e-4;
  double weight_decay = 5e-4;
  // (epoch, multiplier): from that pretraining epoch on, the rate is
  // multiplied by `multiplier` (cumulative).
  std::vector<std::pair<int, double>> lr_schedule;
  int P = 8;
  int K = 4;
  int num_clusters = 16;
  int kmeans_max_iterations = 100;
  LossWeights loss_weights;
  double triplet_margin = 0.3;
  double exploitation_clamp = 4.0;
  EraseConfig erase;
  PointSource erase_points = PointSource::kAdaptive;
  double momentum_ema = 0.999;
  std::uint64_t seed = 1;

  void validate() const;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Updates every trainable tensor of params. weight_decay is added to the
  // gradient as an L2 term.
  void step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay);

  // Drops moment estimates of one tensor (after its shape changed).
  void reset(const std::string& name);

 private:
  struct Moments {
    std::vector<double> m, v;
    std::int64_t t = 0;
  };
  double beta1_, beta2_, eps_;
  std::map<std::string, Moments> state_;
};

struct StepRecord {
  std::int64_t step = 0;
  LossTerms terms;
  double total = 0.0;
};

struct ObjectiveResult {
  LossTerms terms;
  double total = 0.0;
  ModelParams grads;
  ForwardCache cache;
  CorrectnessMask mask;
};

// l_id + l_tri on a labeled batch.
ObjectiveResult pretrain_objective(const Network& net, const ModelParams& params, const Tensor& images,
                                   std::span<const int> labels, const TrainConfig& cfg);

// Full adaptation objective on a target batch. teacher_embedding and
// teacher_logits come from the teacher's evaluation-mode forward on the
// un-erased images and are treated as constants.
ObjectiveResult adaptation_objective(const Network& net, const ModelParams& student, const Tensor& images,
                                     const Matrix& teacher_embedding, const Matrix& teacher_logits,
                                     std::span<const int> labels, const TrainConfig& cfg);

struct RetrievalSummary {
  double mean_ap = 0, top1 = 0, top5 = 0, top10 = 0;
};

RetrievalSummary summarize(const RetrievalResult& r);

// Embeds the target view in evaluation mode and scores retrieval against
// the withheld identities.
RetrievalSummary evaluate_model(const Network& net, const ModelParams& params, const TargetView& target,
                                RetrievalResult* full = nullptr);

struct PretrainEpoch {
  int epoch = 0;
  double learning_rate = 0;
  double l_id = 0, l_tri = 0, total = 0;
  double source_accuracy = 0;
};

struct PretrainResult {
  ModelParams params;
  std::vector<PretrainEpoch> epochs;
  std::vector<StepRecord> steps;
  double source_accuracy = 0;
};

// Classifier argmax accuracy over the records (evaluation mode).
double classification_accuracy(const Network& net, const ModelParams& params, std::span<const SampleRecord> records);

// Network must be built with num_classes == number of source identities.
PretrainResult pretrain_source(const Network& net, std::span<const SampleRecord> source, const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  LossTerms terms;  // means over the epoch's steps
  double total = 0;
  RetrievalSummary student, teacher;
  double inertia = 0;
  double cluster_nmi = 0;  // pseudo labels vs withheld identities, evaluation only
};

struct BestModel {
  ModelParams params;
  std::string role;  // "student" | "teacher"
  int epoch = 0;
  double mean_ap = -1;
};

struct AdaptResult {
  ModelParams student;
  TeacherState teacher;
  std::vector<EpochMetrics> epochs;  // epoch 0 is the pre-adaptation evaluation
  std::vector<StepRecord> steps;
  BestModel best;
};

struct AdaptHooks {
  // Called after each epoch's evaluation (including epoch 0).
  std::function<void(const EpochMetrics&, const ModelParams& student, const TeacherState& teacher)> on_epoch;
  std::function<void(int epoch, const PseudoLabeling&)> on_cluster;
  // When set, the first batch of every epoch is dumped here (original,
  // erased, CAM overlay).
  std::filesystem::path debug_dir;
};

AdaptResult adapt(const Network& net, const ModelParams& student, const TargetView& target, const TrainConfig& cfg,
                  const AdaptHooks& hooks = {});

void write_pretrain_csv(const std::filesystem::path& path, std::span<const PretrainEpoch> epochs);
// epoch,l_id,l_sid,l_tri,l_stri,l_mim,l_exp,l_sd,total,student_mAP,student_top1,
// student_top5,teacher_mAP,teacher_top1,teacher_top5,inertia,cluster_nmi
void write_adapt_csv(const std::filesystem::path& path, std::span<const EpochMetrics> epochs);
// step,l_id,l_sid,l_tri,l_stri,l_mim,l_exp,l_sd,total
void write_steps_csv(const std::filesystem::path& path, std::span<const StepRecord> steps);

}  // namespace hli

#endif  // HLI_TRAIN_HPP_
