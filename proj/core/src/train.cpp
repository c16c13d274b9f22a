#include "hli/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include "hli/normalize.hpp"

namespace hli {

namespace {

bool finite(double v) { return std::isfinite(v); }

void require(bool ok, const std::string& field, const std::string& reason) {
  if (!ok) throw Error(field + ": " + reason);
}

Tensor all_images(const TargetView& target, int h, int w) {
  std::vector<int> idx(target.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return gather_images(target, idx, h, w);
}

Tensor slice_images(const Tensor& images, std::span<const int> idx) {
  const std::size_t per = images.size() / static_cast<std::size_t>(images.dim(0));
  Tensor out({static_cast<int>(idx.size()), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

void accumulate(LossTerms& acc, const LossTerms& t) {
  acc.l_id += t.l_id;
  acc.l_sid += t.l_sid;
  acc.l_tri += t.l_tri;
  acc.l_stri += t.l_stri;
  acc.l_mim += t.l_mim;
  acc.l_exp += t.l_exp;
  acc.l_imi += t.l_imi;
  acc.l_sd += t.l_sd;
}

LossTerms scaled(LossTerms t, double s) {
  t.l_id *= s;
  t.l_sid *= s;
  t.l_tri *= s;
  t.l_stri *= s;
  t.l_mim *= s;
  t.l_exp *= s;
  t.l_imi *= s;
  t.l_sd *= s;
  return t;
}

double scheduled_rate(const TrainConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (const auto& [e, mult] : cfg.lr_schedule) {
    if (epoch >= e) lr *= mult;
  }
  return lr;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs_pretrain >= 0, "train.epochs_pretrain", "must be >= 0");
  require(epochs_adapt >= 0, "train.epochs_adapt", "must be >= 0");
  require(steps_per_epoch >= 1, "train.steps_per_epoch", "must be >= 1");
  require(finite(learning_rate) && learning_rate >= 0, "train.learning_rate", "must be finite and >= 0");
  require(finite(weight_decay) && weight_decay >= 0, "train.weight_decay", "must be finite and >= 0");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    require(lr_schedule[i].first >= 1, "train.lr_schedule", "epochs must be >= 1");
    require(finite(lr_schedule[i].second) && lr_schedule[i].second >= 0, "train.lr_schedule",
            "multipliers must be finite and >= 0");
    if (i) require(lr_schedule[i].first > lr_schedule[i - 1].first, "train.lr_schedule", "epochs must strictly increase");
  }
  require(P >= 2, "train.P", "must be >= 2");
  require(K >= 2, "train.K", "must be >= 2");
  require(num_clusters >= 2, "cluster.num_clusters", "must be >= 2");
  require(kmeans_max_iterations >= 1, "cluster.max_iterations", "must be >= 1");
  loss_weights.validate();
  require(finite(triplet_margin) && triplet_margin >= 0, "loss.triplet_margin", "must be finite and >= 0");
  require(exploitation_clamp > 0, "loss.exploitation_clamp", "must be > 0");
  require(erase.prob >= 0 && erase.prob <= 1, "erase.prob", "must lie in [0,1]");
  require(erase.erase_h >= 1, "erase.erase_h", "must be >= 1");
  require(erase.erase_w >= 1, "erase.erase_w", "must be >= 1");
  require(momentum_ema >= 0 && momentum_ema <= 1, "ema.momentum", "must lie in [0,1]");
}

void Adam::step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay) {
  if (!params.same_schema(grads)) throw Error("Adam::step: gradient schema mismatch");
  auto& entries = params.entries();
  const auto& gentries = grads.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!entries[k].trainable) continue;
    auto& theta = entries[k].value.data;
    const auto& g = gentries[k].value.data;
    Moments& st = state_[entries[k].name];
    if (st.m.size() != theta.size()) {
      st.m.assign(theta.size(), 0.0);
      st.v.assign(theta.size(), 0.0);
      st.t = 0;
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i] + weight_decay * theta[i];
      st.m[i] = beta1_ * st.m[i] + (1 - beta1_) * gi;
      st.v[i] = beta2_ * st.v[i] + (1 - beta2_) * gi * gi;
      theta[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps_);
    }
  }
}

void Adam::reset(const std::string& name) { state_.erase(name); }

ObjectiveResult pretrain_objective(const Network& net, const ModelParams& params, const Tensor& images,
                                   std::span<const int> labels, const TrainConfig& cfg) {
  ObjectiveResult r;
  const FeatureBundle out = net.forward(params, images, Mode::kTrain, &r.cache);
  const LossGrad id = cross_entropy(out.logits, labels);
  const Matrix normed = l2_normalize_rows(out.embedding);
  const LossGrad tri = batch_hard_triplet(normed, labels, cfg.triplet_margin);
  r.terms.l_id = id.value;
  r.terms.l_tri = tri.value;
  r.total = id.value + tri.value;
  if (!finite(id.value)) throw NonFiniteLoss("l_id");
  if (!finite(tri.value)) throw NonFiniteLoss("l_tri");
  r.grads = params.zeros_like();
  net.backward(params, r.cache, l2_normalize_rows_backward(out.embedding, tri.grad), id.grad, r.grads);
  return r;
}

ObjectiveResult adaptation_objective(const Network& net, const ModelParams& student, const Tensor& images,
                                     const Matrix& teacher_embedding, const Matrix& teacher_logits,
                                     std::span<const int> labels, const TrainConfig& cfg) {
  const LossWeights& w = cfg.loss_weights;
  ObjectiveResult r;
  const FeatureBundle out = net.forward(student, images, Mode::kTrain, &r.cache);
  const Matrix s_n = l2_normalize_rows(out.embedding);
  const Matrix t_n = l2_normalize_rows(teacher_embedding);

  const BaseLosses base = base_losses(out.logits, s_n, teacher_logits, t_n, labels, cfg.triplet_margin);
  r.mask = correctness_mask(teacher_logits, labels);
  const LossGrad mim = mimic_loss(s_n, t_n, r.mask);
  const LossGrad exp = exploitation_loss(s_n, t_n, r.mask, labels, {cfg.exploitation_clamp});
  const LossGrad sd = structure_distillation_loss(out.embedding, relation_matrix(teacher_embedding));

  LossTerms& t = r.terms;
  t.l_id = base.id.value;
  t.l_sid = base.sid.value;
  t.l_tri = base.tri.value;
  t.l_stri = base.stri.value;
  t.l_mim = mim.value;
  t.l_exp = exp.value;
  t.l_imi = imitation_loss(mim.value, exp.value, w);
  t.l_sd = sd.value;
  r.total = total_loss(t, w);

  const Matrix d_logits = (1 - w.lambda_id) * base.id.grad + w.lambda_id * base.sid.grad;
  const Matrix d_normed = (1 - w.lambda_tri) * base.tri.grad + w.lambda_tri * base.stri.grad +
                          w.lambda_imi * (w.alpha * mim.grad + w.beta * exp.grad);
  const Matrix d_emb = l2_normalize_rows_backward(out.embedding, d_normed) + w.lambda_sd * sd.grad;
  r.grads = student.zeros_like();
  net.backward(student, r.cache, d_emb, d_logits, r.grads);
  return r;
}

RetrievalSummary summarize(const RetrievalResult& r) {
  return {r.mean_ap, r.top_k(1), r.top_k(5), r.top_k(10)};
}

RetrievalSummary evaluate_model(const Network& net, const ModelParams& params, const TargetView& target,
                                RetrievalResult* full) {
  const ArchConfig& a = net.arch();
  const Matrix emb = net.embed(params, all_images(target, a.height, a.width));
  RetrievalResult r = evaluate(emb, target.identities_for_evaluation(), target.nuisance_ids());
  const RetrievalSummary s = summarize(r);
  if (full) *full = std::move(r);
  return s;
}

double classification_accuracy(const Network& net, const ModelParams& params, std::span<const SampleRecord> records) {
  if (records.empty()) throw Error("classification_accuracy: no records");
  std::vector<int> ids = identities_of(records);
  std::vector<int> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<int> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  const ArchConfig& a = net.arch();
  const Tensor images = gather_images(records, idx, a.height, a.width);
  const FeatureBundle out = net.forward(params, images, Mode::kEval);
  int correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    Eigen::Index pred = 0;
    out.logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&pred);
    const auto cls = std::lower_bound(sorted.begin(), sorted.end(), ids[i]) - sorted.begin();
    correct += pred == cls;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

PretrainResult pretrain_source(const Network& net, std::span<const SampleRecord> source, const TrainConfig& cfg) {
  cfg.validate();
  if (source.empty()) throw Error("pretrain_source: empty source set");
  std::vector<int> ids = identities_of(source);
  std::map<int, int> class_of;
  for (int id : ids) class_of.emplace(id, 0);
  int next = 0;
  for (auto& [id, cls] : class_of) cls = next++;
  if (next != net.arch().num_classes) {
    throw Error("pretrain_source: network has " + std::to_string(net.arch().num_classes) + " classes but source has " +
                std::to_string(next) + " identities");
  }
  std::vector<int> labels(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) labels[i] = class_of[ids[i]];

  const ArchConfig& a = net.arch();
  PretrainResult res;
  res.params = net.init_params(mix_seed(cfg.seed, 1));
  std::mt19937_64 batch_rng(mix_seed(cfg.seed, 2));
  Adam adam;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs_pretrain; ++epoch) {
    const double lr = scheduled_rate(cfg, epoch);
    PretrainEpoch row;
    row.epoch = epoch;
    row.learning_rate = lr;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      const PkBatch batch = make_pk_batch(labels, cfg.P, cfg.K, batch_rng);
      const Tensor images = gather_images(source, batch.indices, a.height, a.width);
      ObjectiveResult obj;
      try {
        obj = pretrain_objective(net, res.params, images, batch.labels, cfg);
      } catch (const NonFiniteLoss& e) {
        throw Error("pretrain aborted at step " + std::to_string(step + 1) + ": " + e.what());
      }
      adam.step(res.params, obj.grads, lr, cfg.weight_decay);
      net.update_running_stats(res.params, obj.cache);
      ++step;
      res.steps.push_back({step, obj.terms, obj.total});
      row.l_id += obj.terms.l_id;
      row.l_tri += obj.terms.l_tri;
      row.total += obj.total;
    }
    row.l_id /= cfg.steps_per_epoch;
    row.l_tri /= cfg.steps_per_epoch;
    row.total /= cfg.steps_per_epoch;
    row.source_accuracy = classification_accuracy(net, res.params, source);
    res.epochs.push_back(row);
  }
  res.source_accuracy = classification_accuracy(net, res.params, source);
  return res;
}

AdaptResult adapt(const Network& net, const ModelParams& student, const TargetView& target, const TrainConfig& cfg,
                  const AdaptHooks& hooks) {
  cfg.validate();
  const ArchConfig& a = net.arch();
  cfg.erase.validate(a.height, a.width);
  if (target.size() < static_cast<std::size_t>(cfg.num_clusters)) {
    throw Error("adapt: fewer target samples than clusters");
  }

  AdaptResult res;
  res.student = student;
  res.teacher = init_teacher(student, cfg.momentum_ema);
  const Tensor images = all_images(target, a.height, a.width);
  const int n = static_cast<int>(target.size());

  EraseConfig erase = cfg.erase;
  {
    const std::size_t plane = static_cast<std::size_t>(a.height) * a.width;
    for (int k = 0; k < kImageChannels; ++k) {
      double sum = 0;
      for (std::size_t i = 0; i < target.size(); ++i) {
        const auto img = target.image(i);
        for (std::size_t j = 0; j < plane; ++j) sum += img[k * plane + j];
      }
      erase.channel_mean[k] = sum / static_cast<double>(plane * target.size());
    }
  }

  auto record_best = [&](const EpochMetrics& m) {
    if (m.student.mean_ap > res.best.mean_ap) res.best = {res.student, "student", m.epoch, m.student.mean_ap};
    if (m.teacher.mean_ap > res.best.mean_ap) res.best = {res.teacher.params, "teacher", m.epoch, m.teacher.mean_ap};
  };

  {
    EpochMetrics m0;
    m0.student = evaluate_model(net, res.student, target);
    m0.teacher = evaluate_model(net, res.teacher.params, target);
    res.epochs.push_back(m0);
    record_best(m0);
    if (hooks.on_epoch) hooks.on_epoch(m0, res.student, res.teacher);
  }

  std::mt19937_64 batch_rng(mix_seed(cfg.seed, 2));
  std::mt19937_64 erase_rng(mix_seed(cfg.seed, 3));
  std::mt19937_64 point_rng(mix_seed(cfg.seed, 4));
  Adam adam;
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs_adapt; ++epoch) {
    const Matrix teacher_emb = net.embed(res.teacher.params, images);
    PseudoLabeling labeling = cluster_targets(teacher_emb, cfg.num_clusters, mix_seed(cfg.seed, 1000 + epoch),
                                              {cfg.kmeans_max_iterations});
    labeling.epoch = epoch;
    if (hooks.on_cluster) hooks.on_cluster(epoch, labeling);
    const std::vector<int>& pseudo = labeling.assignments;

    // Cluster indices carry no meaning across epochs, so both heads restart
    // from the centroids.
    set_classifier(res.student, labeling.centroids);
    set_classifier(res.teacher.params, labeling.centroids);
    adam.reset("classifier.weight");
    adam.reset("classifier.bias");

    std::vector<ImagePoint> points;
    HeatMap cams;
    if (cfg.erase_points == PointSource::kAdaptive) {
      const FeatureBundle snap = net.forward(res.student, images, Mode::kEval);
      cams = compute_cam(snap, res.student, pseudo);
      points = most_informative_point(cams, a.height, a.width);
    } else {
      points = random_points(static_cast<std::size_t>(n), a.height, a.width, point_rng);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.inertia = labeling.inertia;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      GradientStepScope scope;
      const PkBatch batch = make_pk_batch(pseudo, cfg.P, cfg.K, batch_rng);
      const Tensor clean = slice_images(images, batch.indices);
      std::vector<ImagePoint> batch_points(batch.indices.size());
      for (std::size_t i = 0; i < batch.indices.size(); ++i) batch_points[i] = points[batch.indices[i]];
      const Tensor erased = adaptive_erase(clean, batch_points, erase, erase_rng);
      if (s == 0 && !hooks.debug_dir.empty() && cams.size()) {
        HeatMap batch_cams({static_cast<int>(batch.indices.size()), cams.dim(1), cams.dim(2)});
        const std::size_t per = static_cast<std::size_t>(cams.dim(1)) * cams.dim(2);
        for (std::size_t i = 0; i < batch.indices.size(); ++i) {
          std::copy_n(cams.data.begin() + static_cast<std::ptrdiff_t>(batch.indices[i] * per), per,
                      batch_cams.data.begin() + static_cast<std::ptrdiff_t>(i * per));
        }
        dump_erase_debug(hooks.debug_dir, "epoch" + std::to_string(epoch), clean, erased, batch_cams);
      }

      const FeatureBundle t_out = net.forward(res.teacher.params, clean, Mode::kEval);
      ObjectiveResult obj;
      try {
        obj = adaptation_objective(net, res.student, erased, t_out.embedding, t_out.logits, batch.labels, cfg);
      } catch (const NonFiniteLoss& e) {
        throw Error("adapt aborted at step " + std::to_string(step + 1) + ": " + e.what());
      }
      adam.step(res.student, obj.grads, cfg.learning_rate, cfg.weight_decay);
      net.update_running_stats(res.student, obj.cache);
      ema_update(res.teacher, res.student);
      ++step;
      res.steps.push_back({step, obj.terms, obj.total});
      accumulate(m.terms, obj.terms);
      m.total += obj.total;
    }
    m.terms = scaled(m.terms, 1.0 / cfg.steps_per_epoch);
    m.total /= cfg.steps_per_epoch;

    m.student = evaluate_model(net, res.student, target);
    m.teacher = evaluate_model(net, res.teacher.params, target);
    m.cluster_nmi = normalized_mutual_information(pseudo, target.identities_for_evaluation());
    res.epochs.push_back(m);
    record_best(m);
    if (hooks.on_epoch) hooks.on_epoch(m, res.student, res.teacher);
  }
  return res;
}

void write_pretrain_csv(const std::filesystem::path& path, std::span<const PretrainEpoch> epochs) {
  auto out = open_csv(path);
  out << "epoch,learning_rate,l_id,l_tri,total,source_accuracy\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.learning_rate << ',' << e.l_id << ',' << e.l_tri << ',' << e.total << ','
        << e.source_accuracy << '\n';
  }
}

void write_adapt_csv(const std::filesystem::path& path, std::span<const EpochMetrics> epochs) {
  auto out = open_csv(path);
  out << "epoch,l_id,l_sid,l_tri,l_stri,l_mim,l_exp,l_sd,total,student_mAP,student_top1,student_top5,"
         "teacher_mAP,teacher_top1,teacher_top5,inertia,cluster_nmi\n";
  for (const auto& e : epochs) {
    const LossTerms& t = e.terms;
    out << e.epoch << ',' << t.l_id << ',' << t.l_sid << ',' << t.l_tri << ',' << t.l_stri << ',' << t.l_mim << ','
        << t.l_exp << ',' << t.l_sd << ',' << e.total << ',' << e.student.mean_ap << ',' << e.student.top1 << ','
        << e.student.top5 << ',' << e.teacher.mean_ap << ',' << e.teacher.top1 << ',' << e.teacher.top5 << ','
        << e.inertia << ',' << e.cluster_nmi << '\n';
  }
}

void write_steps_csv(const std::filesystem::path& path, std::span<const StepRecord> steps) {
  auto out = open_csv(path);
  out << "step,l_id,l_sid,l_tri,l_stri,l_mim,l_exp,l_sd,total\n";
  for (const auto& s : steps) {
    const LossTerms& t = s.terms;
    out << s.step << ',' << t.l_id << ',' << t.l_sid << ',' << t.l_tri << ',' << t.l_stri << ',' << t.l_mim << ','
        << t.l_exp << ',' << t.l_sd << ',' << s.total << '\n';
  }
}

}  // namespace hli
