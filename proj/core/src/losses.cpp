#include "hli/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hli/normalize.hpp"

namespace hli {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

void require_rows(const Matrix& a, std::size_t n, const char* what) {
  if (static_cast<std::size_t>(a.rows()) != n) throw Error(std::string(what) + ": length mismatch");
}

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Eigen::RowVectorXd log_softmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& z) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return z.array() - lse;
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// d/d e_i of ||e_i - e_j||, zero at coincident points.
Eigen::RowVectorXd distance_direction(const Matrix& e, Eigen::Index i, Eigen::Index j, double d) {
  if (d <= 1e-12) return Eigen::RowVectorXd::Zero(e.cols());
  return (e.row(i) - e.row(j)) / d;
}

}  // namespace

int CorrectnessMask::num_correct() const {
  return static_cast<int>(std::count(correct.begin(), correct.end(), char{1}));
}

CorrectnessMask correctness_mask(const Matrix& teacher_logits, std::span<const int> labels) {
  require_rows(teacher_logits, labels.size(), "correctness_mask");
  CorrectnessMask mask;
  mask.correct.resize(labels.size());
  for (Eigen::Index i = 0; i < teacher_logits.rows(); ++i) {
    Eigen::Index arg = 0;
    teacher_logits.row(i).maxCoeff(&arg);
    mask.correct[i] = static_cast<char>(arg == labels[i]);
  }
  return mask;
}

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {{"lambda_id", lambda_id}, {"lambda_tri", lambda_tri},
                                                   {"lambda_imi", lambda_imi}, {"lambda_sd", lambda_sd},
                                                   {"alpha", alpha},         {"beta", beta}};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v) || v < 0) throw Error(std::string("loss.") + name + ": must be finite and >= 0");
  }
}

// ---------------------------------------------------------------------------
// Selective imitation

LossGrad mimic_loss(const Matrix& student, const Matrix& teacher, const CorrectnessMask& mask) {
  require_same_shape(student, teacher, "mimic_loss");
  require_rows(student, mask.size(), "mimic_loss");
  LossGrad out{0.0, Matrix::Zero(student.rows(), student.cols())};
  const int count = mask.num_correct();
  if (count == 0) return out;
  const double denom = static_cast<double>(count) * static_cast<double>(student.cols());
  for (Eigen::Index i = 0; i < student.rows(); ++i) {
    if (!mask.correct[i]) continue;
    const Eigen::RowVectorXd diff = student.row(i) - teacher.row(i);
    out.value += diff.squaredNorm() / denom;
    out.grad.row(i) = 2.0 * diff / denom;
  }
  return out;
}

LossGrad exploitation_loss(const Matrix& student, const Matrix& teacher, const CorrectnessMask& mask,
                           std::span<const int> labels, const ExploitationOptions& options) {
  require_same_shape(student, teacher, "exploitation_loss");
  require_rows(student, mask.size(), "exploitation_loss");
  require_rows(student, labels.size(), "exploitation_loss");
  const Eigen::Index n = student.rows(), d = student.cols();
  LossGrad out{0.0, Matrix::Zero(n, d)};

  // Mean teacher response over correctly predicted rows of each label.
  std::map<int, std::pair<Eigen::RowVectorXd, int>> correct_mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask.correct[i]) continue;
    auto [it, inserted] = correct_mean.try_emplace(labels[i], Eigen::RowVectorXd::Zero(d), 0);
    it->second.first += teacher.row(i);
    ++it->second.second;
  }

  std::vector<Eigen::Index> wrong, guided;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask.correct[i]) continue;
    wrong.push_back(i);
    if (correct_mean.count(labels[i])) guided.push_back(i);
  }
  if (wrong.empty()) return out;

  const double rep_denom = static_cast<double>(wrong.size()) * static_cast<double>(d);
  for (Eigen::Index i : wrong) {
    const Eigen::RowVectorXd diff = student.row(i) - teacher.row(i);
    const double sq = diff.squaredNorm();
    if (sq < options.repulsion_clamp) {
      out.value -= sq / rep_denom;
      out.grad.row(i) -= 2.0 * diff / rep_denom;
    } else {
      out.value -= options.repulsion_clamp / rep_denom;
    }
  }
  if (!guided.empty()) {
    const double att_denom = static_cast<double>(guided.size()) * static_cast<double>(d);
    for (Eigen::Index i : guided) {
      const auto& [sum, count] = correct_mean.at(labels[i]);
      const Eigen::RowVectorXd diff = student.row(i) - sum / count;
      out.value += diff.squaredNorm() / att_denom;
      out.grad.row(i) += 2.0 * diff / att_denom;
    }
  }
  return out;
}

double imitation_loss(double mimic, double exploitation, const LossWeights& weights) {
  return weights.alpha * mimic + weights.beta * exploitation;
}

// ---------------------------------------------------------------------------
// Structure distillation

RelationMatrix relation_matrix(const Matrix& embeddings) {
  if (embeddings.rows() < 2) throw Error("relation_matrix: need at least two rows");
  const Matrix u = l2_normalize_rows(embeddings);
  const Eigen::Index n = u.rows();
  RelationMatrix a{Matrix::Ones(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = 1.0 / (1.0 + (u.row(i) - u.row(j)).norm());
      a.values(i, j) = v;
      a.values(j, i) = v;
    }
  }
  return a;
}

double structure_distillation_loss(const RelationMatrix& student, const RelationMatrix& teacher) {
  require_same_shape(student.values, teacher.values, "structure_distillation_loss");
  return (student.values - teacher.values).squaredNorm() / static_cast<double>(student.values.size());
}

LossGrad structure_distillation_loss(const Matrix& student_embeddings, const RelationMatrix& teacher) {
  const RelationMatrix a = relation_matrix(student_embeddings);
  require_same_shape(a.values, teacher.values, "structure_distillation_loss");
  const Eigen::Index n = a.size();
  const double denom = static_cast<double>(n) * static_cast<double>(n);
  LossGrad out;
  out.value = (a.values - teacher.values).squaredNorm() / denom;

  const Matrix u = l2_normalize_rows(student_embeddings);
  Matrix du = Matrix::Zero(n, u.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double aij = a.values(i, j);
      // Both (i,j) and (j,i) entries; dA/dd = -A^2.
      const double d_dist = 2.0 * (2.0 * (aij - teacher.values(i, j)) / denom) * (-aij * aij);
      const double dist = (u.row(i) - u.row(j)).norm();
      const Eigen::RowVectorXd dir = distance_direction(u, i, j, dist);
      du.row(i) += d_dist * dir;
      du.row(j) -= d_dist * dir;
    }
  }
  out.grad = l2_normalize_rows_backward(student_embeddings, du);
  return out;
}

// ---------------------------------------------------------------------------
// Identity and triplet terms

LossGrad cross_entropy(const Matrix& logits, std::span<const int> labels) {
  require_rows(logits, labels.size(), "cross_entropy");
  const Eigen::Index n = logits.rows();
  LossGrad out{0.0, softmax_rows(logits)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) throw Error("cross_entropy: label out of range");
    out.value -= log_softmax_row(logits.row(i))(labels[i]);
    out.grad(i, labels[i]) -= 1.0;
  }
  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

LossGrad soft_cross_entropy(const Matrix& student_logits, const Matrix& teacher_logits) {
  require_same_shape(student_logits, teacher_logits, "soft_cross_entropy");
  const Eigen::Index n = student_logits.rows();
  const Matrix q = softmax_rows(teacher_logits);
  LossGrad out{0.0, softmax_rows(student_logits) - q};
  for (Eigen::Index i = 0; i < n; ++i) out.value -= q.row(i).dot(log_softmax_row(student_logits.row(i)));
  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

Matrix pairwise_distances(const Matrix& e) {
  const Eigen::Index n = e.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (e.row(i) - e.row(j)).norm();
    }
  }
  return d;
}

TripletMining mine_batch_hard(const Matrix& distances, std::span<const int> labels) {
  require_rows(distances, labels.size(), "mine_batch_hard");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw Error("triplet loss needs at least two identities in the batch");
  for (const auto& [label, c] : counts) {
    if (c < 2) throw Error("triplet loss needs at least two samples of identity " + std::to_string(label));
  }
  const Eigen::Index n = distances.rows();
  TripletMining m;
  m.positive.assign(static_cast<std::size_t>(n), -1);
  m.negative.assign(static_cast<std::size_t>(n), -1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (m.positive[i] < 0 || distances(i, j) > distances(i, m.positive[i])) m.positive[i] = static_cast<int>(j);
      } else {
        if (m.negative[i] < 0 || distances(i, j) < distances(i, m.negative[i])) m.negative[i] = static_cast<int>(j);
      }
    }
  }
  return m;
}

LossGrad batch_hard_triplet(const Matrix& embeddings, std::span<const int> labels, double margin,
                            TripletMining* mining) {
  const Matrix d = pairwise_distances(embeddings);
  const TripletMining m = mine_batch_hard(d, labels);
  const Eigen::Index n = embeddings.rows();
  LossGrad out{0.0, Matrix::Zero(n, embeddings.cols())};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = m.positive[i], q = m.negative[i];
    const double hinge = d(i, p) - d(i, q) + margin;
    if (hinge <= 0) continue;
    out.value += hinge / static_cast<double>(n);
    const Eigen::RowVectorXd gp = distance_direction(embeddings, i, p, d(i, p)) / static_cast<double>(n);
    const Eigen::RowVectorXd gn = distance_direction(embeddings, i, q, d(i, q)) / static_cast<double>(n);
    out.grad.row(i) += gp - gn;
    out.grad.row(p) -= gp;
    out.grad.row(q) += gn;
  }
  if (mining) *mining = m;
  return out;
}

LossGrad soft_triplet(const Matrix& student_embeddings, const Matrix& teacher_embeddings,
                      std::span<const int> labels) {
  require_same_shape(student_embeddings, teacher_embeddings, "soft_triplet");
  const Matrix ds = pairwise_distances(student_embeddings);
  const Matrix dt = pairwise_distances(teacher_embeddings);
  const TripletMining m = mine_batch_hard(ds, labels);
  const Eigen::Index n = student_embeddings.rows();
  LossGrad out{0.0, Matrix::Zero(n, student_embeddings.cols())};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = m.positive[i], q = m.negative[i];
    // softmax over (d_ap, d_an), component 0, in logistic form.
    const double ps = 1.0 / (1.0 + std::exp(ds(i, q) - ds(i, p)));
    const double pt = 1.0 / (1.0 + std::exp(dt(i, q) - dt(i, p)));
    const double log_ps = -softplus(ds(i, q) - ds(i, p));
    const double log_1ms = -softplus(ds(i, p) - ds(i, q));
    out.value -= (pt * log_ps + (1.0 - pt) * log_1ms) / static_cast<double>(n);
    const double g = (ps - pt) / static_cast<double>(n);  // d loss / d d_ap = -d loss / d d_an
    const Eigen::RowVectorXd gp = g * distance_direction(student_embeddings, i, p, ds(i, p));
    const Eigen::RowVectorXd gn = g * distance_direction(student_embeddings, i, q, ds(i, q));
    out.grad.row(i) += gp - gn;
    out.grad.row(p) -= gp;
    out.grad.row(q) += gn;
  }
  return out;
}

BaseLosses base_losses(const Matrix& student_logits, const Matrix& student_embeddings,
                       const Matrix& teacher_logits, const Matrix& teacher_embeddings,
                       std::span<const int> labels, double triplet_margin) {
  BaseLosses out;
  out.id = cross_entropy(student_logits, labels);
  out.sid = soft_cross_entropy(student_logits, teacher_logits);
  out.tri = batch_hard_triplet(student_embeddings, labels, triplet_margin);
  out.stri = soft_triplet(student_embeddings, teacher_embeddings, labels);
  return out;
}

double total_loss(const LossTerms& t, const LossWeights& w) {
  const std::pair<const char*, double> terms[] = {{"l_id", t.l_id},   {"l_sid", t.l_sid}, {"l_tri", t.l_tri},
                                                  {"l_stri", t.l_stri}, {"l_imi", t.l_imi}, {"l_sd", t.l_sd}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NonFiniteLoss(name);
  }
  return (1.0 - w.lambda_id) * t.l_id + w.lambda_id * t.l_sid + (1.0 - w.lambda_tri) * t.l_tri +
         w.lambda_tri * t.l_stri + w.lambda_imi * t.l_imi + w.lambda_sd * t.l_sd;
}

}  // namespace hli
