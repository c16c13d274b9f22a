#ifndef HLI_LOSSES_HPP_
#define HLI_LOSSES_HPP_

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hli/tensor.hpp"

namespace hli {

// Per-sample flag: teacher argmax logit equals the sample's (pseudo) label.
struct CorrectnessMask {
  std::vector<char> correct;

  std::size_t size() const { return correct.size(); }
  int num_correct() const;
  bool all() const { return num_correct() == static_cast<int>(size()); }
};

CorrectnessMask correctness_mask(const Matrix& teacher_logits, std::span<const int> labels);

struct LossWeights {
  double lambda_id = 0.5;
  double lambda_tri = 1.0;
  double lambda_imi = 0.5;
  double lambda_sd = 1.0;
  double alpha = 0.5;  // mimic weight inside the imitation loss
  double beta = 0.5;   // exploitation weight inside the imitation loss

  void validate() const;
};

// Scalar loss and its gradient with respect to the first (student-side)
// argument. The teacher-side arguments are constants.
struct LossGrad {
  double value = 0.0;
  Matrix grad;
};

// Mean squared error over the correctly predicted rows only; 0 when none.
LossGrad mimic_loss(const Matrix& student, const Matrix& teacher, const CorrectnessMask& mask);

struct ExploitationOptions {
  // Cap on the per-sample squared distance inside the repulsion term.
  // 4 is the largest squared distance between unit vectors; infinity
  // reproduces the unbounded form.
  double repulsion_clamp = 4.0;
};

// Over rows the teacher got wrong:
//   -MSE(student, teacher) + MSE(student, mean teacher row of the same
//   label among rows the teacher got right).
// Rows whose label group has no correct member contribute only the
// repulsion. 0 when every row is correct.
LossGrad exploitation_loss(const Matrix& student, const Matrix& teacher, const CorrectnessMask& mask,
                           std::span<const int> labels, const ExploitationOptions& options = {});

double imitation_loss(double mimic, double exploitation, const LossWeights& weights);

// Pairwise affinities 1 / (1 + ||u_i - u_j||) of the unit-normalized rows.
struct RelationMatrix {
  Matrix values;
  Eigen::Index size() const { return values.rows(); }
};

RelationMatrix relation_matrix(const Matrix& embeddings);

double structure_distillation_loss(const RelationMatrix& student, const RelationMatrix& teacher);

// Value and gradient with respect to the raw student embeddings.
LossGrad structure_distillation_loss(const Matrix& student_embeddings, const RelationMatrix& teacher);

// Mean cross-entropy; gradient with respect to logits.
LossGrad cross_entropy(const Matrix& logits, std::span<const int> labels);

// Mean cross-entropy of student logits against softmax(teacher logits).
LossGrad soft_cross_entropy(const Matrix& student_logits, const Matrix& teacher_logits);

struct TripletMining {
  std::vector<int> positive;  // hardest positive per anchor
  std::vector<int> negative;  // hardest negative per anchor
};

Matrix pairwise_distances(const Matrix& embeddings);

// Hardest positive = farthest same-label row, hardest negative = nearest
// other-label row (first index on ties). Throws unless the batch has at
// least two labels and every label at least two rows.
TripletMining mine_batch_hard(const Matrix& distances, std::span<const int> labels);

// mean_i max(0, d(i, p_i) - d(i, n_i) + margin).
LossGrad batch_hard_triplet(const Matrix& embeddings, std::span<const int> labels, double margin,
                            TripletMining* mining = nullptr);

// Binary cross-entropy between the student's softmax(d_ap, d_an)[0] and the
// teacher's value at the student's mined indices.
LossGrad soft_triplet(const Matrix& student_embeddings, const Matrix& teacher_embeddings,
                      std::span<const int> labels);

struct BaseLosses {
  LossGrad id;    // w.r.t. student logits
  LossGrad sid;   // w.r.t. student logits
  LossGrad tri;   // w.r.t. student embeddings
  LossGrad stri;  // w.r.t. student embeddings
};

BaseLosses base_losses(const Matrix& student_logits, const Matrix& student_embeddings,
                       const Matrix& teacher_logits, const Matrix& teacher_embeddings,
                       std::span<const int> labels, double triplet_margin);

struct LossTerms {
  double l_id = 0, l_sid = 0, l_tri = 0, l_stri = 0;
  double l_mim = 0, l_exp = 0;
  double l_imi = 0, l_sd = 0;
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(std::string term)
      : Error("non-finite loss term '" + term + "'"), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

// (1-l_id) id + l_id sid + (1-l_tri) tri + l_tri stri + l_imi imi + l_sd sd.
// Throws NonFiniteLoss naming the first non-finite term.
double total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace hli

#endif  // HLI_LOSSES_HPP_
