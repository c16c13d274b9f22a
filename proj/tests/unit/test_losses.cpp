#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hli/losses.hpp"
#include "hli/normalize.hpp"
#include "oracles.hpp"

using hli::Matrix;

namespace {

hli::CorrectnessMask mask_of(std::vector<char> v) { return {std::move(v)}; }

Matrix m1(std::initializer_list<double> col) {
  Matrix m(static_cast<Eigen::Index>(col.size()), 1);
  int i = 0;
  for (double v : col) m(i++, 0) = v;
  return m;
}

}  // namespace

TEST(CorrectnessMask, TeacherArgmaxAgainstLabels) {
  Matrix logits(3, 3);
  logits << 5, 1, 0,  //
      0, 1, 4,        //
      0, 2, 1;
  const std::vector<int> labels{0, 1, 1};
  const auto mask = hli::correctness_mask(logits, labels);
  EXPECT_EQ(mask.correct, (std::vector<char>{1, 0, 1}));
  EXPECT_EQ(mask.num_correct(), 2);
  EXPECT_FALSE(mask.all());
}

TEST(CorrectnessMask, UnchangedWhenLogitsMovePreservingArgmax) {
  std::mt19937_64 rng(3);
  const Matrix logits = oracle::random_matrix(16, 5, rng);
  std::vector<int> labels(16);
  for (int i = 0; i < 16; ++i) labels[i] = i % 5;
  const auto base = hli::correctness_mask(logits, labels);
  // Strictly increasing maps keep each row's argmax.
  const Matrix moved = (2.0 * logits.array() + 7.0).exp().matrix();
  EXPECT_EQ(hli::correctness_mask(moved, labels).correct, base.correct);
}

TEST(MimicLoss, IdenticalEmbeddingsGiveZero) {
  std::mt19937_64 rng(1);
  const Matrix s = oracle::random_matrix(4, 3, rng);
  EXPECT_EQ(hli::mimic_loss(s, s, mask_of({1, 1, 0, 1})).value, 0.0);
}

TEST(MimicLoss, EmptyMaskGivesZero) {
  std::mt19937_64 rng(2);
  const Matrix s = oracle::random_matrix(4, 3, rng), t = oracle::random_matrix(4, 3, rng);
  const auto r = hli::mimic_loss(s, t, mask_of({0, 0, 0, 0}));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.grad.norm(), 0.0);
}

TEST(MimicLoss, SingleScalar) {
  EXPECT_NEAR(hli::mimic_loss(m1({1.0}), m1({3.0}), mask_of({1})).value, 4.0, 1e-10);
}

TEST(MimicLoss, ShapeMismatchThrows) {
  EXPECT_THROW(hli::mimic_loss(Matrix::Zero(2, 3), Matrix::Zero(2, 2), mask_of({1, 1})), hli::Error);
}

TEST(ExploitationLoss, AllCorrectGivesZero) {
  std::mt19937_64 rng(4);
  const Matrix s = oracle::random_matrix(4, 3, rng), t = oracle::random_matrix(4, 3, rng);
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_EQ(hli::exploitation_loss(s, t, mask_of({1, 1, 1, 1}), labels).value, 0.0);
}

TEST(ExploitationLoss, OneWrongOneCorrectSameIdentity) {
  // Row 0 wrong (teacher 1.0), row 1 correct (teacher 3.0); student row 0 at 0.
  const Matrix s = m1({0.0, 0.5}), t = m1({1.0, 3.0});
  const std::vector<int> labels{7, 7};
  const auto r = hli::exploitation_loss(s, t, mask_of({0, 1}), labels);
  EXPECT_NEAR(r.value, 8.0, 1e-10);
  // Repulsion pulls away from 1.0 (+2), attraction pulls toward 3.0 (-6): net -4.
  EXPECT_NEAR(r.grad(0, 0), -4.0, 1e-10);
  EXPECT_EQ(r.grad(1, 0), 0.0);
}

TEST(ExploitationLoss, GradientSignMatchesFiniteDifferences) {
  const Matrix s = m1({0.0, 0.5}), t = m1({1.0, 3.0});
  const std::vector<int> labels{7, 7};
  const auto mask = mask_of({0, 1});
  const auto r = hli::exploitation_loss(s, t, mask, labels);
  const Matrix num = oracle::numeric_gradient(
      [&](const Matrix& x) { return hli::exploitation_loss(x, t, mask, labels).value; }, s);
  EXPECT_EQ(std::signbit(r.grad(0, 0)), std::signbit(num(0, 0)));
  EXPECT_LT(oracle::relative_error(r.grad, num), 1e-6);
}

TEST(ExploitationLoss, RepulsionOnlyWithoutCorrectGroupMember) {
  const Matrix s = m1({0.0, 0.0}), t = m1({1.0, 0.5});
  const std::vector<int> labels{1, 2};
  // Row 0 wrong, its group has no correct member; row 1 correct in group 2.
  EXPECT_NEAR(hli::exploitation_loss(s, t, mask_of({0, 1}), labels).value, -1.0, 1e-12);
}

TEST(ExploitationLoss, RepulsionClampBoundsTheTerm) {
  const Matrix s = m1({0.0}), t = m1({10.0});
  const std::vector<int> labels{0};
  const auto clamped = hli::exploitation_loss(s, t, mask_of({0}), labels);
  EXPECT_NEAR(clamped.value, -4.0, 1e-12);
  EXPECT_EQ(clamped.grad(0, 0), 0.0);
  const auto raw = hli::exploitation_loss(s, t, mask_of({0}), labels,
                                          {std::numeric_limits<double>::infinity()});
  EXPECT_NEAR(raw.value, -100.0, 1e-12);
}

TEST(ImitationLoss, Weighting) {
  hli::LossWeights w;
  w.alpha = w.beta = 0;
  EXPECT_EQ(hli::imitation_loss(4, 8, w), 0.0);
  w.alpha = 1;
  EXPECT_EQ(hli::imitation_loss(4, 8, w), 4.0);
  w.alpha = w.beta = 0.5;
  EXPECT_NEAR(hli::imitation_loss(4, 8, w), 6.0, 1e-10);
}

TEST(RelationMatrix, IdenticalRowsGiveOnes) {
  Matrix e(3, 2);
  e << 1, 2, 1, 2, 1, 2;
  const auto a = hli::relation_matrix(e);
  EXPECT_TRUE(a.values.isApprox(Matrix::Ones(3, 3), 1e-12));
}

TEST(RelationMatrix, AntipodalPairIsOneThird) {
  Matrix e(2, 2);
  e << 1, 0, -3, 0;
  EXPECT_NEAR(hli::relation_matrix(e).values(0, 1), 1.0 / 3.0, 1e-12);
}

TEST(RelationMatrix, MatchesDoubleLoopAndIsSymmetric) {
  std::mt19937_64 rng(5);
  const Matrix e = oracle::random_matrix(12, 6, rng);
  const auto a = hli::relation_matrix(e);
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(a.values(i, i), 1.0);
    for (int j = 0; j < 12; ++j) {
      EXPECT_NEAR(a.values(i, j), 1.0 / (1.0 + oracle::unit_distance(e, i, j)), 1e-12);
      EXPECT_EQ(a.values(i, j), a.values(j, i));
      EXPECT_GT(a.values(i, j), 0.0);
      EXPECT_LE(a.values(i, j), 1.0);
    }
  }
}

TEST(RelationMatrix, RejectsZeroRowAndSingleRow) {
  Matrix e(2, 2);
  e << 1, 0, 0, 0;
  EXPECT_THROW(hli::relation_matrix(e), hli::Error);
  EXPECT_THROW(hli::relation_matrix(Matrix::Ones(1, 3)), hli::Error);
}

TEST(StructureDistillation, EqualMatricesGiveZero) {
  std::mt19937_64 rng(6);
  const auto a = hli::relation_matrix(oracle::random_matrix(5, 4, rng));
  EXPECT_EQ(hli::structure_distillation_loss(a, a), 0.0);
}

TEST(StructureDistillation, UniformOffset) {
  hli::RelationMatrix a{Matrix::Constant(2, 2, 0.5)}, b{Matrix::Constant(2, 2, 0.6)};
  EXPECT_NEAR(hli::structure_distillation_loss(a, b), 0.01, 1e-10);
}

TEST(StructureDistillation, DimensionMismatchThrows) {
  hli::RelationMatrix a{Matrix::Ones(2, 2)}, b{Matrix::Ones(3, 3)};
  EXPECT_THROW(hli::structure_distillation_loss(a, b), hli::Error);
}

TEST(StructureDistillation, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Matrix s = oracle::random_matrix(4, 5, rng);
  const auto teacher = hli::relation_matrix(oracle::random_matrix(4, 5, rng));
  const auto r = hli::structure_distillation_loss(s, teacher);
  EXPECT_NEAR(r.value, hli::structure_distillation_loss(hli::relation_matrix(s), teacher), 1e-14);
  const Matrix num = oracle::numeric_gradient(
      [&](const Matrix& x) { return hli::structure_distillation_loss(x, teacher).value; }, s);
  EXPECT_LT(oracle::relative_error(r.grad, num), 1e-4);
}

TEST(CrossEntropy, ConfidentCorrectLogitsApproachZero) {
  Matrix z = Matrix::Zero(2, 3);
  z(0, 1) = 50;
  z(1, 2) = 50;
  const std::vector<int> labels{1, 2};
  EXPECT_LT(hli::cross_entropy(z, labels).value, 1e-15);
}

TEST(SoftCrossEntropy, SelfTargetsGiveEntropy) {
  std::mt19937_64 rng(8);
  const Matrix z = oracle::random_matrix(3, 4, rng);
  double entropy = 0;
  for (int i = 0; i < 3; ++i) {
    const Eigen::RowVectorXd p = z.row(i).array().exp() / z.row(i).array().exp().sum();
    entropy -= (p.array() * p.array().log()).sum();
  }
  EXPECT_NEAR(hli::soft_cross_entropy(z, z).value, entropy / 3, 1e-12);
}

TEST(BatchHardTriplet, MatchesAllTripletEnumeration) {
  Matrix e(4, 2);
  e << 0.0, 0.0,  //
      0.5, 0.1,   //
      0.4, 0.0,   //
      1.0, 0.3;
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_NEAR(hli::batch_hard_triplet(e, labels, 0.3).value, oracle::triplet_all_pairs(e, labels, 0.3), 1e-12);

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix r = oracle::random_matrix(12, 3, rng);
    std::vector<int> l(12);
    for (int i = 0; i < 12; ++i) l[i] = i % 4;
    EXPECT_NEAR(hli::batch_hard_triplet(r, l, 0.3).value, oracle::triplet_all_pairs(r, l, 0.3), 1e-12);
  }
}

TEST(BatchHardTriplet, RejectsDegenerateBatches) {
  const Matrix e = Matrix::Random(4, 2);
  const std::vector<int> one_id{0, 0, 0, 0}, singleton{0, 0, 0, 1};
  EXPECT_THROW(hli::batch_hard_triplet(e, one_id, 0.3), hli::Error);
  EXPECT_THROW(hli::batch_hard_triplet(e, singleton, 0.3), hli::Error);
}

TEST(SoftTriplet, SelfTargetsGiveBinaryEntropy) {
  std::mt19937_64 rng(10);
  const Matrix e = oracle::random_matrix(6, 3, rng);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const Matrix d = hli::pairwise_distances(e);
  const auto mining = hli::mine_batch_hard(d, labels);
  double expected = 0;
  for (int i = 0; i < 6; ++i) {
    const double p = std::exp(d(i, mining.positive[i])) /
                     (std::exp(d(i, mining.positive[i])) + std::exp(d(i, mining.negative[i])));
    expected -= p * std::log(p) + (1 - p) * std::log(1 - p);
  }
  EXPECT_NEAR(hli::soft_triplet(e, e, labels).value, expected / 6, 1e-12);
}

TEST(TotalLoss, WeightDegeneracyAndDefaults) {
  hli::LossTerms t{2, 3, 5, 7, 11, 13, 17, 19};
  hli::LossWeights zero{0, 0, 0, 0, 0.5, 0.5};
  EXPECT_EQ(hli::total_loss(t, zero), 2.0 + 5.0);

  hli::LossTerms ones{1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_NEAR(hli::total_loss(ones, hli::LossWeights{}), 3.5, 1e-10);
}

TEST(TotalLoss, NonFiniteTermIsNamed) {
  hli::LossTerms t;
  t.l_sd = std::numeric_limits<double>::quiet_NaN();
  try {
    hli::total_loss(t, {});
    FAIL() << "expected NonFiniteLoss";
  } catch (const hli::NonFiniteLoss& e) {
    EXPECT_EQ(e.term(), "l_sd");
  }
}

TEST(LossWeights, RejectNegative) {
  hli::LossWeights w;
  w.lambda_sd = -1;
  EXPECT_THROW(w.validate(), hli::Error);
}

// Analytic gradient of every term with respect to its student argument.
class LossGradients : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(11);
    student_ = hli::l2_normalize_rows(oracle::random_matrix(4, 5, rng));
    teacher_ = hli::l2_normalize_rows(oracle::random_matrix(4, 5, rng));
    s_logits_ = oracle::random_matrix(4, 3, rng);
    t_logits_ = oracle::random_matrix(4, 3, rng);
  }
  Matrix student_, teacher_, s_logits_, t_logits_;
  std::vector<int> labels_{0, 0, 1, 1};
  hli::CorrectnessMask mask_{{1, 0, 0, 1}};
};

TEST_F(LossGradients, Mimic) {
  const auto r = hli::mimic_loss(student_, teacher_, mask_);
  const Matrix num = oracle::numeric_gradient([&](const Matrix& x) { return hli::mimic_loss(x, teacher_, mask_).value; },
                                              student_);
  EXPECT_LT(oracle::relative_error(r.grad, num), 1e-4);
}

TEST_F(LossGradients, Exploitation) {
  const auto r = hli::exploitation_loss(student_, teacher_, mask_, labels_);
  const Matrix num = oracle::numeric_gradient(
      [&](const Matrix& x) { return hli::exploitation_loss(x, teacher_, mask_, labels_).value; }, student_);
  EXPECT_LT(oracle::relative_error(r.grad, num), 1e-4);
}

TEST_F(LossGradients, CrossEntropyAndSoft) {
  const auto ce = hli::cross_entropy(s_logits_, labels_);
  const auto sce = hli::soft_cross_entropy(s_logits_, t_logits_);
  EXPECT_LT(oracle::relative_error(
                ce.grad, oracle::numeric_gradient([&](const Matrix& x) { return hli::cross_entropy(x, labels_).value; },
                                                  s_logits_)),
            1e-4);
  EXPECT_LT(oracle::relative_error(
                sce.grad, oracle::numeric_gradient(
                              [&](const Matrix& x) { return hli::soft_cross_entropy(x, t_logits_).value; }, s_logits_)),
            1e-4);
}

TEST_F(LossGradients, Triplets) {
  const auto tri = hli::batch_hard_triplet(student_, labels_, 0.3);
  const auto stri = hli::soft_triplet(student_, teacher_, labels_);
  EXPECT_LT(oracle::relative_error(tri.grad, oracle::numeric_gradient(
                                                 [&](const Matrix& x) {
                                                   return hli::batch_hard_triplet(x, labels_, 0.3).value;
                                                 },
                                                 student_)),
            1e-4);
  EXPECT_LT(oracle::relative_error(stri.grad, oracle::numeric_gradient(
                                                  [&](const Matrix& x) {
                                                    return hli::soft_triplet(x, teacher_, labels_).value;
                                                  },
                                                  student_)),
            1e-4);
}

TEST(Normalize, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const Matrix raw = oracle::random_matrix(3, 4, rng);
  const Matrix probe = oracle::random_matrix(3, 4, rng);
  const Matrix g = hli::l2_normalize_rows_backward(raw, probe);
  const Matrix num = oracle::numeric_gradient(
      [&](const Matrix& x) { return hli::l2_normalize_rows(x).cwiseProduct(probe).sum(); }, raw);
  EXPECT_LT(oracle::relative_error(g, num), 1e-6);
}
