#include "hli/normalize.hpp"

#include <string>

namespace hli {

Matrix l2_normalize_rows(const Matrix& m) {
  if (!m.allFinite()) throw Error("l2_normalize_rows: non-finite input");
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (norm == 0.0) throw Error("l2_normalize_rows: zero-norm row " + std::to_string(i));
    out.row(i) /= norm;
  }
  return out;
}

Matrix l2_normalize_rows_backward(const Matrix& raw, const Matrix& grad_normalized) {
  Matrix out(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double norm = raw.row(i).norm();
    const Eigen::RowVectorXd n = raw.row(i) / norm;
    out.row(i) = (grad_normalized.row(i) - n * n.dot(grad_normalized.row(i))) / norm;
  }
  return out;
}

}  // namespace hli
