#ifndef HLI_NORMALIZE_HPP_
#define HLI_NORMALIZE_HPP_

#include "hli/tensor.hpp"

namespace hli {

// Rows scaled to unit length; throws on a zero or non-finite row.
Matrix l2_normalize_rows(const Matrix& m);

// Gradient with respect to `raw` given the gradient with respect to
// l2_normalize_rows(raw).
Matrix l2_normalize_rows_backward(const Matrix& raw, const Matrix& grad_normalized);

}  // namespace hli

#endif  // HLI_NORMALIZE_HPP_
