#ifndef HLI_EMA_HPP_
#define HLI_EMA_HPP_

#include <cstdint>

#include "hli/model.hpp"

namespace hli {

// Temporally averaged copy of the student. Never receives gradients.
struct TeacherState {
  ModelParams params;
  double momentum = 0.999;
  std::int64_t step = 0;
};

TeacherState init_teacher(const ModelParams& student, double momentum = 0.999);

// theta_T <- m * theta_T + (1 - m) * theta_S for every tensor, including the
// normalization running statistics. Throws on schema mismatch.
void ema_update(TeacherState& teacher, const ModelParams& student);

}  // namespace hli

#endif  // HLI_EMA_HPP_
