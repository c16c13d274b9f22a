#include "hli/ema.hpp"

#include <algorithm>

namespace hli {

TeacherState init_teacher(const ModelParams& student, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw Error("init_teacher: momentum must lie in [0,1]");
  return TeacherState{student, momentum, 0};
}

void ema_update(TeacherState& teacher, const ModelParams& student) {
  if (!teacher.params.same_schema(student)) {
    throw Error("ema_update: schema mismatch between teacher and student");
  }
  const double m = teacher.momentum;
  auto& dst = teacher.params.entries();
  const auto& src = student.entries();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& t = dst[i].value.data;
    const auto& s = src[i].value.data;
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double mixed = m * t[j] + (1.0 - m) * s[j];
      // Rounding may leave the segment by an ulp; pin it back.
      t[j] = std::clamp(mixed, std::min(t[j], s[j]), std::max(t[j], s[j]));
    }
  }
  ++teacher.step;
}

}  // namespace hli
