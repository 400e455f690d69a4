#pragma once

#include "great/errors.hpp"

namespace great {

// Epoch-indexed rate policy: the learning-rate multiplier decays as
// (1 - e/e_max)^0.9 and the adversarial weights ramp up as max * (1 - lr),
// so alpha(0) = beta(0) = 0 and both reach their ceilings exactly at e_max.
struct Schedule {
    int e_max = 1;
    double exponent = 0.9;
    double alpha_max = 1.0;
    double beta_max = 2.0;
};

struct ScheduleValues {
    double lr_multiplier = 1.0;
    double alpha = 0.0;
    double beta = 0.0;
};

ScheduleValues schedule_eval(const Schedule& s, int epoch);

}  // namespace great
