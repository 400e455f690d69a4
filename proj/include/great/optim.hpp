#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "great/tensor.hpp"

namespace great {

struct OptimizerConfig {
    enum class Kind { Adam, SgdMomentum };
    Kind kind = Kind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

// Per-parameter state keyed by name, so the same optimizer instance can be
// reused across steps as long as parameter shapes stay fixed.
class Optimizer {
  public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    // Applies one update in place. If any gradient is non-finite the whole
    // step is skipped, params stay untouched and the diagnostic names the
    // offending parameter; returns false in that case.
    bool step(const ParamRefs& params, const std::vector<Tensor>& grads,
              double lr_multiplier = 1.0, std::string* diagnostic = nullptr);

    const OptimizerConfig& config() const { return cfg_; }
    std::int64_t steps_taken() const { return t_; }

  private:
    OptimizerConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;  // Adam first moment / SGD velocity
    std::map<std::string, std::vector<double>> v_;  // Adam second moment
};

}  // namespace great
