#include "great/optim.hpp"

#include <cmath>

#include "great/errors.hpp"

namespace great {

bool Optimizer::step(const ParamRefs& params, const std::vector<Tensor>& grads,
                     double lr_multiplier, std::string* diagnostic) {
    if (params.size() != grads.size())
        throw shape_error("Optimizer::step: " + std::to_string(params.size()) + " params vs " +
                          std::to_string(grads.size()) + " grads");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].second->shape != grads[i].shape)
            throw shape_error("Optimizer::step: shape mismatch for '" + params[i].first + "': " +
                              shape_str(params[i].second->shape) + " vs " + shape_str(grads[i].shape));
        if (!all_finite(grads[i].values())) {
            if (diagnostic)
                *diagnostic = "non-finite gradient for parameter '" + params[i].first + "'; step skipped";
            return false;
        }
    }

    ++t_;
    const double lr = cfg_.lr * lr_multiplier;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double>& p = params[i].second->mutable_data();
        const std::vector<double>& g = grads[i].values();
        const std::string& name = params[i].first;
        if (cfg_.kind == OptimizerConfig::Kind::Adam) {
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.empty()) m.assign(p.size(), 0.0);
            if (v.empty()) v.assign(p.size(), 0.0);
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
            for (std::size_t j = 0; j < p.size(); ++j) {
                double gj = g[j] + cfg_.weight_decay * p[j];
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        } else {
            auto& vel = m_[name];
            if (vel.empty()) vel.assign(p.size(), 0.0);
            for (std::size_t j = 0; j < p.size(); ++j) {
                double gj = g[j] + cfg_.weight_decay * p[j];
                vel[j] = cfg_.momentum * vel[j] + gj;
                p[j] -= lr * vel[j];
            }
        }
    }
    return true;
}

}  // namespace great
