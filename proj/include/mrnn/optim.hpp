#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mrnn/autodiff.hpp"
#include "mrnn/errors.hpp"

namespace mrnn {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. State is keyed by position, so the caller must
// pass the same parameter list (same order, same shapes) to every step.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
        if (!(cfg_.lr >= 0.0) || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) ||
            !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) || !(cfg_.eps > 0.0)) {
            throw ConfigError("adam hyperparameters out of range");
        }
    }

    const AdamConfig& config() const { return cfg_; }
    long steps() const { return t_; }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size()) {
            throw ShapeError("adam: " + std::to_string(params.size()) + " parameters vs " +
                             std::to_string(grads.size()) + " gradients");
        }
        if (t_ == 0) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->v.size(), 0.0);
                v_[i].assign(params[i]->v.size(), 0.0);
            }
        } else if (params.size() != m_.size()) {
            throw ShapeError("adam: parameter count changed between steps");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            if (!(p.shape == g.shape) || m_[i].size() != p.v.size()) {
                throw ShapeError("adam: parameter " + std::to_string(i) + " is " +
                                 p.shape.str() + " but its gradient is " + g.shape.str());
            }
            for (std::size_t k = 0; k < p.v.size(); ++k) {
                m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g.v[k];
                v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g.v[k] * g.v[k];
                const double mhat = m_[i][k] / c1;
                const double vhat = v_[i][k] / c2;
                p.v[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace mrnn
