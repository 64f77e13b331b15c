#pragma once

#include <cmath>
#include <vector>

#include "s4tk/tensor.hpp"

// Adam with bias correction. Callers run backward first; step() consumes the
// accumulated grads and zero_grad() clears them for the next iteration.

namespace s4tk::core {

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, float lr = 1e-2f, float beta1 = 0.9f, float beta2 = 0.999f,
                  float eps = 1e-8f)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.data().size(), 0.0f);
            v_.emplace_back(p.data().size(), 0.0f);
        }
    }

    void step() {
        ++t_;
        float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
        float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
        for (size_t k = 0; k < params_.size(); ++k) {
            auto node = params_[k].node();
            node->ensure_grad();
            auto& data = node->data;
            const auto& grad = node->grad;
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < data.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0f - beta1_) * grad[i];
                v[i] = beta2_ * v[i] + (1.0f - beta2_) * grad[i] * grad[i];
                float mh = m[i] / bc1;
                float vh = v[i] / bc2;
                data[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // Fresh optimizer state for a new optimization stage.
    void reset_moments() {
        t_ = 0;
        for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0f);
        for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0f);
    }

    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }

private:
    std::vector<Tensor> params_;
    float lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

} // namespace s4tk::core
