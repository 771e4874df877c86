#pragma once

#include <cmath>
#include <vector>

#include "layers.hpp"

namespace cci {

/// Adam over an ordered list of tensors. The tensor order must stay the same
/// across steps.
template <typename S>
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(const std::vector<nn::Mat<S>*>& params, const std::vector<nn::Mat<S>*>& grads) {
        if (params.size() != grads.size()) throw Error("Adam: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (const auto* p : params) {
                m_.push_back(nn::Mat<S>::Zero(p->rows(), p->cols()));
                v_.push_back(nn::Mat<S>::Zero(p->rows(), p->cols()));
            }
        }
        ++t_;
        const S c1 = static_cast<S>(1.0 - std::pow(b1_, static_cast<double>(t_)));
        const S c2 = static_cast<S>(1.0 - std::pow(b2_, static_cast<double>(t_)));
        const S b1 = static_cast<S>(b1_), b2 = static_cast<S>(b2_);
        const S lr = static_cast<S>(lr_), eps = static_cast<S>(eps_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto g = grads[i]->array();
            m_[i].array() = b1 * m_[i].array() + (S(1) - b1) * g;
            v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * g * g;
            params[i]->array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
        }
    }

    long steps() const { return t_; }
    double lr() const { return lr_; }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<nn::Mat<S>> m_, v_;
};

} // namespace cci
