#pragma once

// RMSprop (pre-training) and Adam (fine-tuning). Both validate that every
// gradient is finite before touching any parameter, update in place, and
// zero the gradients afterwards.

#include <cmath>
#include <vector>

#include "switchtab/error.hpp"
#include "switchtab/tensor.hpp"

namespace switchtab {

namespace detail {
inline void require_finite_grads(const std::vector<Tensor>& params) {
    for (const Tensor& p : params)
        for (double g : p.grad())
            if (!std::isfinite(g))
                throw NumericError("optimizer step aborted: non-finite gradient in " +
                                   (p.name().empty() ? std::string("parameter") : p.name()));
}
}  // namespace detail

class RmsProp {
public:
    explicit RmsProp(const std::vector<Tensor>& params, double decay = 0.9,
                     double epsilon = 1e-8)
        : decay_(decay), epsilon_(epsilon) {
        acc_.reserve(params.size());
        for (const Tensor& p : params) acc_.emplace_back(p.numel(), 0.0);
    }

    // acc <- decay*acc + (1-decay)*g^2; theta <- theta - lr*g/(sqrt(acc)+eps)
    void step(std::vector<Tensor>& params, double lr) {
        if (params.size() != acc_.size()) throw DataError("optimizer bound to other parameters");
        detail::require_finite_grads(params);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& theta = params[i].mutable_values();
            auto& g = params[i].mutable_grad();
            auto& acc = acc_[i];
            for (std::size_t j = 0; j < theta.size(); ++j) {
                acc[j] = decay_ * acc[j] + (1.0 - decay_) * g[j] * g[j];
                theta[j] -= lr * g[j] / (std::sqrt(acc[j]) + epsilon_);
                g[j] = 0.0;
            }
        }
    }

private:
    double decay_, epsilon_;
    std::vector<std::vector<double>> acc_;
};

class Adam {
public:
    explicit Adam(const std::vector<Tensor>& params, double beta1 = 0.9, double beta2 = 0.999,
                  double epsilon = 1e-8)
        : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Tensor& p : params) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void step(std::vector<Tensor>& params, double lr) {
        if (params.size() != m_.size()) throw DataError("optimizer bound to other parameters");
        detail::require_finite_grads(params);
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& theta = params[i].mutable_values();
            auto& g = params[i].mutable_grad();
            for (std::size_t j = 0; j < theta.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                theta[j] -= lr * mhat / (std::sqrt(vhat) + epsilon_);
                g[j] = 0.0;
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, epsilon_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace switchtab
