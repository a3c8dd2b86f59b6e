#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ted/errors.hpp"
#include "ted/tensor.hpp"

namespace ted {

struct OptimizerConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool rectify = true;     // false gives plain Adam with bias correction
    double clip_norm = 1.0;  // global gradient-norm clip; 0 disables

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("eps must be positive");
        if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
    }
};

// Rectified Adam over a fixed parameter list. Parameters without a gradient
// are treated as having a zero gradient.
class RAdam {
public:
    RAdam(std::vector<Tensor> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    const OptimizerConfig& config() const { return cfg_; }
    void set_lr(double lr) {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        cfg_.lr = lr;
    }
    std::uint64_t step_count() const { return t_; }
    double last_grad_norm() const { return last_norm_; }

    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void set_step_count(std::uint64_t t) { t_ = t; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    double grad_norm() const {
        double sq = 0.0;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) continue;
            for (double g : params_[i].grad()) {
                if (!std::isfinite(g)) return std::nan("");
                sq += g * g;
            }
        }
        return std::sqrt(sq);
    }

    void step() {
        const double norm = grad_norm();
        if (!std::isfinite(norm)) {
            for (std::size_t i = 0; i < params_.size(); ++i)
                if (params_[i].has_grad())
                    for (double g : params_[i].grad())
                        if (!std::isfinite(g))
                            throw InvariantError("non-finite gradient in parameter #" + std::to_string(i) +
                                                 "; step aborted");
        }
        last_norm_ = norm;
        const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

        ++t_;
        const double t = static_cast<double>(t_);
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bc1 = 1.0 - std::pow(b1, t);
        const double bc2 = 1.0 - std::pow(b2, t);
        const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
        const double rho_t = rho_inf - 2.0 * t * std::pow(b2, t) / bc2;
        bool adaptive = true;
        double rect = 1.0;
        if (cfg_.rectify) {
            adaptive = rho_t > 4.0;
            if (adaptive)
                rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        }

        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            auto& m = m_[i];
            auto& v = v_[i];
            auto data = p.mutable_data();
            const bool has = p.has_grad();
            const auto grad = has ? p.grad() : std::span<const double>{};
            for (std::size_t j = 0; j < data.size(); ++j) {
                const double g = has ? grad[j] * clip : 0.0;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                const double m_hat = m[j] / bc1;
                if (adaptive)
                    data[j] -= cfg_.lr * rect * m_hat / (std::sqrt(v[j] / bc2) + cfg_.eps);
                else
                    data[j] -= cfg_.lr * m_hat;
            }
        }
    }

private:
    std::vector<Tensor> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
    double last_norm_ = 0.0;
};

}  // namespace ted
