#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "reprompt/numerics/nn.hpp"
#include "reprompt/numerics/tensor.hpp"

namespace reprompt::numerics {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Decoupled weight decay; 0 recovers plain Adam.
    double weight_decay = 0.0;
};

/// Adam with decoupled weight decay. Parameters without a gradient are treated as g = 0.
class Adam {
public:
    Adam() = default;
    Adam(NamedTensors params, AdamConfig config) : params_(std::move(params)), config_(config) {
        for (const auto& [name, p] : params_) {
            first_.emplace_back(p.size(), 0.0);
            second_.emplace_back(p.size(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    void step() {
        ++steps_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = params_[k].second;
            auto values = p.mutable_data();
            const auto grad = p.grad();
            auto& m = first_[k];
            auto& v = second_[k];
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double g = grad.empty() ? 0.0 : grad[i];
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                values[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * values[i]);
            }
        }
    }

    std::size_t steps() const { return steps_; }
    const AdamConfig& config() const { return config_; }
    const NamedTensors& params() const { return params_; }
    const std::vector<std::vector<double>>& first_moments() const { return first_; }
    const std::vector<std::vector<double>>& second_moments() const { return second_; }

    void restore(std::size_t steps, std::vector<std::vector<double>> first, std::vector<std::vector<double>> second) {
        if (first.size() != params_.size() || second.size() != params_.size()) {
            throw DimensionError("adam: moment buffers do not match parameter count");
        }
        steps_ = steps;
        first_ = std::move(first);
        second_ = std::move(second);
    }

private:
    NamedTensors params_;
    AdamConfig config_;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
    std::size_t steps_ = 0;
};

}  // namespace reprompt::numerics
