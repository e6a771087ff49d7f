#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "reprompt/cohort.hpp"

namespace reprompt {

/// Logistic regression over hand-extracted planted features (plus intercept), fit by
/// ridge-regularized Newton iterations. Upper-bound reference for learned models.
class LogisticOracle {
public:
    void fit(const std::vector<std::vector<double>>& features, const std::vector<double>& targets,
             double ridge = 1e-4, int iterations = 50) {
        if (features.empty() || features.size() != targets.size()) {
            throw std::invalid_argument("logistic oracle: need matching non-empty features/targets");
        }
        const std::size_t d = features.front().size() + 1;
        weights_.assign(d, 0.0);
        for (int it = 0; it < iterations; ++it) {
            std::vector<double> grad(d, 0.0);
            std::vector<double> hess(d * d, 0.0);
            for (std::size_t i = 0; i < features.size(); ++i) {
                const auto x = augmented(features[i]);
                const double p = probability_of(x);
                const double w = p * (1 - p);
                for (std::size_t a = 0; a < d; ++a) {
                    grad[a] += (p - targets[i]) * x[a];
                    for (std::size_t b = 0; b < d; ++b) hess[a * d + b] += w * x[a] * x[b];
                }
            }
            for (std::size_t a = 0; a < d; ++a) {
                grad[a] += ridge * weights_[a];
                hess[a * d + a] += ridge;
            }
            const auto step = solve(hess, grad, d);
            for (std::size_t a = 0; a < d; ++a) weights_[a] -= step[a];
        }
    }

    void fit(const cohort::Cohort& train, cohort::Task task) {
        std::vector<std::vector<double>> x;
        std::vector<double> y;
        for (const auto& p : train.patients) {
            x.push_back(cohort::extract_planted_features(p).as_vector());
            y.push_back(cohort::binary_target(p, task));
        }
        fit(x, y);
    }

    double predict(const std::vector<double>& features) const { return probability_of(augmented(features)); }

    double predict(const cohort::Patient& p) const {
        return predict(cohort::extract_planted_features(p).as_vector());
    }

    const std::vector<double>& weights() const { return weights_; }

private:
    std::vector<double> augmented(const std::vector<double>& f) const {
        std::vector<double> x(f);
        x.push_back(1.0);
        return x;
    }

    double probability_of(const std::vector<double>& x) const {
        double z = 0;
        for (std::size_t a = 0; a < x.size(); ++a) z += weights_[a] * x[a];
        return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }

    // Gaussian elimination with partial pivoting; the ridge keeps the system nonsingular.
    static std::vector<double> solve(std::vector<double> a, std::vector<double> b, std::size_t n) {
        for (std::size_t col = 0; col < n; ++col) {
            std::size_t pivot = col;
            for (std::size_t r = col + 1; r < n; ++r) {
                if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
            }
            for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
            std::swap(b[col], b[pivot]);
            for (std::size_t r = col + 1; r < n; ++r) {
                const double f = a[r * n + col] / a[col * n + col];
                for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
                b[r] -= f * b[col];
            }
        }
        std::vector<double> x(n);
        for (std::size_t i = n; i-- > 0;) {
            double acc = b[i];
            for (std::size_t c = i + 1; c < n; ++c) acc -= a[i * n + c] * x[c];
            x[i] = acc / a[i * n + i];
        }
        return x;
    }

    std::vector<double> weights_;
};

}  // namespace reprompt
