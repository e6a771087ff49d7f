#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "reprompt/numerics/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward value eagerly and,
// when any input requires gradients, records the local gradient rule on the output.
namespace reprompt::numerics {

namespace detail {

inline void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c[m x k] += g[m x n] * b[k x n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        double* ci = c + i * k;
        std::size_t p = 0;
        // Four independent dot products per pass; each keeps its own summation order.
        for (; p + 4 <= k; p += 4) {
            const double* b0 = b + p * n;
            const double* b1 = b0 + n;
            const double* b2 = b1 + n;
            const double* b3 = b2 + n;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double gj = gi[j];
                s0 += gj * b0[j];
                s1 += gj * b1[j];
                s2 += gj * b2[j];
                s3 += gj * b3[j];
            }
            ci[p] += s0;
            ci[p + 1] += s1;
            ci[p + 2] += s2;
            ci[p + 3] += s3;
        }
        for (; p < k; ++p) {
            const double* bp = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
            ci[p] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* gi = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
        }
    }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv_from_output) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
    auto xn = x.node();
    return Tensor::from_op(x.shape(), std::move(out), {xn}, [xn, deriv_from_output](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            xn->grad[i] += self.grad[i] * deriv_from_output(xn->data[i], self.data[i]);
        }
    });
}

}  // namespace detail

/// a[m x k] * b[k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node(), bn = b.node();
    return Tensor::from_op({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            detail::gemm_nt(self.grad.data(), bn->data.data(), an->grad.data(), m, k, n);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            detail::gemm_tn(an->data.data(), self.grad.data(), bn->grad.data(), m, k, n);
        }
    });
}

/// w[m x k] * x[k] -> [m].
inline Tensor matvec(const Tensor& w, const Tensor& x) {
    detail::require_2d(w, "matvec");
    const std::size_t m = w.dim(0), k = w.dim(1);
    if (x.ndim() != 1 || x.size() != k) {
        throw DimensionError("matvec: " + shape_string(w.shape()) + " cannot multiply " + shape_string(x.shape()));
    }
    std::vector<double> out(m, 0.0);
    detail::gemm_nt(x.data().data(), w.data().data(), out.data(), 1, m, k);
    auto wn = w.node(), xn = x.node();
    return Tensor::from_op({m}, std::move(out), {wn, xn}, [wn, xn, m, k](detail::Node& self) {
        if (wn->requires_grad) {
            wn->ensure_grad();
            detail::gemm_tn(self.grad.data(), xn->data.data(), wn->grad.data(), 1, m, k);
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            detail::gemm_nn(self.grad.data(), wn->data.data(), xn->grad.data(), 1, m, k);
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_2d(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    auto an = a.node();
    return Tensor::from_op({n, m}, std::move(out), {an}, [an, m, n](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_op(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
        for (auto* in : {an.get(), bn.get()}) {
            if (!in->requires_grad) continue;
            in->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_op(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto an = a.node(), bn = b.node();
    return Tensor::from_op(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    auto an = a.node();
    return Tensor::from_op(a.shape(), std::move(out), {an}, [an, s](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
    });
}

/// 1 - a, used by GRU interpolation.
inline Tensor one_minus(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - a[i];
    auto an = a.node();
    return Tensor::from_op(a.shape(), std::move(out), {an}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] -= self.grad[i];
    });
}

/// a[m x n] + bias[n] broadcast over rows; a 1-D `a` is treated as a single row.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
    const std::size_t n = a.cols();
    if (bias.ndim() != 1 || bias.size() != n) {
        throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                             shape_string(a.shape()));
    }
    const std::size_t m = a.size() / n;
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
    auto an = a.node(), bn = bias.node();
    return Tensor::from_op(a.shape(), std::move(out), {an, bn}, [an, bn, m, n](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) bn->grad[j] += self.grad[i * n + j];
        }
    });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(x, [](double v) { return std::tanh(v); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return detail::unary(
        x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); },
        [](double v, double) {
            const double u = c * (v + 0.044715 * v * v * v);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        });
}

/// Softmax over the last axis (row-wise for matrices), with max subtraction.
/// With `causal`, entry (i, j) of a square matrix is masked out when j > i.
inline Tensor softmax(const Tensor& x, bool causal = false) {
    if (!x.defined()) throw DimensionError("softmax: empty input");
    const std::size_t n = x.cols();
    const std::size_t m = x.size() / n;
    if (causal && (x.ndim() != 2 || m != n)) {
        throw DimensionError("softmax: causal mask needs a square matrix, got " + shape_string(x.shape()));
    }
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t limit = causal ? i + 1 : n;
        const double* row = x.data().data() + i * n;
        double* o = out.data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
            o[j] = std::exp(row[j] - mx);
            total += o[j];
        }
        for (std::size_t j = 0; j < limit; ++j) o[j] /= total;
    }
    auto xn = x.node();
    return Tensor::from_op(x.shape(), std::move(out), {xn}, [xn, m, n](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.data.data() + i * n;
            const double* g = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
            double* dx = xn->grad.data() + i * n;
            // Masked entries have y == 0 and therefore receive nothing.
            for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
        }
    });
}

inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    auto xn = x.node();
    return Tensor::from_op({1}, {total}, {xn}, [xn](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (double& g : xn->grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Sum over axis 0 of a matrix -> vector of length cols.
inline Tensor sum_rows(const Tensor& x) {
    detail::require_2d(x, "sum_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
    auto xn = x.node();
    return Tensor::from_op({n}, std::move(out), {xn}, [xn, m, n](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += self.grad[j];
    });
}

/// Mean-pool over axis 0 of a matrix.
inline Tensor mean_rows(const Tensor& x) {
    detail::require_2d(x, "mean_rows");
    return scale(sum_rows(x), 1.0 / static_cast<double>(x.dim(0)));
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
    }
    auto xn = x.node();
    return Tensor::from_op(std::move(shape), x.to_vector(), {xn}, [xn](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

/// Stacks matrices (or 1-D rows) vertically; all parts must share the column count.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t n = parts.front().cols();
    std::size_t total_rows = 0;
    std::vector<double> out;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    for (const auto& p : parts) {
        if (p.ndim() > 2 || p.cols() != n) {
            throw DimensionError("concat_rows: part " + shape_string(p.shape()) + " does not have " +
                                 std::to_string(n) + " columns");
        }
        total_rows += p.size() / n;
        out.insert(out.end(), p.data().begin(), p.data().end());
        inputs.push_back(p.node());
    }
    auto captured = inputs;
    return Tensor::from_op({total_rows, n}, std::move(out), std::move(inputs), [captured](detail::Node& self) {
        std::size_t offset = 0;
        for (const auto& in : captured) {
            const std::size_t len = in->data.size();
            if (in->requires_grad) {
                in->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) in->grad[i] += self.grad[offset + i];
            }
            offset += len;
        }
    });
}

/// Concatenates matrices with equal row counts side by side.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts.front().rows();
    std::size_t total_cols = 0;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_cols");
        if (p.dim(0) != m) {
            throw DimensionError("concat_cols: part " + shape_string(p.shape()) + " does not have " +
                                 std::to_string(m) + " rows");
        }
        widths.push_back(p.dim(1));
        total_cols += p.dim(1);
        inputs.push_back(p.node());
    }
    std::vector<double> out(m * total_cols);
    std::size_t col0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = widths[k];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total_cols + col0 + j] = parts[k][i * w + j];
        col0 += w;
    }
    auto captured = inputs;
    return Tensor::from_op({m, total_cols}, std::move(out), std::move(inputs),
                           [captured, widths, m, total_cols](detail::Node& self) {
                               std::size_t c0 = 0;
                               for (std::size_t k = 0; k < captured.size(); ++k) {
                                   const std::size_t w = widths[k];
                                   if (captured[k]->requires_grad) {
                                       captured[k]->ensure_grad();
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < w; ++j)
                                               captured[k]->grad[i * w + j] += self.grad[i * total_cols + c0 + j];
                                   }
                                   c0 += w;
                               }
                           });
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    detail::require_2d(x, "slice_cols");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (begin >= end || end > n) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for " + shape_string(x.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * n + begin + j];
    auto xn = x.node();
    return Tensor::from_op({m, w}, std::move(out), {xn}, [xn, m, n, w, begin](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) xn->grad[i * n + begin + j] += self.grad[i * w + j];
    });
}

/// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    detail::require_2d(x, "slice_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (begin >= end || end > m) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for " + shape_string(x.shape()));
    }
    std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                            x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
    auto xn = x.node();
    return Tensor::from_op({end - begin, n}, std::move(out), {xn}, [xn, begin, n](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[begin * n + i] += self.grad[i];
    });
}

/// Row i of a matrix as a vector.
inline Tensor row(const Tensor& x, std::size_t i) {
    detail::require_2d(x, "row");
    const std::size_t n = x.dim(1);
    if (i >= x.dim(0)) throw DimensionError("row: index " + std::to_string(i) + " out of " + shape_string(x.shape()));
    std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                            x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    auto xn = x.node();
    return Tensor::from_op({n}, std::move(out), {xn}, [xn, i, n](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t j = 0; j < n; ++j) xn->grad[i * n + j] += self.grad[j];
    });
}

/// Rows of `table` selected by `ids`; gradient scatter-adds into the table.
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
    detail::require_2d(table, "embedding");
    const std::size_t v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embedding: no ids");
    std::vector<double> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v) {
            throw DimensionError("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                                 std::to_string(v) + " rows");
        }
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, out.begin() +
                    static_cast<std::ptrdiff_t>(r * d));
    }
    auto tn = table.node();
    std::vector<int> idv(ids.begin(), ids.end());
    return Tensor::from_op({ids.size(), d}, std::move(out), {tn}, [tn, idv, d](detail::Node& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t r = 0; r < idv.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) tn->grad[static_cast<std::size_t>(idv[r]) * d + j] += self.grad[r * d + j];
    });
}

/// Row-wise layer normalization with affine gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    const std::size_t n = x.cols();
    if (gamma.size() != n || beta.size() != n) {
        throw DimensionError("layer_norm: affine params do not match " + shape_string(x.shape()));
    }
    const std::size_t m = x.size() / n;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = x.data().data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += r[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (r[j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gamma[j] + beta[j];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return Tensor::from_op(x.shape(), std::move(out), {xn, gn, bn},
                           [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](detail::Node& self) {
                               if (gn->requires_grad) {
                                   gn->ensure_grad();
                                   for (std::size_t i = 0; i < m * n; ++i) gn->grad[i % n] += self.grad[i] * xhat[i];
                               }
                               if (bn->requires_grad) {
                                   bn->ensure_grad();
                                   for (std::size_t i = 0; i < m * n; ++i) bn->grad[i % n] += self.grad[i];
                               }
                               if (!xn->requires_grad) return;
                               xn->ensure_grad();
                               const double inv_n = 1.0 / static_cast<double>(n);
                               for (std::size_t i = 0; i < m; ++i) {
                                   double sum_g = 0.0, sum_gx = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double g = self.grad[i * n + j] * gn->data[j];
                                       sum_g += g;
                                       sum_gx += g * xhat[i * n + j];
                                   }
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double g = self.grad[i * n + j] * gn->data[j];
                                       xn->grad[i * n + j] +=
                                           inv_std[i] * (g - inv_n * sum_g - xhat[i * n + j] * inv_n * sum_gx);
                                   }
                               }
                           });
}

/// Mean binary cross-entropy over all entries, computed from logits in log-sum-exp form.
inline Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
    if (targets.size() != logits.size()) {
        throw DimensionError("bce_with_logits: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_string(logits.shape()));
    }
    const std::size_t n = logits.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits[i];
        // max(z,0) - z*y + log(1 + exp(-|z|))
        total += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
    }
    auto ln = logits.node();
    std::vector<double> y(targets.begin(), targets.end());
    return Tensor::from_op({1}, {total / static_cast<double>(n)}, {ln}, [ln, y, n](detail::Node& self) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double z = ln->data[i];
            const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            ln->grad[i] += g * (s - y[i]);
        }
    });
}

}  // namespace reprompt::numerics
