#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ted/rng.hpp"
#include "ted/special_tokens.hpp"
#include "ted/tensor.hpp"

namespace ted {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.dim() != 2) throw std::invalid_argument(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

// Accumulates into parent i when it participates in the graph.
template <typename F>
inline void accumulate(Node& n, std::size_t i, F&& f) {
    Node& p = *n.parents[i];
    if (!p.requires_grad) return;
    p.ensure_grad();
    f(p.grad);
}

}  // namespace detail

// ==================== Linear algebra ====================

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw std::invalid_argument("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const double* g = self.grad.data();
        const double* av = self.parents[0]->data.data();
        const double* bv = self.parents[1]->data.data();
        detail::accumulate(self, 0, [&](std::vector<double>& ga) { detail::gemm_nt(g, bv, ga.data(), m, n, k); });
        detail::accumulate(self, 1, [&](std::vector<double>& gb) { detail::gemm_tn(av, g, gb.data(), m, k, n); });
    });
}

// a[m x k] * b[n x k]^T without materialising the transpose.
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul_transposed");
    detail::require_matrix(b, "matmul_transposed");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
        throw std::invalid_argument("matmul_transposed inner dimensions disagree: " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()) + "^T");
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const double* g = self.grad.data();
        const double* av = self.parents[0]->data.data();
        const double* bv = self.parents[1]->data.data();
        // dA = G * B, dB = G^T * A
        detail::accumulate(self, 0, [&](std::vector<double>& ga) { detail::gemm_nn(g, bv, ga.data(), m, n, k); });
        detail::accumulate(self, 1, [&](std::vector<double>& gb) { detail::gemm_tn(g, av, gb.data(), m, n, k); });
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
    return detail::make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& ga) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
        });
    });
}

// ==================== Elementwise ====================

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            detail::accumulate(self, k, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            });
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        });
        detail::accumulate(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        });
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return detail::make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
        });
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
    return detail::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
    });
}

// Adds a length-n vector to every row of an m x n matrix.
inline Tensor add_row_vector(const Tensor& a, const Tensor& row) {
    detail::require_matrix(a, "add_row_vector");
    const std::size_t m = a.rows(), n = a.cols();
    if (row.size() != n)
        throw std::invalid_argument("add_row_vector: vector of length " + std::to_string(row.size()) +
                                    " does not match " + shape_str(a.shape()));
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + row[j];
    return detail::make_result(a.shape(), std::move(out), {a, row}, [m, n](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        detail::accumulate(self, 1, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        });
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return detail::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        const auto& x = self.parents[0]->data;
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > 0.0) g[i] += self.grad[i];
        });
    });
}

// Inverted dropout: kept units are scaled by 1/(1-p) in training, identity otherwise.
inline Tensor dropout(const Tensor& a, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout ratio must lie in [0, 1)");
    if (!training || p == 0.0) return a;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(a.size());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] = a[i] * mask[i];
    }
    return detail::make_result(a.shape(), std::move(out), {a}, [mask = std::move(mask)](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
        });
    });
}

// Sets entries where mask is true to value; those entries receive no gradient.
inline Tensor masked_fill(const Tensor& a, const std::vector<bool>& mask, double value) {
    if (mask.size() != a.size())
        throw std::invalid_argument("masked_fill: mask length " + std::to_string(mask.size()) +
                                    " does not match " + shape_str(a.shape()));
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i]) out[i] = value;
    return detail::make_result(a.shape(), std::move(out), {a}, [mask](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!mask[i]) g[i] += self.grad[i];
        });
    });
}

// Forward value of hard, gradient routed entirely to soft.
inline Tensor straight_through(const Tensor& hard, const Tensor& soft) {
    detail::require_same_shape(hard, soft, "straight_through");
    std::vector<double> out(hard.data().begin(), hard.data().end());
    return detail::make_result(hard.shape(), std::move(out), {soft}, [](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
    });
}

// ==================== Reductions ====================

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result({1}, {s}, {a}, [](Node& self) {
        const double g0 = self.grad[0];
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (double& v : g) v += g0;
        });
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// ==================== Normalisation ====================

namespace detail {

struct AxisLayout {
    std::size_t outer, extent, inner;
};

inline AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisLayout l{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

}  // namespace detail

// Softmax along an axis, max-subtracted so large logits cannot overflow.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto l = detail::axis_layout(x.shape(), axis);
    std::vector<double> out(x.size());
    const auto in = x.data();
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.extent * l.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < l.extent; ++k) mx = std::max(mx, in[base + k * l.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < l.extent; ++k) {
                const double e = std::exp(in[base + k * l.inner] - mx);
                out[base + k * l.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] /= z;
        }
    return detail::make_result(x.shape(), std::move(out), {x}, [l](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            const auto& y = self.data;
            for (std::size_t o = 0; o < l.outer; ++o)
                for (std::size_t i = 0; i < l.inner; ++i) {
                    const std::size_t base = o * l.extent * l.inner + i;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < l.extent; ++k) {
                        const std::size_t idx = base + k * l.inner;
                        dot += self.grad[idx] * y[idx];
                    }
                    for (std::size_t k = 0; k < l.extent; ++k) {
                        const std::size_t idx = base + k * l.inner;
                        g[idx] += y[idx] * (self.grad[idx] - dot);
                    }
                }
        });
    });
}

inline Tensor softmax(const Tensor& x) { return softmax(x, x.dim() - 1); }

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const auto l = detail::axis_layout(x.shape(), axis);
    std::vector<double> out(x.size());
    const auto in = x.data();
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.extent * l.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < l.extent; ++k) mx = std::max(mx, in[base + k * l.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < l.extent; ++k) z += std::exp(in[base + k * l.inner] - mx);
            const double lse = mx + std::log(z);
            for (std::size_t k = 0; k < l.extent; ++k) out[base + k * l.inner] = in[base + k * l.inner] - lse;
        }
    return detail::make_result(x.shape(), std::move(out), {x}, [l](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            const auto& y = self.data;
            for (std::size_t o = 0; o < l.outer; ++o)
                for (std::size_t i = 0; i < l.inner; ++i) {
                    const std::size_t base = o * l.extent * l.inner + i;
                    double gsum = 0.0;
                    for (std::size_t k = 0; k < l.extent; ++k) gsum += self.grad[base + k * l.inner];
                    for (std::size_t k = 0; k < l.extent; ++k) {
                        const std::size_t idx = base + k * l.inner;
                        g[idx] += self.grad[idx] - std::exp(y[idx]) * gsum;
                    }
                }
        });
    });
}

inline Tensor log_softmax(const Tensor& x) { return log_softmax(x, x.dim() - 1); }

// Normalises each vector along the last dimension (population variance + eps),
// then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const std::size_t n = x.cols();
    const std::size_t m = x.size() / n;
    if (gain.size() != n || bias.size() != n)
        throw std::invalid_argument("layer_norm: gain/bias must have length " + std::to_string(n));
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(m);
    const auto in = x.data();
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = in.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (row[j] - mu) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gain[j] + bias[j];
        }
    }
    return detail::make_result(
        x.shape(), std::move(out), {x, gain, bias},
        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            const auto& gy = self.grad;
            const auto& gv = self.parents[1]->data;
            detail::accumulate(self, 0, [&](std::vector<double>& gx) {
                for (std::size_t r = 0; r < m; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = gy[r * n + j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * n + j];
                    }
                    mean_d /= static_cast<double>(n);
                    mean_dx /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = gy[r * n + j] * gv[j];
                        gx[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                    }
                }
            });
            detail::accumulate(self, 1, [&](std::vector<double>& gg) {
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += gy[r * n + j] * xhat[r * n + j];
            });
            detail::accumulate(self, 2, [&](std::vector<double>& gb) {
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
            });
        });
}

// ==================== Indexing & layout ====================

// Gathers rows of table; the backward pass scatter-adds into those rows.
inline Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids) {
    detail::require_matrix(table, "embedding_lookup");
    if (ids.empty()) throw std::invalid_argument("embedding_lookup: empty id sequence");
    const std::size_t v = table.rows(), n = table.cols();
    std::vector<TokenId> idx(ids.begin(), ids.end());
    std::vector<double> out(idx.size() * n);
    const auto src = table.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v)
            throw std::invalid_argument("embedding_lookup: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                                        std::to_string(v));
        std::copy_n(src.data() + static_cast<std::size_t>(idx[i]) * n, n, out.data() + i * n);
    }
    const std::size_t len = idx.size();
    return detail::make_result({len, n}, std::move(out), {table}, [n, idx = std::move(idx)](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                double* dst = g.data() + static_cast<std::size_t>(idx[i]) * n;
                for (std::size_t j = 0; j < n; ++j) dst[j] += self.grad[i * n + j];
            }
        });
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    detail::require_matrix(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (count == 0 || start + count > n) throw std::invalid_argument("slice_cols out of range for " + shape_str(a.shape()));
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a[i * n + start + j];
    return detail::make_result({m, count}, std::move(out), {a}, [m, n, start, count](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
        });
    });
}

inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    detail::require_matrix(a, "slice_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (count == 0 || start + count > m) throw std::invalid_argument("slice_rows out of range for " + shape_str(a.shape()));
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                            a.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
    return detail::make_result({count, n}, std::move(out), {a}, [n, start](Node& self) {
        detail::accumulate(self, 0, [&](std::vector<double>& g) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
        });
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_cols");
        if (p.rows() != m) throw std::invalid_argument("concat_cols: row counts disagree");
        total += p.cols();
    }
    std::vector<double> out(m * total);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p[i * w + j];
        off += w;
    }
    return detail::make_result({m, total}, std::move(out), parts, [m, total, offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            const std::size_t w = self.parents[k]->shape.back();
            detail::accumulate(self, k, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * total + offsets[k] + j];
            });
        }
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t n = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_rows");
        if (p.cols() != n) throw std::invalid_argument("concat_rows: column counts disagree");
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return detail::make_result({total, n}, std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            const std::size_t len = self.parents[k]->data.size();
            detail::accumulate(self, k, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
            });
            off += len;
        }
    });
}

// ==================== Losses ====================

// Mean over positions of -log softmax(logits)[target]. Positions whose target
// equals ignore_id are excluded from the mean; all-ignored input yields 0.
inline Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                            std::optional<TokenId> ignore_id = kPad) {
    detail::require_matrix(logits, "cross_entropy");
    const std::size_t t = logits.rows(), v = logits.cols();
    if (targets.size() != t)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(t) + " rows");
    std::vector<TokenId> tg(targets.begin(), targets.end());
    std::vector<double> probs(t * v);
    double total = 0.0;
    std::size_t counted = 0;
    const auto in = logits.data();
    for (std::size_t i = 0; i < t; ++i) {
        if (tg[i] < 0 || static_cast<std::size_t>(tg[i]) >= v)
            throw std::invalid_argument("cross_entropy: target id " + std::to_string(tg[i]) + " outside [0, " +
                                        std::to_string(v) + ")");
        const double* row = in.data() + i * v;
        double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            probs[i * v + j] = std::exp(row[j] - mx);
            z += probs[i * v + j];
        }
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
        if (ignore_id && tg[i] == *ignore_id) continue;
        total += -(row[static_cast<std::size_t>(tg[i])] - mx - std::log(z));
        ++counted;
    }
    const double denom = counted ? static_cast<double>(counted) : 1.0;
    return detail::make_result(
        {1}, {total / denom}, {logits},
        [t, v, denom, ignore_id, tg = std::move(tg), probs = std::move(probs)](Node& self) {
            const double g0 = self.grad[0] / denom;
            detail::accumulate(self, 0, [&](std::vector<double>& g) {
                for (std::size_t i = 0; i < t; ++i) {
                    if (ignore_id && tg[i] == *ignore_id) continue;
                    for (std::size_t j = 0; j < v; ++j) g[i * v + j] += g0 * probs[i * v + j];
                    g[i * v + static_cast<std::size_t>(tg[i])] -= g0;
                }
            });
        });
}

}  // namespace ted
