#include "flowforge/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "flowforge/common.hpp"
#include "flowforge/kernels.hpp"

namespace flowforge::nn {

namespace {

thread_local int g_no_grad_depth = 0;

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

NodePtr make_node(std::vector<int> shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(shape_size(n->shape), 0.0);
    n->requires_grad = requires_grad && g_no_grad_depth == 0;
    if (n->requires_grad) n->grad.assign(n->value.size(), 0.0);
    return n;
}

bool track(const Tensor& t) { return g_no_grad_depth == 0 && t.requires_grad(); }

// Result node for an op: requires grad if any parent does (and grad is on).
NodePtr op_node(std::vector<int> shape, std::initializer_list<Tensor> parents) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || track(p);
    auto n = make_node(std::move(shape), rg);
    if (n->requires_grad) {
        for (const auto& p : parents) n->parents.push_back(p.node());
    }
    return n;
}

void check(bool cond, const char* msg) {
    if (!cond) throw DataError(std::string("tensor op: ") + msg);
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double fill, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    std::fill(n->value.begin(), n->value.end(), fill);
    return Tensor(n);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> value,
                    bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    check(value.size() == n->value.size(), "from(): value size mismatch");
    n->value = std::move(value);
    return Tensor(n);
}

void Tensor::zero_grad() {
    if (node_ && node_->requires_grad)
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// --- matmul family -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul shapes");
    const std::size_t m = static_cast<std::size_t>(a.dim(0));
    const std::size_t k = static_cast<std::size_t>(a.dim(1));
    const std::size_t n = static_cast<std::size_t>(b.dim(1));
    auto out = op_node({a.dim(0), b.dim(1)}, {a, b});
    kernels::gemm_nn(a.data(), b.data(), out->value.data(), m, n, k);
    if (out->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        out->backward_fn = [an, bn, m, n, k](Node& self) {
            if (an->requires_grad)
                kernels::gemm_nt(self.grad.data(), bn->value.data(), an->grad.data(), m, k, n);
            if (bn->requires_grad)
                kernels::gemm_tn(an->value.data(), self.grad.data(), bn->grad.data(), k, n, m);
        };
    }
    return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& w) {
    check(a.rank() == 2 && w.rank() == 2 && a.dim(1) == w.dim(1), "matmul_nt shapes");
    const std::size_t m = static_cast<std::size_t>(a.dim(0));
    const std::size_t k = static_cast<std::size_t>(a.dim(1));
    const std::size_t n = static_cast<std::size_t>(w.dim(0));
    auto out = op_node({a.dim(0), w.dim(0)}, {a, w});
    kernels::gemm_nt(a.data(), w.data(), out->value.data(), m, n, k);
    if (out->requires_grad) {
        auto an = a.node();
        auto wn = w.node();
        out->backward_fn = [an, wn, m, n, k](Node& self) {
            // dA = dY * W ; dW = dY^T * A
            if (an->requires_grad)
                kernels::gemm_nn(self.grad.data(), wn->value.data(), an->grad.data(), m, k, n);
            if (wn->requires_grad)
                kernels::gemm_tn(self.grad.data(), an->value.data(), wn->grad.data(), n, k, m);
        };
    }
    return Tensor(out);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "bmm shapes");
    const std::size_t bs = static_cast<std::size_t>(a.dim(0));
    const std::size_t m = static_cast<std::size_t>(a.dim(1));
    const std::size_t k = static_cast<std::size_t>(a.dim(2));
    const std::size_t n = static_cast<std::size_t>(b.dim(2));
    auto out = op_node({a.dim(0), a.dim(1), b.dim(2)}, {a, b});
    for (std::size_t i = 0; i < bs; ++i) {
        kernels::gemm_nn(a.data() + i * m * k, b.data() + i * k * n,
                         out->value.data() + i * m * n, m, n, k);
    }
    if (out->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        out->backward_fn = [an, bn, bs, m, n, k](Node& self) {
            for (std::size_t i = 0; i < bs; ++i) {
                const double* dy = self.grad.data() + i * m * n;
                if (an->requires_grad)
                    kernels::gemm_nt(dy, bn->value.data() + i * k * n,
                                     an->grad.data() + i * m * k, m, k, n);
                if (bn->requires_grad)
                    kernels::gemm_tn(an->value.data() + i * m * k, dy,
                                     bn->grad.data() + i * k * n, k, n, m);
            }
        };
    }
    return Tensor(out);
}

Tensor transpose_last2(const Tensor& a) {
    check(a.rank() == 3, "transpose_last2 expects rank 3");
    const std::size_t bs = static_cast<std::size_t>(a.dim(0));
    const std::size_t m = static_cast<std::size_t>(a.dim(1));
    const std::size_t n = static_cast<std::size_t>(a.dim(2));
    auto out = op_node({a.dim(0), a.dim(2), a.dim(1)}, {a});
    for (std::size_t i = 0; i < bs; ++i) {
        const double* src = a.data() + i * m * n;
        double* dst = out->value.data() + i * m * n;
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) dst[c * m + r] = src[r * n + c];
    }
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, bs, m, n](Node& self) {
            for (std::size_t i = 0; i < bs; ++i) {
                const double* dy = self.grad.data() + i * m * n;
                double* dst = an->grad.data() + i * m * n;
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) dst[r * n + c] += dy[c * m + r];
            }
        };
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    check(shape_size(shape) == a.size(), "reshape size mismatch");
    auto out = op_node(std::move(shape), {a});
    out->value = a.values();
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an](Node& self) {
            kernels::axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
        };
    }
    return Tensor(out);
}

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "add shape mismatch");
    auto out = op_node(a.shape(), {a, b});
    kernels::vadd(a.data(), b.data(), out->value.data(), a.size());
    if (out->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        out->backward_fn = [an, bn](Node& self) {
            if (an->requires_grad)
                kernels::axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
            if (bn->requires_grad)
                kernels::axpy(1.0, self.grad.data(), bn->grad.data(), self.grad.size());
        };
    }
    return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mul shape mismatch");
    auto out = op_node(a.shape(), {a, b});
    kernels::vmul(a.data(), b.data(), out->value.data(), a.size());
    if (out->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        out->backward_fn = [an, bn](Node& self) {
            const std::size_t n = self.grad.size();
            if (an->requires_grad)
                for (std::size_t i = 0; i < n; ++i)
                    an->grad[i] += self.grad[i] * bn->value[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < n; ++i)
                    bn->grad[i] += self.grad[i] * an->value[i];
        };
    }
    return Tensor(out);
}

Tensor scale(const Tensor& a, double k) { return affine(a, k, 0.0); }

Tensor affine(const Tensor& a, double k, double c) {
    auto out = op_node(a.shape(), {a});
    kernels::vaffine(a.data(), k, c, out->value.data(), a.size());
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, k](Node& self) {
            kernels::axpy(k, self.grad.data(), an->grad.data(), self.grad.size());
        };
    }
    return Tensor(out);
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    check(bias.rank() == 1, "add_bias expects rank-1 bias");
    const std::size_t n = static_cast<std::size_t>(bias.dim(0));
    check(a.size() % n == 0 && a.dim(static_cast<int>(a.rank()) - 1) == bias.dim(0),
          "add_bias shape mismatch");
    const std::size_t rows_count = a.size() / n;
    auto out = op_node(a.shape(), {a, bias});
    for (std::size_t r = 0; r < rows_count; ++r)
        kernels::vadd(a.data() + r * n, bias.data(), out->value.data() + r * n, n);
    if (out->requires_grad) {
        auto an = a.node();
        auto bn = bias.node();
        out->backward_fn = [an, bn, rows_count, n](Node& self) {
            if (an->requires_grad)
                kernels::axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
            if (bn->requires_grad)
                for (std::size_t r = 0; r < rows_count; ++r)
                    kernels::axpy(1.0, self.grad.data() + r * n, bn->grad.data(), n);
        };
    }
    return Tensor(out);
}

Tensor add_frame(const Tensor& a, const Tensor& frame) {
    check(a.rank() >= 1, "add_frame rank");
    const std::size_t fsz = frame.size();
    check(a.size() % fsz == 0 && a.size() / fsz == static_cast<std::size_t>(a.dim(0)),
          "add_frame shape mismatch");
    const std::size_t bs = static_cast<std::size_t>(a.dim(0));
    auto out = op_node(a.shape(), {a, frame});
    for (std::size_t i = 0; i < bs; ++i)
        kernels::vadd(a.data() + i * fsz, frame.data(), out->value.data() + i * fsz, fsz);
    if (out->requires_grad) {
        auto an = a.node();
        auto fn = frame.node();
        out->backward_fn = [an, fn, bs, fsz](Node& self) {
            if (an->requires_grad)
                kernels::axpy(1.0, self.grad.data(), an->grad.data(), self.grad.size());
            if (fn->requires_grad)
                for (std::size_t i = 0; i < bs; ++i)
                    kernels::axpy(1.0, self.grad.data() + i * fsz, fn->grad.data(), fsz);
        };
    }
    return Tensor(out);
}

// --- nonlinearities ----------------------------------------------------------

Tensor relu(const Tensor& a) {
    auto out = op_node(a.shape(), {a});
    for (std::size_t i = 0; i < a.size(); ++i)
        out->value[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
        };
    }
    return Tensor(out);
}

Tensor tanh_op(const Tensor& a) {
    auto out = op_node(a.shape(), {a});
    for (std::size_t i = 0; i < a.size(); ++i) out->value[i] = std::tanh(a.data()[i]);
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
        };
    }
    return Tensor(out);
}

Tensor sigmoid(const Tensor& a) {
    auto out = op_node(a.shape(), {a});
    for (std::size_t i = 0; i < a.size(); ++i)
        out->value[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
        };
    }
    return Tensor(out);
}

Tensor softmax_lastdim(const Tensor& a) {
    const std::size_t n = static_cast<std::size_t>(a.dim(static_cast<int>(a.rank()) - 1));
    const std::size_t rows_count = a.size() / n;
    auto out = op_node(a.shape(), {a});
    for (std::size_t r = 0; r < rows_count; ++r) {
        const double* x = a.data() + r * n;
        double* y = out->value.data() + r * n;
        const double mx = kernels::reduce_max(x, n);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
        }
        kernels::scale(1.0 / sum, y, n);
    }
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, rows_count, n](Node& self) {
            for (std::size_t r = 0; r < rows_count; ++r) {
                const double* y = self.value.data() + r * n;
                const double* dy = self.grad.data() + r * n;
                double* dx = an->grad.data() + r * n;
                const double dot = kernels::dot(dy, y, n);
                for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (dy[i] - dot);
            }
        };
    }
    return Tensor(out);
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t n = static_cast<std::size_t>(a.dim(static_cast<int>(a.rank()) - 1));
    check(gain.size() == n && bias.size() == n, "layer_norm param sizes");
    const std::size_t rows_count = a.size() / n;
    auto out = op_node(a.shape(), {a, gain, bias});
    // keep normalized activations for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(a.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows_count);
    for (std::size_t r = 0; r < rows_count; ++r) {
        const double* x = a.data() + r * n;
        const double mean = kernels::reduce_sum(x, n) / static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        double* xh = xhat->data() + r * n;
        double* y = out->value.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) {
            xh[i] = (x[i] - mean) * is;
            y[i] = xh[i] * gain.data()[i] + bias.data()[i];
        }
    }
    if (out->requires_grad) {
        auto an = a.node();
        auto gn = gain.node();
        auto bn = bias.node();
        out->backward_fn = [an, gn, bn, xhat, inv_std, rows_count, n](Node& self) {
            for (std::size_t r = 0; r < rows_count; ++r) {
                const double* dy = self.grad.data() + r * n;
                const double* xh = xhat->data() + r * n;
                if (gn->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) gn->grad[i] += dy[i] * xh[i];
                if (bn->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) bn->grad[i] += dy[i];
                if (an->requires_grad) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double g = dy[i] * gn->value[i];
                        sum_g += g;
                        sum_gx += g * xh[i];
                    }
                    const double inv_n = 1.0 / static_cast<double>(n);
                    double* dx = an->grad.data() + r * n;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double g = dy[i] * gn->value[i];
                        dx[i] += (*inv_std)[r] *
                                 (g - sum_g * inv_n - xh[i] * sum_gx * inv_n);
                    }
                }
            }
        };
    }
    return Tensor(out);
}

// --- shape ops ---------------------------------------------------------------

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat of nothing");
    const auto& first = parts.front();
    std::size_t last_total = 0;
    const std::size_t lead = first.size() / static_cast<std::size_t>(
                                  first.dim(static_cast<int>(first.rank()) - 1));
    bool rg = false;
    for (const auto& p : parts) {
        const std::size_t pn = static_cast<std::size_t>(p.dim(static_cast<int>(p.rank()) - 1));
        check(p.size() / pn == lead, "concat leading-dim mismatch");
        last_total += pn;
        rg = rg || track(p);
    }
    std::vector<int> shape = first.shape();
    shape.back() = static_cast<int>(last_total);
    auto out = make_node(std::move(shape), rg);
    std::size_t col = 0;
    for (const auto& p : parts) {
        const std::size_t pn = static_cast<std::size_t>(p.dim(static_cast<int>(p.rank()) - 1));
        for (std::size_t r = 0; r < lead; ++r)
            std::copy_n(p.data() + r * pn, pn, out->value.data() + r * last_total + col);
        col += pn;
        if (rg) out->parents.push_back(p.node());
    }
    if (rg) {
        std::vector<std::size_t> widths;
        for (const auto& p : parts)
            widths.push_back(static_cast<std::size_t>(p.dim(static_cast<int>(p.rank()) - 1)));
        out->backward_fn = [widths, lead, last_total](Node& self) {
            std::size_t col2 = 0;
            for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                auto& parent = self.parents[pi];
                if (parent->requires_grad) {
                    for (std::size_t r = 0; r < lead; ++r)
                        kernels::axpy(1.0, self.grad.data() + r * last_total + col2,
                                      parent->grad.data() + r * widths[pi], widths[pi]);
                }
                col2 += widths[pi];
            }
        };
    }
    return Tensor(out);
}

Tensor slice_lastdim(const Tensor& a, int start, int len) {
    const std::size_t n = static_cast<std::size_t>(a.dim(static_cast<int>(a.rank()) - 1));
    check(start >= 0 && len > 0 && static_cast<std::size_t>(start + len) <= n,
          "slice_lastdim bounds");
    const std::size_t lead = a.size() / n;
    std::vector<int> shape = a.shape();
    shape.back() = len;
    auto out = op_node(std::move(shape), {a});
    for (std::size_t r = 0; r < lead; ++r)
        std::copy_n(a.data() + r * n + static_cast<std::size_t>(start),
                    static_cast<std::size_t>(len),
                    out->value.data() + r * static_cast<std::size_t>(len));
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, start, len, n, lead](Node& self) {
            for (std::size_t r = 0; r < lead; ++r)
                kernels::axpy(1.0, self.grad.data() + r * static_cast<std::size_t>(len),
                              an->grad.data() + r * n + static_cast<std::size_t>(start),
                              static_cast<std::size_t>(len));
        };
    }
    return Tensor(out);
}

Tensor rows(const Tensor& table, const std::vector<int>& ids) {
    check(table.rank() == 2, "rows expects a 2-D table");
    const std::size_t d = static_cast<std::size_t>(table.dim(1));
    auto out = op_node({static_cast<int>(ids.size()), table.dim(1)}, {table});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        check(ids[i] >= 0 && ids[i] < table.dim(0), "rows id out of range");
        std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d,
                    out->value.data() + i * d);
    }
    if (out->requires_grad) {
        auto tn = table.node();
        auto ids_copy = ids;
        out->backward_fn = [tn, ids_copy, d](Node& self) {
            for (std::size_t i = 0; i < ids_copy.size(); ++i)
                kernels::axpy(1.0, self.grad.data() + i * d,
                              tn->grad.data() + static_cast<std::size_t>(ids_copy[i]) * d, d);
        };
    }
    return Tensor(out);
}

Tensor split_heads(const Tensor& a, int heads) {
    check(a.rank() == 3 && a.dim(2) % heads == 0, "split_heads shape");
    const std::size_t b = static_cast<std::size_t>(a.dim(0));
    const std::size_t l = static_cast<std::size_t>(a.dim(1));
    const std::size_t d = static_cast<std::size_t>(a.dim(2));
    const std::size_t h = static_cast<std::size_t>(heads);
    const std::size_t dh = d / h;
    auto out = op_node({static_cast<int>(b * h), static_cast<int>(l), static_cast<int>(dh)}, {a});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t li = 0; li < l; ++li)
            for (std::size_t hi = 0; hi < h; ++hi)
                std::copy_n(a.data() + (bi * l + li) * d + hi * dh, dh,
                            out->value.data() + ((bi * h + hi) * l + li) * dh);
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, b, l, d, h, dh](Node& self) {
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t li = 0; li < l; ++li)
                    for (std::size_t hi = 0; hi < h; ++hi)
                        kernels::axpy(1.0,
                                      self.grad.data() + ((bi * h + hi) * l + li) * dh,
                                      an->grad.data() + (bi * l + li) * d + hi * dh, dh);
        };
    }
    return Tensor(out);
}

Tensor merge_heads(const Tensor& a, int heads) {
    check(a.rank() == 3 && a.dim(0) % heads == 0, "merge_heads shape");
    const std::size_t h = static_cast<std::size_t>(heads);
    const std::size_t b = static_cast<std::size_t>(a.dim(0)) / h;
    const std::size_t l = static_cast<std::size_t>(a.dim(1));
    const std::size_t dh = static_cast<std::size_t>(a.dim(2));
    const std::size_t d = h * dh;
    auto out = op_node({static_cast<int>(b), static_cast<int>(l), static_cast<int>(d)}, {a});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t li = 0; li < l; ++li)
            for (std::size_t hi = 0; hi < h; ++hi)
                std::copy_n(a.data() + ((bi * h + hi) * l + li) * dh, dh,
                            out->value.data() + (bi * l + li) * d + hi * dh);
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, b, l, d, h, dh](Node& self) {
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t li = 0; li < l; ++li)
                    for (std::size_t hi = 0; hi < h; ++hi)
                        kernels::axpy(1.0,
                                      self.grad.data() + (bi * l + li) * d + hi * dh,
                                      an->grad.data() + ((bi * h + hi) * l + li) * dh, dh);
        };
    }
    return Tensor(out);
}

Tensor maxpool_time(const Tensor& a) {
    check(a.rank() == 3, "maxpool_time expects [B,T,F]");
    const std::size_t b = static_cast<std::size_t>(a.dim(0));
    const std::size_t t = static_cast<std::size_t>(a.dim(1));
    const std::size_t f = static_cast<std::size_t>(a.dim(2));
    auto out = op_node({a.dim(0), a.dim(2)}, {a});
    auto argmax = std::make_shared<std::vector<std::size_t>>(b * f);
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t fi = 0; fi < f; ++fi) {
            std::size_t best = 0;
            double bv = a.data()[(bi * t) * f + fi];
            for (std::size_t ti = 1; ti < t; ++ti) {
                const double v = a.data()[(bi * t + ti) * f + fi];
                if (v > bv) {
                    bv = v;
                    best = ti;
                }
            }
            out->value[bi * f + fi] = bv;
            (*argmax)[bi * f + fi] = best;
        }
    }
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, argmax, b, t, f](Node& self) {
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t fi = 0; fi < f; ++fi)
                    an->grad[(bi * t + (*argmax)[bi * f + fi]) * f + fi] +=
                        self.grad[bi * f + fi];
        };
    }
    return Tensor(out);
}

Tensor unfold1d(const Tensor& a, int width) {
    check(a.rank() == 3, "unfold1d expects [B,T,E]");
    check(width >= 1 && width <= a.dim(1), "unfold1d width out of range");
    const std::size_t b = static_cast<std::size_t>(a.dim(0));
    const std::size_t t = static_cast<std::size_t>(a.dim(1));
    const std::size_t e = static_cast<std::size_t>(a.dim(2));
    const std::size_t w = static_cast<std::size_t>(width);
    const std::size_t tw = t - w + 1;
    auto out = op_node({a.dim(0), static_cast<int>(tw), static_cast<int>(w * e)}, {a});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ti = 0; ti < tw; ++ti)
            std::copy_n(a.data() + (bi * t + ti) * e, w * e,
                        out->value.data() + (bi * tw + ti) * w * e);
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an, b, t, e, w, tw](Node& self) {
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t ti = 0; ti < tw; ++ti)
                    kernels::axpy(1.0, self.grad.data() + (bi * tw + ti) * w * e,
                                  an->grad.data() + (bi * t + ti) * e, w * e);
        };
    }
    return Tensor(out);
}

Tensor mean_all(const Tensor& a) {
    auto out = op_node({1}, {a});
    out->value[0] = kernels::reduce_sum(a.data(), a.size()) / static_cast<double>(a.size());
    if (out->requires_grad) {
        auto an = a.node();
        out->backward_fn = [an](Node& self) {
            const double g = self.grad[0] / static_cast<double>(an->value.size());
            for (auto& v : an->grad) v += g;
        };
    }
    return Tensor(out);
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mse shape mismatch");
    auto out = op_node({1}, {a, b});
    out->value[0] = kernels::sq_dist(a.data(), b.data(), a.size()) /
                    static_cast<double>(a.size());
    if (out->requires_grad) {
        auto an = a.node();
        auto bn = b.node();
        out->backward_fn = [an, bn](Node& self) {
            const double g = 2.0 * self.grad[0] / static_cast<double>(an->value.size());
            for (std::size_t i = 0; i < an->value.size(); ++i) {
                const double d = an->value[i] - bn->value[i];
                if (an->requires_grad) an->grad[i] += g * d;
                if (bn->requires_grad) bn->grad[i] -= g * d;
            }
        };
    }
    return Tensor(out);
}

Tensor detach(const Tensor& a) {
    auto n = make_node(a.shape(), false);
    n->value = a.values();
    return Tensor(n);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<double>* row_weights) {
    check(logits.rank() == 2, "softmax_cross_entropy expects [M,V]");
    const std::size_t m = static_cast<std::size_t>(logits.dim(0));
    const std::size_t v = static_cast<std::size_t>(logits.dim(1));
    check(targets.size() == m, "target count mismatch");
    check(!row_weights || row_weights->size() == m, "weight count mismatch");

    auto probs = std::make_shared<std::vector<double>>(m * v);
    auto out = op_node({1}, {logits});
    double loss = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        const double* x = logits.data() + r * v;
        double* p = probs->data() + r * v;
        const double mx = kernels::reduce_max(x, v);
        double sum = 0.0;
        for (std::size_t i = 0; i < v; ++i) {
            p[i] = std::exp(x[i] - mx);
            sum += p[i];
        }
        kernels::scale(1.0 / sum, p, v);
        check(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < v,
              "target out of range");
        const double w = row_weights ? (*row_weights)[r] : 1.0;
        loss += -w * std::log(std::max(p[static_cast<std::size_t>(targets[r])], 1e-300));
    }
    out->value[0] = loss / static_cast<double>(m);

    if (out->requires_grad) {
        auto ln = logits.node();
        auto targets_copy = targets;
        std::vector<double> weights =
            row_weights ? *row_weights : std::vector<double>(m, 1.0);
        out->backward_fn = [ln, probs, targets_copy, weights, m, v](Node& self) {
            const double g = self.grad[0] / static_cast<double>(m);
            for (std::size_t r = 0; r < m; ++r) {
                const double* p = probs->data() + r * v;
                double* dx = ln->grad.data() + r * v;
                const double wg = g * weights[r];
                for (std::size_t i = 0; i < v; ++i) dx[i] += wg * p[i];
                dx[static_cast<std::size_t>(targets_copy[r])] -= wg;
            }
        };
    }
    return Tensor(out);
}

void backward(const Tensor& loss) {
    check(loss.size() == 1, "backward expects a scalar loss");
    if (!loss.requires_grad()) return;

    static std::uint64_t epoch = 0;
    const std::uint64_t cur = ++epoch;

    // Iterative post-order DFS over parents.
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    loss.node()->mark = cur;
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->mark != cur && p->requires_grad) {
                p->mark = cur;
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace flowforge::nn
