// SPDX-License-Identifier: Apache-2.0
#include "veggie/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace veggie::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

namespace {

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backfn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    bool rg = false;
    for (const auto& in : n->inputs) rg = rg || in->requires_grad;
    n->requires_grad = rg;
    if (rg) n->backfn = std::move(backfn);
    return n;
}

void ensure_grad(Node& n) {
    if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
}

void accum(const Var& in, const Tensor& g) {
    if (!in->requires_grad) return;
    ensure_grad(*in);
    double* dst = in->grad.data();
    const double* src = g.data();
    const std::int64_t n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

std::vector<int> cat_shape(const std::vector<Var>& xs, int dim) {
    std::vector<int> s = xs[0]->value.shape();
    for (size_t i = 1; i < xs.size(); ++i) {
        const auto& si = xs[i]->value.shape();
        if (si.size() != s.size()) throw std::invalid_argument("concat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != dim && si[d] != s[d])
                throw std::invalid_argument("concat: shape mismatch");
        s[static_cast<size_t>(dim)] += si[static_cast<size_t>(dim)];
    }
    return s;
}

}  // namespace

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

Var constant(Tensor v) { return leaf(std::move(v), false); }

void backward(const Var& root) {
    // Topological order by iterative DFS.
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_set<Node*> visited;
    if (!root->requires_grad) return;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* child = node->inputs[idx++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    ensure_grad(*root);
    std::fill(root->grad.vec().begin(), root->grad.vec().end(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && n->grad.numel() > 0) n->backfn(*n);
    }
}

std::size_t graph_size(const Var& root) {
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        for (auto& in : n->inputs) stack.push_back(in.get());
    }
    return seen.size();
}

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        accum(n.inputs[0], n.grad);
        accum(n.inputs[1], n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        accum(n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor g(n.grad.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = -n.grad[i];
            accum(n.inputs[1], g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        if (n.inputs[0]->requires_grad) {
            Tensor g(n.grad.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * n.inputs[1]->value[i];
            accum(n.inputs[0], g);
        }
        if (n.inputs[1]->requires_grad) {
            Tensor g(n.grad.shape());
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * n.inputs[0]->value[i];
            accum(n.inputs[1], g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * s;
    return make(std::move(out), {a}, [s](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(n.grad.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * s;
        accum(n.inputs[0], g);
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + s;
    return make(std::move(out), {a}, [](Node& n) { accum(n.inputs[0], n.grad); });
}

Var silu(const Var& a) {
    Tensor out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        double x = a->value[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    return make(std::move(out), {a}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(n.grad.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            double x = n.inputs[0]->value[i];
            double sig = 1.0 / (1.0 + std::exp(-x));
            g[i] = n.grad[i] * sig * (1.0 + x * (1.0 - sig));
        }
        accum(n.inputs[0], g);
    });
}

Var square(const Var& a) { return mul(a, a); }

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.reshaped(std::move(shape));
    return make(std::move(out), {a}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        accum(n.inputs[0], n.grad.reshaped(n.inputs[0]->value.shape()));
    });
}

Var concat(const std::vector<Var>& xs, int dim) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    std::vector<int> oshape = cat_shape(xs, dim);
    Tensor out(oshape);
    // outer = product of dims before `dim`, inner = product after.
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= oshape[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(dim) + 1; d < oshape.size(); ++d) inner *= oshape[d];
    const std::int64_t ocat = oshape[static_cast<size_t>(dim)];
    std::int64_t off = 0;
    for (const auto& x : xs) {
        const std::int64_t c = x->value.dim(dim);
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(x->value.data() + o * c * inner, c * inner,
                        out.data() + (o * ocat + off) * inner);
        off += c;
    }
    return make(std::move(out), xs, [dim, outer, inner, ocat](Node& n) {
        std::int64_t off = 0;
        for (auto& in : n.inputs) {
            const std::int64_t c = in->value.dim(dim);
            if (in->requires_grad) {
                Tensor g(in->value.shape());
                for (std::int64_t o = 0; o < outer; ++o)
                    std::copy_n(n.grad.data() + (o * ocat + off) * inner, c * inner,
                                g.data() + o * c * inner);
                accum(in, g);
            }
            off += c;
        }
    });
}

Var slice(const Var& a, int dim, int start, int len) {
    const auto& s = a->value.shape();
    if (start < 0 || len < 0 || start + len > s[static_cast<size_t>(dim)])
        throw std::invalid_argument("slice: out of range");
    std::vector<int> oshape = s;
    oshape[static_cast<size_t>(dim)] = len;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= s[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(dim) + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t full = s[static_cast<size_t>(dim)];
    Tensor out(oshape);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(a->value.data() + (o * full + start) * inner, len * inner,
                    out.data() + o * len * inner);
    return make(std::move(out), {a}, [outer, inner, full, start, len](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(n.inputs[0]->value.shape());
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(n.grad.data() + o * len * inner, len * inner,
                        g.data() + (o * full + start) * inner);
        accum(n.inputs[0], g);
    });
}

namespace {

Tensor swap_axes(const Tensor& t, int d0, int d1) {
    const auto& s = t.shape();
    std::vector<int> os = s;
    std::swap(os[static_cast<size_t>(d0)], os[static_cast<size_t>(d1)]);
    Tensor out(os);
    const int nd = t.ndim();
    std::vector<std::int64_t> in_strides(static_cast<size_t>(nd), 1);
    for (int d = nd - 2; d >= 0; --d)
        in_strides[static_cast<size_t>(d)] =
            in_strides[static_cast<size_t>(d + 1)] * s[static_cast<size_t>(d + 1)];
    std::vector<std::int64_t> perm_strides(static_cast<size_t>(nd));
    for (int d = 0; d < nd; ++d) perm_strides[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(d)];
    std::swap(perm_strides[static_cast<size_t>(d0)], perm_strides[static_cast<size_t>(d1)]);
    std::vector<int> idx(static_cast<size_t>(nd), 0);
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t src = 0;
        for (int d = 0; d < nd; ++d) src += idx[static_cast<size_t>(d)] * perm_strides[static_cast<size_t>(d)];
        out[i] = t[src];
        for (int d = nd - 1; d >= 0; --d) {
            if (++idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    return out;
}

}  // namespace

Var transpose(const Var& a, int d0, int d1) {
    Tensor out = swap_axes(a->value, d0, d1);
    return make(std::move(out), {a}, [d0, d1](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        accum(n.inputs[0], swap_axes(n.grad, d0, d1));
    });
}

Var sum_all(const Var& a) {
    double s = 0;
    for (std::int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return make(Tensor::scalar(s), {a}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g = Tensor::full(n.inputs[0]->value.shape(), n.grad[0]);
        accum(n.inputs[0], g);
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel())); }

Var mse(const Var& a, const Var& b) { return mean_all(square(sub(a, b))); }

Var matmul(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw std::invalid_argument("matmul: bad shapes " + a->value.shape_str() + " x " + b->value.shape_str());
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor out({m, n});
    CMapM A(a->value.data(), m, k), B(b->value.data(), k, n);
    MapM O(out.data(), m, n);
    O.noalias() = A * B;
    return make(std::move(out), {a, b}, [m, k, n](Node& nd) {
        CMapM G(nd.grad.data(), m, n);
        if (nd.inputs[0]->requires_grad) {
            CMapM B(nd.inputs[1]->value.data(), k, n);
            Tensor ga({m, k});
            MapM(ga.data(), m, k).noalias() = G * B.transpose();
            accum(nd.inputs[0], ga);
        }
        if (nd.inputs[1]->requires_grad) {
            CMapM A(nd.inputs[0]->value.data(), m, k);
            Tensor gb({k, n});
            MapM(gb.data(), k, n).noalias() = A.transpose() * G;
            accum(nd.inputs[1], gb);
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    if (a->value.ndim() != 3 || b->value.ndim() != 3 || a->value.dim(0) != b->value.dim(0) ||
        a->value.dim(2) != b->value.dim(1))
        throw std::invalid_argument("bmm: bad shapes " + a->value.shape_str() + " x " + b->value.shape_str());
    const int B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n = b->value.dim(2);
    Tensor out({B, m, n});
    for (int i = 0; i < B; ++i) {
        CMapM A(a->value.data() + static_cast<std::int64_t>(i) * m * k, m, k);
        CMapM Bm(b->value.data() + static_cast<std::int64_t>(i) * k * n, k, n);
        MapM O(out.data() + static_cast<std::int64_t>(i) * m * n, m, n);
        O.noalias() = A * Bm;
    }
    return make(std::move(out), {a, b}, [B, m, k, n](Node& nd) {
        for (int i = 0; i < B; ++i) {
            CMapM G(nd.grad.data() + static_cast<std::int64_t>(i) * m * n, m, n);
            if (nd.inputs[0]->requires_grad) {
                ensure_grad(*nd.inputs[0]);
                CMapM Bm(nd.inputs[1]->value.data() + static_cast<std::int64_t>(i) * k * n, k, n);
                MapM GA(nd.inputs[0]->grad.data() + static_cast<std::int64_t>(i) * m * k, m, k);
                GA.noalias() += G * Bm.transpose();
            }
            if (nd.inputs[1]->requires_grad) {
                ensure_grad(*nd.inputs[1]);
                CMapM A(nd.inputs[0]->value.data() + static_cast<std::int64_t>(i) * m * k, m, k);
                MapM GB(nd.inputs[1]->grad.data() + static_cast<std::int64_t>(i) * k * n, k, n);
                GB.noalias() += A.transpose() * G;
            }
        }
    });
}

Var add_bias(const Var& x, const Var& b) {
    const int d = b->value.dim(0);
    if (x->value.dim(x->value.ndim() - 1) != d)
        throw std::invalid_argument("add_bias: last dim mismatch");
    Tensor out(x->value.shape());
    const std::int64_t rows = x->value.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) out[r * d + j] = x->value[r * d + j] + b->value[j];
    return make(std::move(out), {x, b}, [d, rows](Node& n) {
        accum(n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor g({d});
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) g[j] += n.grad[r * d + j];
            accum(n.inputs[1], g);
        }
    });
}

Var add_channel_bias(const Var& x, const Var& b) {
    const int C = b->value.dim(0);
    if (x->value.ndim() < 2 || x->value.dim(1) != C)
        throw std::invalid_argument("add_channel_bias: channel mismatch");
    const int N = x->value.dim(0);
    std::int64_t inner = x->value.numel() / (static_cast<std::int64_t>(N) * C);
    Tensor out(x->value.shape());
    for (int n0 = 0; n0 < N; ++n0)
        for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(n0) * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) out[base + i] = x->value[base + i] + b->value[c];
        }
    return make(std::move(out), {x, b}, [N, C, inner](Node& n) {
        accum(n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor g({C});
            for (int n0 = 0; n0 < N; ++n0)
                for (int c = 0; c < C; ++c) {
                    const std::int64_t base = (static_cast<std::int64_t>(n0) * C + c) * inner;
                    for (std::int64_t i = 0; i < inner; ++i) g[c] += n.grad[base + i];
                }
            accum(n.inputs[1], g);
        }
    });
}

Var linear(const Var& x, const Var& W, const Var& b) {
    const int din = W->value.dim(0), dout = W->value.dim(1);
    std::vector<int> xs = x->value.shape();
    if (xs.back() != din) throw std::invalid_argument("linear: input width mismatch");
    const int rows = static_cast<int>(x->value.numel() / din);
    Var x2 = reshape(x, {rows, din});
    Var y = matmul(x2, W);
    if (b) y = add_bias(y, b);
    std::vector<int> os = xs;
    os.back() = dout;
    return reshape(y, os);
}

Var softmax_lastdim(const Var& a) {
    const int d = a->value.dim(a->value.ndim() - 1);
    const std::int64_t rows = a->value.numel() / d;
    Tensor out(a->value.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xi = a->value.data() + r * d;
        double* yi = out.data() + r * d;
        double mx = xi[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
        double s = 0;
        for (int j = 0; j < d; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            s += yi[j];
        }
        for (int j = 0; j < d; ++j) yi[j] /= s;
    }
    return make(std::move(out), {a}, [d, rows](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(n.grad.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * d;
            const double* dy = n.grad.data() + r * d;
            double dot = 0;
            for (int j = 0; j < d; ++j) dot += y[j] * dy[j];
            for (int j = 0; j < d; ++j) g[r * d + j] = y[j] * (dy[j] - dot);
        }
        accum(n.inputs[0], g);
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int d = x->value.dim(x->value.ndim() - 1);
    const std::int64_t rows = x->value.numel() / d;
    Tensor out(x->value.shape());
    Tensor xhat(x->value.shape());
    Tensor inv_std({static_cast<int>(rows)});
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xi = x->value.data() + r * d;
        double mean = 0;
        for (int j = 0; j < d; ++j) mean += xi[j];
        mean /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int j = 0; j < d; ++j) {
            xhat[r * d + j] = (xi[j] - mean) * is;
            out[r * d + j] = gamma->value[j] * xhat[r * d + j] + beta->value[j];
        }
    }
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto istd = std::make_shared<Tensor>(std::move(inv_std));
    return make(std::move(out), {x, gamma, beta}, [d, rows, xh, istd](Node& n) {
        const Tensor& xhat = *xh;
        if (n.inputs[1]->requires_grad || n.inputs[2]->requires_grad) {
            Tensor gg({d}), gb({d});
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < d; ++j) {
                    gg[j] += n.grad[r * d + j] * xhat[r * d + j];
                    gb[j] += n.grad[r * d + j];
                }
            accum(n.inputs[1], gg);
            accum(n.inputs[2], gb);
        }
        if (n.inputs[0]->requires_grad) {
            Tensor gx(n.inputs[0]->value.shape());
            const Tensor& gamma = n.inputs[1]->value;
            for (std::int64_t r = 0; r < rows; ++r) {
                double m1 = 0, m2 = 0;
                for (int j = 0; j < d; ++j) {
                    double dxh = n.grad[r * d + j] * gamma[j];
                    m1 += dxh;
                    m2 += dxh * xhat[r * d + j];
                }
                m1 /= d;
                m2 /= d;
                for (int j = 0; j < d; ++j) {
                    double dxh = n.grad[r * d + j] * gamma[j];
                    gx[r * d + j] = (*istd)[r] * (dxh - m1 - xhat[r * d + j] * m2);
                }
            }
            accum(n.inputs[0], gx);
        }
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
    const auto& s = x->value.shape();
    if (s.size() < 3) throw std::invalid_argument("group_norm: expect [N,C,...]");
    const int N = s[0], C = s[1];
    if (C % groups != 0) throw std::invalid_argument("group_norm: C % groups != 0");
    const int cg = C / groups;
    const std::int64_t spatial = x->value.numel() / (static_cast<std::int64_t>(N) * C);
    const std::int64_t gsz = cg * spatial;
    Tensor out(s);
    Tensor xhat(s);
    Tensor inv_std({N, groups});
    for (int n0 = 0; n0 < N; ++n0)
        for (int g = 0; g < groups; ++g) {
            const std::int64_t base = (static_cast<std::int64_t>(n0) * C + static_cast<std::int64_t>(g) * cg) * spatial;
            double mean = 0;
            for (std::int64_t i = 0; i < gsz; ++i) mean += x->value[base + i];
            mean /= static_cast<double>(gsz);
            double var = 0;
            for (std::int64_t i = 0; i < gsz; ++i) {
                double dv = x->value[base + i] - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(gsz);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std.at({n0, g}) = is;
            for (std::int64_t i = 0; i < gsz; ++i) {
                const int c = static_cast<int>(g * cg + i / spatial);
                xhat[base + i] = (x->value[base + i] - mean) * is;
                out[base + i] = gamma->value[c] * xhat[base + i] + beta->value[c];
            }
        }
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto istd = std::make_shared<Tensor>(std::move(inv_std));
    return make(std::move(out), {x, gamma, beta},
                [N, C, groups, cg, spatial, gsz, xh, istd](Node& n) {
        const Tensor& xhat = *xh;
        if (n.inputs[1]->requires_grad || n.inputs[2]->requires_grad) {
            Tensor gg({C}), gb({C});
            for (int n0 = 0; n0 < N; ++n0)
                for (int c = 0; c < C; ++c) {
                    const std::int64_t base = (static_cast<std::int64_t>(n0) * C + c) * spatial;
                    for (std::int64_t i = 0; i < spatial; ++i) {
                        gg[c] += n.grad[base + i] * xhat[base + i];
                        gb[c] += n.grad[base + i];
                    }
                }
            accum(n.inputs[1], gg);
            accum(n.inputs[2], gb);
        }
        if (n.inputs[0]->requires_grad) {
            const Tensor& gamma = n.inputs[1]->value;
            Tensor gx(n.inputs[0]->value.shape());
            for (int n0 = 0; n0 < N; ++n0)
                for (int g = 0; g < groups; ++g) {
                    const std::int64_t base =
                        (static_cast<std::int64_t>(n0) * C + static_cast<std::int64_t>(g) * cg) * spatial;
                    double m1 = 0, m2 = 0;
                    for (std::int64_t i = 0; i < gsz; ++i) {
                        const int c = static_cast<int>(g * cg + i / spatial);
                        double dxh = n.grad[base + i] * gamma[c];
                        m1 += dxh;
                        m2 += dxh * xhat[base + i];
                    }
                    m1 /= static_cast<double>(gsz);
                    m2 /= static_cast<double>(gsz);
                    const double is = istd->at({n0, g});
                    for (std::int64_t i = 0; i < gsz; ++i) {
                        const int c = static_cast<int>(g * cg + i / spatial);
                        double dxh = n.grad[base + i] * gamma[c];
                        gx[base + i] = is * (dxh - m1 - xhat[base + i] * m2);
                    }
                }
            accum(n.inputs[0], gx);
        }
    });
}

namespace {

// im2col: x[Cin,H,W] -> cols[Cin*kh*kw, Ho*Wo]
void im2col(const double* x, int Cin, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, double* cols) {
    for (int c = 0; c < Cin; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                double* row = cols + ((static_cast<std::int64_t>(c) * kh + ki) * kw + kj) *
                                         (static_cast<std::int64_t>(Ho) * Wo);
                for (int oi = 0; oi < Ho; ++oi) {
                    const int ii = oi * stride + ki - pad;
                    for (int oj = 0; oj < Wo; ++oj) {
                        const int jj = oj * stride + kj - pad;
                        row[oi * Wo + oj] =
                            (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                ? x[(static_cast<std::int64_t>(c) * H + ii) * W + jj]
                                : 0.0;
                    }
                }
            }
}

void col2im_accum(const double* cols, int Cin, int H, int W, int kh, int kw, int stride,
                  int pad, int Ho, int Wo, double* x) {
    for (int c = 0; c < Cin; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const double* row = cols + ((static_cast<std::int64_t>(c) * kh + ki) * kw + kj) *
                                               (static_cast<std::int64_t>(Ho) * Wo);
                for (int oi = 0; oi < Ho; ++oi) {
                    const int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= H) continue;
                    for (int oj = 0; oj < Wo; ++oj) {
                        const int jj = oj * stride + kj - pad;
                        if (jj < 0 || jj >= W) continue;
                        x[(static_cast<std::int64_t>(c) * H + ii) * W + jj] += row[oi * Wo + oj];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw std::invalid_argument("conv2d: bad shapes " + x->value.shape_str() + " * " + w->value.shape_str());
    const int N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const int Cout = ws[0], kh = ws[2], kw = ws[3];
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    const int K = Cin * kh * kw;
    const std::int64_t P = static_cast<std::int64_t>(Ho) * Wo;
    Tensor out({N, Cout, Ho, Wo});
    Tensor cols({N, K, Ho * Wo});
    CMapM Wm(w->value.data(), Cout, K);
    for (int n0 = 0; n0 < N; ++n0) {
        double* col = cols.data() + static_cast<std::int64_t>(n0) * K * P;
        im2col(x->value.data() + static_cast<std::int64_t>(n0) * Cin * H * W, Cin, H, W, kh,
               kw, stride, pad, Ho, Wo, col);
        CMapM C(col, K, static_cast<int>(P));
        MapM O(out.data() + static_cast<std::int64_t>(n0) * Cout * P, Cout, static_cast<int>(P));
        O.noalias() = Wm * C;
    }
    auto cols_keep = std::make_shared<Tensor>(std::move(cols));
    Var y = make(std::move(out), {x, w},
                 [N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, P, cols_keep](Node& n) {
        for (int n0 = 0; n0 < N; ++n0) {
            CMapM G(n.grad.data() + static_cast<std::int64_t>(n0) * Cout * P, Cout, static_cast<int>(P));
            const double* col = cols_keep->data() + static_cast<std::int64_t>(n0) * K * P;
            if (n.inputs[1]->requires_grad) {
                ensure_grad(*n.inputs[1]);
                CMapM C(col, K, static_cast<int>(P));
                MapM GW(n.inputs[1]->grad.data(), Cout, K);
                GW.noalias() += G * C.transpose();
            }
            if (n.inputs[0]->requires_grad) {
                ensure_grad(*n.inputs[0]);
                CMapM Wm(n.inputs[1]->value.data(), Cout, K);
                Tensor gcol({K, static_cast<int>(P)});
                MapM GC(gcol.data(), K, static_cast<int>(P));
                GC.noalias() = Wm.transpose() * G;
                col2im_accum(gcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                             n.inputs[0]->grad.data() + static_cast<std::int64_t>(n0) * Cin * H * W);
            }
        }
    });
    if (b) y = add_channel_bias(y, b);
    return y;
}

Var upsample_nearest2(const Var& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("upsample_nearest2: expect NCHW");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor out({N, C, 2 * H, 2 * W});
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = x->value.data() + static_cast<std::int64_t>(nc) * H * W;
        double* dst = out.data() + static_cast<std::int64_t>(nc) * 4 * H * W;
        for (int i = 0; i < 2 * H; ++i)
            for (int j = 0; j < 2 * W; ++j) dst[i * 2 * W + j] = src[(i / 2) * W + j / 2];
    }
    return make(std::move(out), {x}, [N, C, H, W](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor g(n.inputs[0]->value.shape());
        for (int nc = 0; nc < N * C; ++nc) {
            const double* src = n.grad.data() + static_cast<std::int64_t>(nc) * 4 * H * W;
            double* dst = g.data() + static_cast<std::int64_t>(nc) * H * W;
            for (int i = 0; i < 2 * H; ++i)
                for (int j = 0; j < 2 * W; ++j) dst[(i / 2) * W + j / 2] += src[i * 2 * W + j];
        }
        accum(n.inputs[0], g);
    });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
    const int V = table->value.dim(0), d = table->value.dim(1);
    Tensor out({static_cast<int>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || ids[r] >= V) throw std::out_of_range("embedding: id out of range");
        std::copy_n(table->value.data() + static_cast<std::int64_t>(ids[r]) * d, d,
                    out.data() + static_cast<std::int64_t>(r) * d);
    }
    auto ids_keep = std::make_shared<std::vector<int>>(ids);
    return make(std::move(out), {table}, [d, ids_keep](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        ensure_grad(*n.inputs[0]);
        for (size_t r = 0; r < ids_keep->size(); ++r) {
            double* dst = n.inputs[0]->grad.data() + static_cast<std::int64_t>((*ids_keep)[r]) * d;
            const double* src = n.grad.data() + static_cast<std::int64_t>(r) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Var dropout(const Var& x, double p, bool training, Rng& rng) {
    if (!training || p <= 0.0) return x;
    Tensor mask(x->value.shape());
    const double keep = 1.0 - p;
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = (rng.uniform() < p) ? 0.0 : 1.0 / keep;
    return mul(x, constant(std::move(mask)));
}

}  // namespace veggie::nn
