// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "veggie/rng.hpp"
#include "veggie/tensor.hpp"

namespace veggie::nn {

struct Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the dynamically built compute graph.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backfn;  // scatters this->grad into inputs' grads

    const Tensor& v() const { return value; }
    Tensor& g() { return grad; }
};

Var leaf(Tensor v, bool requires_grad = false);
Var constant(Tensor v);

/// Reverse pass from a scalar (or any) root; seeds root grad with ones.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var silu(const Var& a);
Var square(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var concat(const std::vector<Var>& xs, int dim);
Var slice(const Var& a, int dim, int start, int len);
/// Swap two axes (general strided permute of exactly two dims).
Var transpose(const Var& a, int d0, int d1);

// ---- reductions / loss ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var mse(const Var& a, const Var& b);

// ---- linear algebra ----
/// a:[m,k] x b:[k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);
/// a:[B,m,k] x b:[B,k,n] -> [B,m,n]
Var bmm(const Var& a, const Var& b);
/// x:[...,din] * W:[din,dout] + b:[dout]
Var linear(const Var& x, const Var& W, const Var& b);
/// Broadcast-add b:[d] over the last axis of x:[...,d]
Var add_bias(const Var& x, const Var& b);
/// Broadcast-add b:[C] over axis 1 of x:[N,C,...]
Var add_channel_bias(const Var& x, const Var& b);

// ---- nonlinearity over last dim ----
Var softmax_lastdim(const Var& a);

// ---- normalization ----
/// x:[N,d] or [...,d]; gamma,beta:[d]
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// x:[N,C,H,W]; gamma,beta:[C]
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta,
               double eps = 1e-5);

// ---- conv / resampling (NCHW) ----
/// w:[Cout,Cin,kh,kw], b:[Cout]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0);
Var upsample_nearest2(const Var& x);

// ---- misc ----
/// table:[V,d], ids: row indices -> [len(ids), d]
Var embedding(const Var& table, const std::vector<int>& ids);
/// Inverted dropout; identity when !training.
Var dropout(const Var& x, double p, bool training, Rng& rng);

/// Number of distinct nodes reachable from root (diagnostics).
std::size_t graph_size(const Var& root);

}  // namespace veggie::nn
