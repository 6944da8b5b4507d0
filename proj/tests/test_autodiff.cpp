// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gradcheck.hpp"
#include "veggie/autodiff.hpp"

using namespace veggie;
using namespace veggie::nn;

namespace {

Var randleaf(Rng& rng, std::vector<int> shape) {
    return leaf(rng.normal_tensor(std::move(shape)), true);
}

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
    Rng rng(1);
    auto a = randleaf(rng, {3, 4});
    auto b = randleaf(rng, {3, 4});
    auto build = [&] { return mean_all(mul(silu(a), add(square(b), scale(a, 0.5)))); };
    CHECK(testutil::gradcheck(build, {a, b}, rng, 12) < 1e-6);
}

TEST_CASE("matmul and linear gradients") {
    Rng rng(2);
    auto x = randleaf(rng, {5, 3});
    auto W = randleaf(rng, {3, 4});
    auto b = randleaf(rng, {4});
    auto build = [&] { return mean_all(square(linear(x, W, b))); };
    CHECK(testutil::gradcheck(build, {x, W, b}, rng, 12) < 1e-6);
}

TEST_CASE("bmm gradients") {
    Rng rng(3);
    auto a = randleaf(rng, {2, 3, 4});
    auto b = randleaf(rng, {2, 4, 5});
    auto build = [&] { return mean_all(square(bmm(a, b))); };
    CHECK(testutil::gradcheck(build, {a, b}, rng, 12) < 1e-6);
}

TEST_CASE("softmax gradient") {
    Rng rng(4);
    auto x = randleaf(rng, {4, 6});
    auto t = leaf(rng.normal_tensor({4, 6}), false);
    auto build = [&] { return mse(softmax_lastdim(x), t); };
    CHECK(testutil::gradcheck(build, {x}, rng, 12) < 1e-6);
}

TEST_CASE("layer_norm gradient") {
    Rng rng(5);
    auto x = randleaf(rng, {3, 8});
    auto g = randleaf(rng, {8});
    auto b = randleaf(rng, {8});
    auto t = leaf(rng.normal_tensor({3, 8}), false);
    auto build = [&] { return mse(layer_norm(x, g, b), t); };
    CHECK(testutil::gradcheck(build, {x, g, b}, rng, 12, 1e-6) < 1e-5);
}

TEST_CASE("group_norm gradient") {
    Rng rng(6);
    auto x = randleaf(rng, {2, 4, 3, 3});
    auto g = randleaf(rng, {4});
    auto b = randleaf(rng, {4});
    auto t = leaf(rng.normal_tensor({2, 4, 3, 3}), false);
    auto build = [&] { return mse(group_norm(x, 2, g, b), t); };
    CHECK(testutil::gradcheck(build, {x, g, b}, rng, 12, 1e-6) < 1e-5);
}

TEST_CASE("conv2d gradient with stride and padding") {
    Rng rng(7);
    auto x = randleaf(rng, {2, 3, 6, 6});
    auto w = randleaf(rng, {4, 3, 3, 3});
    auto b = randleaf(rng, {4});
    auto t = leaf(rng.normal_tensor({2, 4, 3, 3}), false);
    auto build = [&] { return mse(conv2d(x, w, b, 2, 1), t); };
    CHECK(testutil::gradcheck(build, {x, w, b}, rng, 16) < 1e-6);
}

TEST_CASE("upsample, concat, slice, transpose gradients") {
    Rng rng(8);
    auto x = randleaf(rng, {1, 2, 3, 3});
    auto y = randleaf(rng, {1, 2, 6, 6});
    auto build = [&] {
        auto up = upsample_nearest2(x);
        auto c = concat({up, y}, 1);
        auto s = slice(c, 1, 1, 2);
        auto tr = transpose(s, 2, 3);
        return mean_all(square(tr));
    };
    CHECK(testutil::gradcheck(build, {x, y}, rng, 12) < 1e-6);
}

TEST_CASE("embedding gradient") {
    Rng rng(9);
    auto table = randleaf(rng, {7, 4});
    std::vector<int> ids{1, 3, 3, 0};
    auto t = leaf(rng.normal_tensor({4, 4}), false);
    auto build = [&] { return mse(embedding(table, ids), t); };
    CHECK(testutil::gradcheck(build, {table}, rng, 16) < 1e-6);
}

TEST_CASE("add_channel_bias and add_bias gradients") {
    Rng rng(10);
    auto x = randleaf(rng, {2, 3, 2, 2});
    auto cb = randleaf(rng, {3});
    auto y = randleaf(rng, {4, 5});
    auto lb = randleaf(rng, {5});
    auto build = [&] {
        return add(mean_all(square(add_channel_bias(x, cb))),
                   mean_all(square(add_bias(y, lb))));
    };
    CHECK(testutil::gradcheck(build, {x, cb, y, lb}, rng, 10) < 1e-6);
}

TEST_CASE("gradient accumulates over shared subexpressions") {
    Rng rng(11);
    auto x = randleaf(rng, {3, 3});
    auto build = [&] {
        auto s = silu(x);
        return mean_all(add(mul(s, s), scale(s, 2.0)));
    };
    CHECK(testutil::gradcheck(build, {x}, rng, 9) < 1e-6);
}

TEST_CASE("transpose round-trips values") {
    Rng rng(12);
    Tensor t = rng.normal_tensor({2, 3, 4});
    auto x = leaf(t, false);
    auto back = transpose(transpose(x, 0, 2), 0, 2);
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(back->value[i] == t[i]);
}

TEST_CASE("counter rng is stream independent") {
    Rng a(42, 0), b(42, 0);
    b.fork(7);  // forking does not disturb the parent
    for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(42).fork(1), d = Rng(42).fork(2);
    CHECK(c.next_u64() != d.next_u64());
}
