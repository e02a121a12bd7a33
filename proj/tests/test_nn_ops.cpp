#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bix/nn_ops.hpp"
#include "bix/tensor.hpp"

using namespace bix;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, real lo = -1, real hi = 1) {
    std::vector<real> v(static_cast<size_t>(shape_numel(shape)));
    for (real& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_values(std::move(shape), std::move(v));
}

real dot(const std::vector<real>& a, const std::vector<real>& b) {
    real acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

TEST_CASE("conv2d with a centered delta kernel is the identity") {
    Rng rng(0);
    ConvParams p = make_conv_params(1, 1, 3, 3, 1, 1, rng);
    std::fill(p.weight.values().begin(), p.weight.values().end(), 0.0);
    p.weight.values()[4] = 1.0;  // center tap
    Tensor x = Tensor::from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor y = conv2d(x, p);
    CHECK(y.values() == x.values());
}

TEST_CASE("conv2d all-ones kernel sums the 3x3 neighborhood") {
    Rng rng(0);
    ConvParams p = make_conv_params(1, 1, 3, 3, 1, 1, rng);
    std::fill(p.weight.values().begin(), p.weight.values().end(), 1.0);
    p.bias.values()[0] = 0.5;
    Tensor x = Tensor::full({1, 1, 5, 5}, 1.0);
    Tensor y = conv2d(x, p);
    // interior pixel sees the full window
    CHECK(y.values()[2 * 5 + 2] == doctest::Approx(9.0 + 0.5));
    // corner pixel sees a 2x2 patch through the zero padding
    CHECK(y.values()[0] == doctest::Approx(4.0 + 0.5));
}

TEST_CASE("conv2d error paths") {
    Rng rng(0);
    ConvParams p = make_conv_params(2, 3, 3, 3, 1, 1, rng);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), p), ShapeError);
    ConvParams strided = make_conv_params(1, 1, 3, 3, 2, 0, rng);
    // (4 + 0 - 3) % 2 != 0 -> non-integral output extent
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 4, 4}), strided), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(7);
    ConvParams p = make_conv_params(2, 3, 3, 3, 1, 1, rng);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);

    real ex = grad_check(
        [&](const Tensor& t) { return mean_reduce(conv2d(t, p)); }, x, 1e-5);
    CHECK(ex < 1e-4);

    real ew = grad_check(
        [&](const Tensor& w) {
            ConvParams q = p;
            q.weight = w;
            return mean_reduce(conv2d(x, q));
        },
        p.weight, 1e-5);
    CHECK(ew < 1e-4);

    real eb = grad_check(
        [&](const Tensor& b) {
            ConvParams q = p;
            q.bias = b;
            return mean_reduce(conv2d(x, q));
        },
        p.bias, 1e-5);
    CHECK(eb < 1e-4);
}

TEST_CASE("max_pool2d basics") {
    Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(max_pool2d(x).values() == std::vector<real>{4});
    CHECK_THROWS_AS(max_pool2d(Tensor::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("max_pool2d ties route gradient to the first window index") {
    Tensor x = Tensor::full({1, 1, 4, 4}, 2.5, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = max_pool2d(x);
    for (real v : y.values()) CHECK(v == 2.5);
    tape.backward(mean_reduce(y));
    const auto& g = x.grad();
    for (int oi = 0; oi < 2; ++oi) {
        for (int oj = 0; oj < 2; ++oj) {
            CHECK(g[(oi * 2) * 4 + oj * 2] == doctest::Approx(0.25));
            CHECK(g[(oi * 2) * 4 + oj * 2 + 1] == 0);
            CHECK(g[(oi * 2 + 1) * 4 + oj * 2] == 0);
        }
    }
}

TEST_CASE("max_pool2d equals brute-force window max on random input") {
    Rng rng(13);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = max_pool2d(x);
    for (int b = 0; b < 2; ++b) {
        for (int c = 0; c < 3; ++c) {
            for (int oi = 0; oi < 2; ++oi) {
                for (int oj = 0; oj < 2; ++oj) {
                    real m = -1e30;
                    for (int di = 0; di < 2; ++di) {
                        for (int dj = 0; dj < 2; ++dj) {
                            m = std::max(m, x.values()[((b * 3 + c) * 4 + oi * 2 + di) * 4 +
                                                       oj * 2 + dj]);
                        }
                    }
                    CHECK(y.values()[((b * 3 + c) * 2 + oi) * 2 + oj] == m);
                }
            }
        }
    }
}

// Build the explicit matrix of the matching stride-2 conv on a 2x2 -> 1x1 map
// and check conv_transpose2d against its transpose.
TEST_CASE("conv_transpose2d is the matrix transpose of the matching conv") {
    Rng rng(21);
    ConvParams p = make_conv_transpose_params(1, 1, 2, 2, rng);
    p.bias.values()[0] = 0;
    // matching conv: y[0] = sum_{di,dj} w[di,dj] * x[di,dj]; matrix A is 1x4
    std::vector<real> A = p.weight.values();

    Tensor probe = Tensor::from_values({1, 1, 1, 1}, {1.7});
    Tensor up = conv_transpose2d(probe, p);
    REQUIRE(up.shape() == Shape{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) {
        CHECK(up.values()[i] == doctest::Approx(A[i] * 1.7));  // A^T column
    }
}

TEST_CASE("conv_transpose2d of zero input broadcasts the bias") {
    Rng rng(3);
    ConvParams p = make_conv_transpose_params(3, 2, 2, 2, rng);
    p.bias.values() = {0.25, -1.5};
    Tensor y = conv_transpose2d(Tensor::zeros({1, 3, 2, 2}), p);
    REQUIRE(y.shape() == Shape{1, 2, 4, 4});
    for (int i = 0; i < 16; ++i) {
        CHECK(y.values()[i] == 0.25);
        CHECK(y.values()[16 + i] == -1.5);
    }
}

TEST_CASE("conv_transpose2d gradients match finite differences") {
    Rng rng(17);
    ConvParams p = make_conv_transpose_params(2, 3, 2, 2, rng);
    Tensor x = random_tensor({2, 2, 3, 3}, rng);
    real ex = grad_check(
        [&](const Tensor& t) { return mean_reduce(conv_transpose2d(t, p)); }, x, 1e-5);
    CHECK(ex < 1e-4);
    real ew = grad_check(
        [&](const Tensor& w) {
            ConvParams q = p;
            q.weight = w;
            return mean_reduce(conv_transpose2d(x, q));
        },
        p.weight, 1e-5);
    CHECK(ew < 1e-4);
}

TEST_CASE("bilinear_resize of a constant map is constant") {
    Tensor x = Tensor::full({1, 2, 3, 3}, 0.75);
    Tensor y = bilinear_resize(x, 7, 5);
    for (real v : y.values()) CHECK(v == doctest::Approx(0.75));
}

TEST_CASE("bilinear_resize is exact pass-through at equal size") {
    Rng rng(5);
    Tensor x = random_tensor({1, 1, 4, 6}, rng);
    Tensor y = bilinear_resize(x, 4, 6);
    CHECK(y.values() == x.values());
}

// Independent per-pixel oracle for align-corners-false interpolation.
TEST_CASE("bilinear_resize 2x2 -> 4x4 matches the direct formula") {
    Tensor x = Tensor::from_values({1, 1, 2, 2}, {0, 1, 1, 2});
    Tensor y = bilinear_resize(x, 4, 4);
    auto sample = [&](double sy, double sx) {
        auto tap = [](double s) {
            s = std::max(0.0, std::min(s, 1.0));
            int lo = static_cast<int>(std::floor(s));
            int hi = std::min(lo + 1, 1);
            return std::tuple<int, int, double>(lo, hi, s - lo);
        };
        auto [y0, y1, fy] = tap(sy);
        auto [x0, x1, fx] = tap(sx);
        const real* v = x.values().data();
        double top = v[y0 * 2 + x0] * (1 - fx) + v[y0 * 2 + x1] * fx;
        double bot = v[y1 * 2 + x0] * (1 - fx) + v[y1 * 2 + x1] * fx;
        return top * (1 - fy) + bot * fy;
    };
    for (int oy = 0; oy < 4; ++oy) {
        for (int ox = 0; ox < 4; ++ox) {
            double expect = sample((oy + 0.5) * 0.5 - 0.5, (ox + 0.5) * 0.5 - 0.5);
            CHECK(y.values()[oy * 4 + ox] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("linear ops satisfy the adjoint identity") {
    Rng rng(29);
    // bilinear resize
    {
        Tensor x = random_tensor({1, 2, 5, 4}, rng);
        x.set_requires_grad(true);
        Tensor yprobe = random_tensor({1, 2, 9, 7}, rng);
        Tape tape;
        TapeScope scope(tape);
        Tensor ax = bilinear_resize(x, 9, 7);
        Tensor ip = mean_reduce(mul(ax, yprobe));
        tape.backward(ip);
        real lhs = ip.item();  // <Ax, y> / N
        real rhs = dot(x.values(), x.grad());
        CHECK(std::abs(lhs - rhs) < 1e-8);
    }
    // conv transpose (bias zeroed so the map is purely linear)
    {
        ConvParams p = make_conv_transpose_params(2, 2, 2, 2, rng);
        std::fill(p.bias.values().begin(), p.bias.values().end(), 0.0);
        Tensor x = random_tensor({1, 2, 3, 3}, rng);
        x.set_requires_grad(true);
        Tensor yprobe = random_tensor({1, 2, 6, 6}, rng);
        Tape tape;
        TapeScope scope(tape);
        Tensor ip = mean_reduce(mul(conv_transpose2d(x, p), yprobe));
        tape.backward(ip);
        CHECK(std::abs(ip.item() - dot(x.values(), x.grad())) < 1e-8);
    }
}

TEST_CASE("batch_norm training output has mean beta and std gamma") {
    Rng rng(31);
    BatchNormState s = make_batch_norm(2);
    s.gamma.values() = {2.0, 0.5};
    s.beta.values() = {-1.0, 3.0};
    Tensor x = random_tensor({8, 2, 16, 16}, rng, -4, 4);
    Tensor y = batch_norm(x, s, true);
    const int64_t n = 8 * 16 * 16;
    for (int c = 0; c < 2; ++c) {
        real mean = 0, var = 0;
        for (int b = 0; b < 8; ++b) {
            for (int i = 0; i < 256; ++i) mean += y.values()[(b * 2 + c) * 256 + i];
        }
        mean /= n;
        for (int b = 0; b < 8; ++b) {
            for (int i = 0; i < 256; ++i) {
                real d = y.values()[(b * 2 + c) * 256 + i] - mean;
                var += d * d;
            }
        }
        var /= n;
        CHECK(mean == doctest::Approx(s.beta.values()[c]).epsilon(1e-6));
        CHECK(std::sqrt(var) ==
              doctest::Approx(s.gamma.values()[c]).epsilon(1e-3));
    }
}

TEST_CASE("batch_norm eval with unit running stats is near identity") {
    BatchNormState s = make_batch_norm(3);
    Rng rng(37);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = batch_norm(x, s, false);
    for (size_t i = 0; i < x.values().size(); ++i) {
        CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-5));
    }
    CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 2, 4, 4}), s, false), ShapeError);
}

TEST_CASE("batch_norm gradients match finite differences") {
    Rng rng(41);
    BatchNormState s = make_batch_norm(2);
    s.gamma.values() = {1.3, 0.7};
    s.beta.values() = {0.2, -0.4};
    Tensor x = random_tensor({3, 2, 3, 3}, rng);
    // fixed probe so d(mean(bn(x) * m))/dx is informative (mean(bn(x)) alone
    // is the constant beta)
    Tensor m = random_tensor({3, 2, 3, 3}, rng);

    auto run = [&](const Tensor& t, Tensor gamma, Tensor beta) {
        BatchNormState local;
        local.gamma = gamma;
        local.beta = beta;
        local.running_mean = s.running_mean;
        local.running_var = s.running_var;
        local.momentum = s.momentum;
        local.eps = s.eps;
        return mean_reduce(mul(batch_norm(t, local, true), m));
    };
    real ex = grad_check(
        [&](const Tensor& t) { return run(t, s.gamma, s.beta); }, x, 1e-5);
    CHECK(ex < 1e-4);
    real eg = grad_check(
        [&](const Tensor& g) { return run(x, g, s.beta); }, s.gamma, 1e-5);
    CHECK(eg < 1e-4);
    real eb = grad_check(
        [&](const Tensor& b) { return run(x, s.gamma, b); }, s.beta, 1e-5);
    CHECK(eb < 1e-4);
}

TEST_CASE("fuse average and concat") {
    Tensor a = Tensor::from_values({1, 1, 1, 2}, {1, 3});
    Tensor b = Tensor::from_values({1, 1, 1, 2}, {3, 5});
    CHECK(fuse({a, b}, FuseMode::average).values() == std::vector<real>{2, 4});

    Tensor same = Tensor::from_values({1, 2, 1, 1}, {0.5, -2});
    Tensor avg = fuse({same, same, same}, FuseMode::average);
    for (size_t i = 0; i < same.values().size(); ++i) {
        CHECK(avg.values()[i] == doctest::Approx(same.values()[i]));
    }

    Tensor c2 = Tensor::zeros({1, 2, 2, 2});
    Tensor c3 = Tensor::zeros({1, 3, 2, 2});
    CHECK(fuse({c2, c3}, FuseMode::concat).dim(1) == 5);

    CHECK_THROWS_AS(fuse({}, FuseMode::average), ContractError);
    CHECK_THROWS_AS(fuse({a, c2}, FuseMode::average), ShapeError);
    CHECK_THROWS_AS(fuse({c2, Tensor::zeros({1, 2, 3, 3})}, FuseMode::concat),
                    ShapeError);
}

TEST_CASE("cross entropy on uniform logits is ln K") {
    Tensor logits = Tensor::zeros({1, 2, 2, 2});
    std::vector<int32_t> target = {0, 1, 0, 1};
    Tensor loss = softmax_cross_entropy(logits, target);
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("cross entropy of confident correct logits approaches zero") {
    Tensor logits = Tensor::zeros({1, 2, 1, 2});
    logits.values() = {30, 0, 0, 30};  // class 0 at pixel 0, class 1 at pixel 1
    std::vector<int32_t> target = {0, 1};
    CHECK(softmax_cross_entropy(logits, target).item() < 1e-9);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int32_t>{0, 5}),
                    DomainError);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(43);
    Tensor logits = random_tensor({2, 3, 2, 2}, rng);
    std::vector<int32_t> target(8);
    for (auto& t : target) t = static_cast<int32_t>(rng.below(3));
    real e = grad_check(
        [&](const Tensor& t) { return softmax_cross_entropy(t, target); }, logits,
        1e-5);
    CHECK(e < 1e-4);
}

TEST_CASE("argmax_channel picks the largest logit per pixel") {
    // layout [K][pixel]: pixel 0 sees (0, 5, 2), pixel 1 sees (9, 1, 8)
    Tensor logits = Tensor::from_values({1, 3, 1, 2}, {0, 9, 5, 1, 2, 8});
    auto pred = argmax_channel(logits);
    CHECK(pred == std::vector<int32_t>{1, 0});
}
