#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bix/tensor.hpp"

using namespace bix;

TEST_CASE("relu maps negatives and zero to zero") {
    Tensor x = Tensor::from_values({3}, {-1, 0, 2});
    Tensor y = relu(x);
    CHECK(y.values() == std::vector<real>{0, 0, 2});
}

TEST_CASE("add with zeros is the identity") {
    Tensor x = Tensor::from_values({2, 2}, {1.5, -2, 0.25, 9});
    Tensor y = add(x, Tensor::zeros({2, 2}));
    CHECK(y.values() == x.values());
}

TEST_CASE("add rejects mismatched shapes") {
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("mean_reduce value and gradient") {
    Tensor x = Tensor::from_values({3}, {2, 4, 6}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = mean_reduce(x);
    CHECK(y.item() == doctest::Approx(4.0));
    tape.backward(y);
    for (real g : x.grad()) CHECK(g == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("apply_elementwise dispatches by kind") {
    Tensor a = Tensor::from_values({2}, {1, 2});
    Tensor b = Tensor::from_values({2}, {3, 5});
    CHECK(apply_elementwise(Elementwise::sub, {b, a}).values() ==
          std::vector<real>{2, 3});
    CHECK(apply_elementwise(Elementwise::mul, {a, b}).values() ==
          std::vector<real>{3, 10});
    CHECK(apply_elementwise(Elementwise::scale, {a}, 2.5).values() ==
          std::vector<real>{2.5, 5});
    CHECK_THROWS_AS(apply_elementwise(Elementwise::add, {a}), ContractError);
}

TEST_CASE("matmul identity and hand-computed product") {
    Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from_values({2, 3}, {4, 5, 6, 7, 8, 9});
    CHECK(matmul(eye, b).values() == b.values());

    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor ones = Tensor::from_values({2, 1}, {1, 1});
    CHECK(matmul(a, ones).values() == std::vector<real>{3, 7});

    CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(42);
    std::vector<real> av(9), bv(9);
    for (real& v : av) v = rng.uniform(-1, 1);
    for (real& v : bv) v = rng.uniform(-1, 1);
    Tensor b = Tensor::from_values({3, 3}, bv);

    real err_a = grad_check(
        [&](const Tensor& a) { return mean_reduce(matmul(a, b)); },
        Tensor::from_values({3, 3}, av), 1e-5);
    CHECK(err_a < 1e-6);

    Tensor a = Tensor::from_values({3, 3}, av);
    real err_b = grad_check(
        [&](const Tensor& t) { return mean_reduce(matmul(a, t)); },
        Tensor::from_values({3, 3}, bv), 1e-5);
    CHECK(err_b < 1e-6);
}

TEST_CASE("weight reuse accumulates gradients from every site") {
    Tensor w = Tensor::from_values({2, 2}, {0.5, -1, 2, 0.25}, true);
    Tensor x1 = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor x2 = Tensor::from_values({2, 2}, {-1, 0.5, 2, -3});

    Tape tape;
    std::vector<real> both, site1, site2;
    {
        TapeScope scope(tape);
        Tensor loss = mean_reduce(add(mul(w, x1), mul(w, x2)));
        tape.backward(loss);
        both = w.grad();
    }
    tape.clear();
    w.zero_grad();
    {
        TapeScope scope(tape);
        tape.backward(mean_reduce(mul(w, x1)));
        site1 = w.grad();
    }
    tape.clear();
    w.zero_grad();
    {
        TapeScope scope(tape);
        tape.backward(mean_reduce(mul(w, x2)));
        site2 = w.grad();
    }
    for (size_t i = 0; i < both.size(); ++i) {
        CHECK(both[i] == doctest::Approx(site1[i] + site2[i]).epsilon(1e-12));
    }
}

TEST_CASE("gradient of an unused parameter is zero") {
    Tensor w = Tensor::from_values({2}, {1, 2}, true);
    Tensor x = Tensor::from_values({2}, {3, 4}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(mean_reduce(mul(x, x)));
    CHECK(w.grad() == std::vector<real>{0, 0});
    CHECK(x.grad()[0] != 0);
}

TEST_CASE("backward twice doubles leaf gradients exactly") {
    Tensor w = Tensor::from_values({3}, {1, -2, 0.5}, true);
    Tensor x = Tensor::from_values({3}, {2, 3, 4});
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = mean_reduce(mul(mul(w, w), x));
    tape.backward(loss);
    std::vector<real> once = w.grad();
    tape.backward(loss);
    for (size_t i = 0; i < once.size(); ++i) {
        CHECK(w.grad()[i] == 2 * once[i]);
    }
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
    Tape tape;
    Tensor x = Tensor::from_values({2}, {1, 2}, true);
    {
        TapeScope scope(tape);
        Tensor y = mul(x, x);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
    Tensor stray = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(stray), ContractError);
}

TEST_CASE("gumbel softmax: dominant logit wins with noise suppressed") {
    Tensor logits = Tensor::from_values({3, 1}, {10, 0, 0});
    GumbelRng rng(Rng(1), false);
    Tensor y = gumbel_softmax(logits, 0.1, false, rng);
    CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(y.values()[1] == doctest::Approx(0.0));
    CHECK(y.values()[2] == doctest::Approx(0.0));
}

TEST_CASE("gumbel softmax hard mode emits exact one-hot columns") {
    Tensor logits = Tensor::zeros({5, 3});
    GumbelRng rng(Rng(7), true);
    Tensor y = gumbel_softmax(logits, 1.0, true, rng);
    for (int j = 0; j < 3; ++j) {
        int ones = 0;
        for (int i = 0; i < 5; ++i) {
            real v = y.values()[i * 3 + j];
            CHECK((v == 0 || v == 1));
            if (v == 1) ++ones;
        }
        CHECK(ones == 1);
    }
}

TEST_CASE("gumbel softmax soft columns are probability vectors") {
    Rng base(99);
    GumbelRng rng(Rng(3), true);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<real> lv(12);
        for (real& v : lv) v = base.uniform(-3, 3);
        Tensor y = gumbel_softmax(Tensor::from_values({4, 3}, lv), 0.7, false, rng);
        for (int j = 0; j < 3; ++j) {
            real sum = 0;
            for (int i = 0; i < 4; ++i) {
                real v = y.values()[i * 3 + j];
                CHECK(v >= 0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("gumbel softmax rejects non-positive temperature") {
    GumbelRng rng(Rng(1), true);
    Tensor logits = Tensor::zeros({3, 1});
    CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, false, rng), DomainError);
}

// Monte-Carlo check of the Gumbel-max property: with uniform logits the
// argmax of each sampled column is uniform over the N streams.
TEST_CASE("gumbel softmax empirical frequencies are uniform") {
    const int n = 5, samples = 10000;
    Tensor logits = Tensor::zeros({n, 1});
    GumbelRng rng(Rng(2024), true);
    std::vector<int> counts(n, 0);
    for (int s = 0; s < samples; ++s) {
        Tensor y = gumbel_softmax(logits, 1.0, true, rng);
        for (int i = 0; i < n; ++i) {
            if (y.values()[i] == 1) ++counts[i];
        }
    }
    const double p = 1.0 / n;
    const double se = std::sqrt(p * (1 - p) / samples);
    for (int i = 0; i < n; ++i) {
        const double freq = static_cast<double>(counts[i]) / samples;
        CHECK(std::abs(freq - p) <= 3 * se);
    }
}

TEST_CASE("gumbel softmax straight-through gradient reaches the logits") {
    Tensor logits = Tensor::from_values({4, 2}, {0.3, -0.2, 0.9, 0.1, -0.4, 0.6, 0.05, -0.7},
                                        true);
    GumbelRng rng(Rng(11), false);  // noise off so the sample is reproducible
    Tape tape;
    TapeScope scope(tape);
    Tensor y = gumbel_softmax(logits, 0.8, true, rng);
    tape.backward(mean_reduce(y));
    real total = 0;
    for (real g : logits.grad()) total += std::abs(g);
    CHECK(total > 0);
}

TEST_CASE("grad_check reference errors") {
    Rng rng(5);
    std::vector<real> xv(6);
    for (real& v : xv) v = rng.uniform(-2, 2);
    Tensor x = Tensor::from_values({6}, xv);

    real e1 = grad_check([](const Tensor& t) { return mean_reduce(mul(t, t)); }, x, 1e-5);
    CHECK(e1 < 1e-8);

    // keep inputs away from the relu kink
    std::vector<real> far(6);
    for (real& v : far) v = rng.uniform(0.5, 2.0) * (rng.uniform() < 0.5 ? -1 : 1);
    real e2 = grad_check([](const Tensor& t) { return mean_reduce(relu(t)); },
                         Tensor::from_values({6}, far), 1e-5);
    CHECK(e2 < 1e-6);

    real e3 = grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, x, 1e-5);
    CHECK(e3 == 0.0);
}

TEST_CASE("identical seeds give bit-identical results") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        std::vector<real> xv(16), wv(16);
        for (real& v : xv) v = rng.uniform(-1, 1);
        for (real& v : wv) v = rng.uniform(-1, 1);
        Tensor x = Tensor::from_values({4, 4}, xv);
        Tensor w = Tensor::from_values({4, 4}, wv, true);
        GumbelRng grng(Rng(seed + 1), true);
        Tape tape;
        TapeScope scope(tape);
        Tensor y = matmul(relu(w), x);
        Tensor sel = gumbel_softmax(Tensor::from_values({4, 4}, xv, false), 0.9, false, grng);
        Tensor loss = mean_reduce(add(y, sel));
        tape.backward(loss);
        std::vector<real> out = y.values();
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        out.push_back(loss.item());
        return out;
    };
    CHECK(run(31337) == run(31337));
}
