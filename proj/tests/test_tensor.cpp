#include <doctest.h>

#include <cmath>

#include "dmvt/tensor.hpp"
#include "gradcheck.hpp"

using namespace dmvt;
using testutil::gradcheck;
using testutil::random_tensor;

TEST_SUITE_BEGIN("tensor_core");

TEST_CASE("matmul identity and projector rows") {
    Tensor I = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor A = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(I, A);
    CHECK(out.data() == std::vector<double>{1, 2, 3, 4});

    Tensor P = Tensor::from_data({2, 2}, {1, 0, 0, 0});
    Tensor B = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor proj = matmul(P, B);
    CHECK(proj.data() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError &e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(41);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto res = gradcheck([](const std::vector<Tensor> &in) {
        return sum_all(matmul(in[0], in[1]));
    }, {a, b});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
}

TEST_CASE("matmul broadcasts batch extents") {
    Rng rng(42);
    Tensor a = random_tensor({2, 3, 2, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);  // broadcast over both batch axes
    Tensor out = matmul(a, b);
    CHECK(out.shape() == Shape{2, 3, 2, 5});
    // one batch element must equal its standalone product
    Tensor a0 = Tensor::from_data({2, 4}, std::vector<double>(a.data().begin() + 8,
                                                              a.data().begin() + 16));
    Tensor ref = matmul(a0, b);
    for (int i = 0; i < 10; ++i)
        CHECK(out.data()[10 + static_cast<size_t>(i)] == doctest::Approx(ref.data()[static_cast<size_t>(i)]).epsilon(1e-12));

    auto res = gradcheck([](const std::vector<Tensor> &in) {
        return sum_all(matmul(in[0], in[1]));
    }, {a, b});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
}

TEST_CASE("softmax symmetric and stabilized") {
    Tensor x = Tensor::from_data({2}, {0, 0});
    Tensor s = softmax_lastaxis(x);
    CHECK(s.data()[0] == doctest::Approx(0.5));
    CHECK(s.data()[1] == doctest::Approx(0.5));

    Tensor big = Tensor::from_data({2}, {1000, 0});
    Tensor sb = softmax_lastaxis(big);
    CHECK(std::isfinite(sb.data()[0]));
    CHECK(sb.data()[0] == doctest::Approx(1.0));
    CHECK(sb.data()[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax rows are probability vectors") {
    Rng rng(7);
    Tensor x = random_tensor({4, 6}, rng, -50.0, 50.0);
    Tensor s = softmax_lastaxis(x);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int c = 0; c < 6; ++c) {
            double v = s.data()[static_cast<size_t>(r * 6 + c)];
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("softmax rejects NaN input") {
    Tensor x = Tensor::from_data({2}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(softmax_lastaxis(x), NumericError);
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(43);
    Tensor x = random_tensor({2, 5}, rng);
    Tensor probe = random_tensor({2, 5}, rng);
    probe.set_requires_grad(false);
    auto res = gradcheck([probe](const std::vector<Tensor> &in) {
        return sum_all(mul(softmax_lastaxis(in[0]), probe));
    }, {x});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
}

TEST_CASE("log_softmax matches log of softmax and backprops") {
    Rng rng(44);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor ls = log_softmax_lastaxis(x);
    Tensor s = softmax_lastaxis(x);
    for (size_t i = 0; i < ls.data().size(); ++i)
        CHECK(ls.data()[i] == doctest::Approx(std::log(s.data()[i])).epsilon(1e-10));
    Tensor probe = random_tensor({3, 4}, rng);
    auto res = gradcheck([probe](const std::vector<Tensor> &in) {
        return sum_all(mul(log_softmax_lastaxis(in[0]), probe));
    }, {x});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
}

TEST_CASE("layer_norm constant slice collapses to bias") {
    Tensor x = Tensor::from_data({3}, {5, 5, 5});
    Tensor gain = Tensor::full({3}, 1.0);
    Tensor bias = Tensor::zeros({3});
    Tensor y = layer_norm(x, gain, bias, 1e-5);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.0));

    Tensor b2 = Tensor::from_data({3}, {1, 2, 3});
    Tensor y2 = layer_norm(x, gain, b2, 1e-5);
    CHECK(y2.data()[0] == doctest::Approx(1.0));
    CHECK(y2.data()[1] == doctest::Approx(2.0));
    CHECK(y2.data()[2] == doctest::Approx(3.0));
}

TEST_CASE("layer_norm output has mean zero and unit variance") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3});
    Tensor gain = Tensor::full({3}, 1.0);
    Tensor bias = Tensor::zeros({3});
    Tensor y = layer_norm(x, gain, bias, 1e-8);
    double mu = 0, var = 0;
    for (double v : y.data()) mu += v;
    mu /= 3;
    for (double v : y.data()) var += (v - mu) * (v - mu);
    var /= 3;
    CHECK(std::abs(mu) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
}

TEST_CASE("layer_norm gradient vs finite differences") {
    Rng rng(45);
    Tensor x = random_tensor({2, 4}, rng);
    Tensor gain = random_tensor({4}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({4}, rng, -0.5, 0.5);
    Tensor probe = random_tensor({2, 4}, rng);
    auto res = gradcheck([probe](const std::vector<Tensor> &in) {
        return sum_all(mul(layer_norm(in[0], in[1], in[2], 1e-5), probe));
    }, {x, gain, bias});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
}

TEST_CASE("gelu fixed points and asymptotes") {
    Tensor x = Tensor::from_data({3}, {0.0, 10.0, -10.0});
    Tensor y = gelu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(std::abs(y.data()[1] - 10.0) < 1e-6);
    CHECK(std::abs(y.data()[2]) < 1e-6);
}

TEST_CASE("gelu gradient vs finite differences") {
    Rng rng(46);
    Tensor x = random_tensor({3, 3}, rng);
    auto res = gradcheck([](const std::vector<Tensor> &in) {
        return sum_all(gelu(in[0]));
    }, {x});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
}

TEST_CASE("masked_scale identity, zero, and contract checks") {
    Rng rng(47);
    Tensor x = random_tensor({2, 2}, rng);
    Tensor ones = Tensor::full({2, 2}, 1.0);
    CHECK(masked_scale(x, ones).data() == x.data());

    Tensor zero_mask = Tensor::zeros({2, 2});
    x.set_requires_grad(true);
    Tensor y = masked_scale(x, zero_mask);
    for (double v : y.data()) CHECK(v == 0.0);
    backward(sum_all(y));
    for (double g : *x.grad()) CHECK(g == 0.0);

    Tensor bad = Tensor::full({2, 2}, 0.5);
    CHECK_THROWS_AS(masked_scale(x, bad), ContractError);

    Tensor grad_mask = Tensor::full({2, 2}, 1.0);
    grad_mask.set_requires_grad(true);
    CHECK_THROWS_AS(masked_scale(x, grad_mask), ContractError);
}

TEST_CASE("masked_scale checkerboard gradient") {
    Rng rng(48);
    Tensor x = random_tensor({2, 2}, rng);
    Tensor mask = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto res = gradcheck([mask](const std::vector<Tensor> &in) {
        return sum_all(masked_scale(in[0], mask));
    }, {x});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
    // surviving entries get unit gradient, masked entries exactly zero
    Tensor w = x.detach().set_requires_grad(true);
    backward(sum_all(masked_scale(w, mask)));
    CHECK((*w.grad())[0] == 1.0);
    CHECK((*w.grad())[1] == 0.0);
    CHECK((*w.grad())[2] == 0.0);
    CHECK((*w.grad())[3] == 1.0);
}

TEST_CASE("backward on simple reductions") {
    Tensor w = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad(true);
    backward(sum_all(w));
    CHECK(*w.grad() == std::vector<double>{1, 1, 1});

    Tensor v = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    backward(sum_all(mul(v, v)));
    CHECK(*v.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward accumulates until zeroed") {
    Tensor w = Tensor::from_data({2}, {1, 1}).set_requires_grad(true);
    backward(sum_all(w));
    backward(sum_all(w));
    CHECK(*w.grad() == std::vector<double>{2, 2});
    w.zero_grad();
    backward(sum_all(w));
    CHECK(*w.grad() == std::vector<double>{1, 1});
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor w = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tensor y = mul(w, w);
    CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("diamond-shaped graph accumulates both paths") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
    Tensor a = scale(w, 2.0);
    Tensor b = scale(w, 3.0);
    backward(sum_all(add(a, b)));  // d/dw = 2 + 3
    CHECK(*w.grad() == std::vector<double>{5, 5});
}

TEST_CASE("add and mul broadcast with reduced gradients") {
    Rng rng(49);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    auto res = gradcheck([](const std::vector<Tensor> &in) {
        return sum_all(mul(add(in[0], in[1]), in[1]));
    }, {a, b});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);

    Tensor c = random_tensor({2, 1}, rng);
    Tensor d = random_tensor({1, 4}, rng);
    CHECK(mul(c, d).shape() == Shape{2, 4});
}

TEST_CASE("incompatible broadcast raises shape error") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4});
    CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("shape ops roundtrip values and gradients") {
    Rng rng(50);
    Tensor x = random_tensor({2, 3, 4}, rng);

    Tensor r = reshape(x, {6, 4});
    CHECK(r.data() == x.data());
    CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);

    Tensor p = permute(x, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    // spot-check a coordinate: p[i,j,k] == x[j,k,i]
    CHECK(p.data()[static_cast<size_t>(1 * 6 + 1 * 3 + 2)] ==
          x.data()[static_cast<size_t>(1 * 12 + 2 * 4 + 1)]);

    Tensor t = transpose_last2(x);
    CHECK(t.shape() == Shape{2, 4, 3});

    Tensor s = slice(x, 1, 1, 2);
    CHECK(s.shape() == Shape{2, 2, 4});
    CHECK(s.data()[0] == x.data()[4]);

    Tensor cat = concat({s, s}, 1);
    CHECK(cat.shape() == Shape{2, 4, 4});

    Tensor bc = broadcast_to(Tensor::from_data({1, 3}, {1, 2, 3}), {2, 3});
    CHECK(bc.data() == std::vector<double>{1, 2, 3, 1, 2, 3});

    Tensor probe = random_tensor({4, 2, 3}, rng);
    auto res = gradcheck([probe](const std::vector<Tensor> &in) {
        return sum_all(mul(permute(in[0], {2, 0, 1}), probe));
    }, {x});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);

    auto res2 = gradcheck([](const std::vector<Tensor> &in) {
        Tensor s1 = slice(in[0], 1, 0, 2);
        Tensor s2 = slice(in[0], 1, 1, 2);
        return sum_all(mul(concat({s1, s2}, 2), concat({s2, s1}, 2)));
    }, {x});
    CHECK_MESSAGE(res2.max_err <= 1e-4, res2.where);

    auto res3 = gradcheck([](const std::vector<Tensor> &in) {
        return sum_all(mul(broadcast_to(in[0], {4, 2, 3}), broadcast_to(in[0], {4, 2, 3})));
    }, {random_tensor({2, 3}, rng)});
    CHECK_MESSAGE(res3.max_err <= 1e-4, res3.where);
}

TEST_CASE("mean_axis reduces one axis") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor m0 = mean_axis(x, 0);
    CHECK(m0.shape() == Shape{3});
    CHECK(m0.data() == std::vector<double>{2.5, 3.5, 4.5});
    Tensor m1 = mean_axis(x, 1);
    CHECK(m1.data() == std::vector<double>{2, 5});

    Rng rng(51);
    Tensor y = random_tensor({3, 4}, rng);
    Tensor probe = random_tensor({4}, rng);
    auto res = gradcheck([probe](const std::vector<Tensor> &in) {
        return sum_all(mul(mean_axis(in[0], 0), probe));
    }, {y});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
}

TEST_CASE("take_lastaxis picks and scatters") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad(true);
    Tensor picked = take_lastaxis(x, {2, 0});
    CHECK(picked.data() == std::vector<double>{3, 4});
    backward(sum_all(picked));
    CHECK(*x.grad() == std::vector<double>{0, 0, 1, 1, 0, 0});
    CHECK_THROWS_AS(take_lastaxis(x, {3, 0}), ContractError);
}

TEST_CASE("cross entropy matches hand computation") {
    Tensor logits = Tensor::from_data({1, 2}, {0, 0});
    Tensor loss = cross_entropy_mean(logits, {0});
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // weighted: weights [2, 1], batch labels {0, 1}
    Tensor lg = Tensor::from_data({2, 2}, {1, -1, 0.5, 2});
    Tensor unweighted = cross_entropy_mean(lg, {0, 1});
    double l0 = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)));
    double l1 = -std::log(std::exp(2.0) / (std::exp(0.5) + std::exp(2.0)));
    CHECK(unweighted.item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-12));
    Tensor weighted = cross_entropy_mean(lg, {0, 1}, {2.0, 1.0});
    CHECK(weighted.item() == doctest::Approx((2 * l0 + 1 * l1) / 3.0).epsilon(1e-12));

    Rng rng(52);
    Tensor rl = random_tensor({4, 3}, rng);
    auto res = gradcheck([](const std::vector<Tensor> &in) {
        return cross_entropy_mean(in[0], {0, 2, 1, 2});
    }, {rl});
    CHECK_MESSAGE(res.max_err <= 1e-4, res.where);
    auto resw = gradcheck([](const std::vector<Tensor> &in) {
        return cross_entropy_mean(in[0], {0, 2, 1, 2}, {1.0, 2.0, 0.5});
    }, {rl});
    CHECK_MESSAGE(resw.max_err <= 1e-4, resw.where);
}

TEST_CASE("no-grad guard suppresses recording and detach cuts the graph") {
    Tensor w = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    {
        NoGradGuard ng;
        Tensor y = mul(w, w);
        CHECK_FALSE(y.requires_grad());
    }
    Tensor d = mul(w, w).detach();
    CHECK_FALSE(d.requires_grad());
    Tensor z = sum_all(mul(d, w));
    backward(z);
    CHECK((*w.grad())[0] == 1.0);  // only the direct w factor contributes
    CHECK((*w.grad())[1] == 4.0);
}

TEST_CASE("ops leave their inputs untouched") {
    Rng rng(53);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    auto da = a.data();
    auto db = b.data();
    matmul(a, b);
    add(a, b);
    mul(a, b);
    softmax_lastaxis(a);
    gelu(a);
    transpose_last2(a);
    CHECK(a.data() == da);
    CHECK(b.data() == db);
}

TEST_CASE("identical inputs give bit-identical outputs") {
    Rng r1(99), r2(99);
    Tensor a1 = random_tensor({4, 4}, r1), a2 = random_tensor({4, 4}, r2);
    CHECK(a1.data() == a2.data());
    Tensor y1 = softmax_lastaxis(matmul(a1, a1));
    Tensor y2 = softmax_lastaxis(matmul(a2, a2));
    CHECK(y1.data() == y2.data());
}

TEST_CASE("f32 compute mode rounds op results through float") {
    Tensor a = Tensor::from_data({1}, {0.1});
    Tensor b = Tensor::from_data({1}, {0.2});
    set_compute_precision(Precision::f32);
    double got = add(a, b).item();
    set_compute_precision(Precision::f64);
    double expect = static_cast<double>(static_cast<float>(0.1 + 0.2));
    CHECK(got == expect);
    CHECK(got != 0.1 + 0.2);
    CHECK(add(a, b).item() == 0.1 + 0.2);  // back in f64 mode
}

TEST_SUITE_END();
