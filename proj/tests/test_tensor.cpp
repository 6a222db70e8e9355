#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fbn/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace fbn;

TEST_CASE("gaussian_init rejects bad arguments") {
    RngState rng(1);
    CHECK_THROWS_AS(gaussian_init({2, 2}, 0.0, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_init({}, 0.0, 1.0, rng), std::invalid_argument);
}

TEST_CASE("gaussian_init is deterministic in the seed") {
    RngState a(42), b(42), c(43);
    Tensor t1 = gaussian_init({2, 2}, 0.0, 1.0, a);
    Tensor t2 = gaussian_init({2, 2}, 0.0, 1.0, b);
    Tensor t3 = gaussian_init({2, 2}, 0.0, 1.0, c);
    CHECK(t1.data == t2.data);
    bool any_diff = false;
    for (size_t i = 0; i < t1.data.size(); ++i) any_diff |= (t1.data[i] != t3.data[i]);
    CHECK(any_diff);
}

TEST_CASE("gaussian_init sample moments match N(0,1)") {
    RngState rng(7);
    Tensor t = gaussian_init({100000}, 0.0, 1.0, rng);
    double mean = 0.0;
    for (double v : t.data) mean += v;
    mean /= static_cast<double>(t.data.size());
    double var = 0.0;
    for (double v : t.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.data.size());
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("matmul basics") {
    RngState rng(3);
    auto a = make_tensor(gaussian_init({3, 3}, 0.0, 1.0, rng));
    Tensor id = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) id.data[static_cast<size_t>(i * 3 + i)] = 1.0;
    auto out = matmul(nullptr, a, make_tensor(id));
    for (size_t i = 0; i < 9; ++i) CHECK(out->data[i] == doctest::Approx(a->data[i]));

    auto m = make_tensor(Tensor({2, 2}, {1, 2, 3, 4}));
    auto v = make_tensor(Tensor({2, 1}, {1, 1}));
    auto mv = matmul(nullptr, m, v);
    CHECK(mv->data[0] == doctest::Approx(3.0));
    CHECK(mv->data[1] == doctest::Approx(7.0));

    auto bad = make_tensor(Tensor::zeros({3, 2}));
    CHECK_THROWS_AS(matmul(nullptr, m, bad), std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences") {
    RngState rng(11);
    auto a = make_tensor(gaussian_init({4, 5}, 0.0, 1.0, rng), true);
    auto b = make_tensor(gaussian_init({5, 3}, 0.0, 1.0, rng), true);

    auto value = [&]() {
        auto out = matmul(nullptr, a, b);
        double s = 0.0;
        for (double v : out->data) s += v;
        return s;
    };
    auto grads = [&]() {
        Tape tape;
        auto out = matmul(&tape, a, b);
        std::vector<double> seed(out->data.size(), 1.0);
        tape.backward(out, seed);
    };
    TensorPtr inputs[] = {a, b};
    CHECK(fbn::test::max_rel_grad_err(value, grads, inputs) < 1e-6);
}

TEST_CASE("conv2d identity 1x1 kernel is a no-op") {
    RngState rng(5);
    auto x = make_tensor(gaussian_init({2, 3, 4, 4}, 0.0, 1.0, rng));
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int i = 0; i < 3; ++i) w.data[static_cast<size_t>(i * 3 + i)] = 1.0;
    auto out = conv2d(nullptr, x, make_tensor(w));
    REQUIRE(out->shape == x->shape);
    for (size_t i = 0; i < x->data.size(); ++i)
        CHECK(out->data[i] == doctest::Approx(x->data[i]));
}

TEST_CASE("conv2d zero kernel gives zeros, bad kernel size throws") {
    RngState rng(6);
    auto x = make_tensor(gaussian_init({1, 2, 5, 5}, 0.0, 1.0, rng));
    auto w = make_tensor(Tensor::zeros({4, 2, 3, 3}));
    auto out = conv2d(nullptr, x, w);
    for (double v : out->data) CHECK(v == 0.0);

    auto w2 = make_tensor(Tensor::zeros({4, 2, 2, 2}));
    CHECK_THROWS_AS(conv2d(nullptr, x, w2), std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
    RngState rng(13);
    struct Case {
        int64_t N, C, H, W, F, k;
        int stride;
    };
    const Case cases[] = {{2, 3, 5, 4, 2, 3, 1}, {1, 2, 4, 4, 3, 1, 1}, {2, 2, 6, 6, 2, 3, 2}};
    for (const auto& cs : cases) {
        CAPTURE(cs.k);
        CAPTURE(cs.stride);
        auto x = make_tensor(gaussian_init({cs.N, cs.C, cs.H, cs.W}, 0.0, 1.0, rng), true);
        auto w = make_tensor(gaussian_init({cs.F, cs.C, cs.k, cs.k}, 0.0, 0.5, rng), true);
        auto value = [&]() {
            auto out = conv2d(nullptr, x, w, cs.stride);
            double s = 0.0;
            for (size_t i = 0; i < out->data.size(); ++i)
                s += out->data[i] * (0.1 * static_cast<double>(i % 7) - 0.3);
            return s;
        };
        auto grads = [&]() {
            Tape tape;
            auto out = conv2d(&tape, x, w, cs.stride);
            std::vector<double> seed(out->data.size());
            for (size_t i = 0; i < seed.size(); ++i)
                seed[i] = 0.1 * static_cast<double>(i % 7) - 0.3;
            tape.backward(out, seed);
        };
        TensorPtr inputs[] = {x, w};
        CHECK(fbn::test::max_rel_grad_err(value, grads, inputs) < 1e-4);
    }
}

TEST_CASE("avg_pool3x3 interior of a constant image stays constant") {
    auto x = make_tensor(Tensor::full({1, 1, 5, 5}, 2.5));
    auto out = avg_pool3x3(nullptr, x);
    // interior positions see all 9 taps
    for (int y = 1; y <= 3; ++y)
        for (int xx = 1; xx <= 3; ++xx)
            CHECK(out->data[static_cast<size_t>(y * 5 + xx)] == doctest::Approx(2.5));
    // corner sees 4 taps but still divides by 9
    CHECK(out->data[0] == doctest::Approx(2.5 * 4.0 / 9.0));
}

TEST_CASE("avg_pool3x3 single center spike") {
    Tensor x = Tensor::zeros({1, 1, 3, 3});
    x.data[4] = 1.0;
    auto out = avg_pool3x3(nullptr, make_tensor(x));
    CHECK(out->data[4] == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("avg_pool3x3 gradient matches finite differences") {
    RngState rng(17);
    auto x = make_tensor(gaussian_init({2, 2, 4, 5}, 0.0, 1.0, rng), true);
    auto value = [&]() {
        auto out = avg_pool3x3(nullptr, x);
        double s = 0.0;
        for (size_t i = 0; i < out->data.size(); ++i)
            s += out->data[i] * (0.1 + 0.05 * static_cast<double>(i % 5));
        return s;
    };
    auto grads = [&]() {
        Tape tape;
        auto out = avg_pool3x3(&tape, x);
        std::vector<double> seed(out->data.size());
        for (size_t i = 0; i < seed.size(); ++i)
            seed[i] = 0.1 + 0.05 * static_cast<double>(i % 5);
        tape.backward(out, seed);
    };
    TensorPtr inputs[] = {x};
    CHECK(fbn::test::max_rel_grad_err(value, grads, inputs) < 1e-6);
}

TEST_CASE("relu and cross entropy basics") {
    auto x = make_tensor(Tensor({2}, {-1.0, 2.0}));
    auto out = relu(nullptr, x);
    CHECK(out->data[0] == 0.0);
    CHECK(out->data[1] == 2.0);

    auto logits = make_tensor(Tensor::zeros({1, 4}));
    int label = 2;
    auto loss = softmax_cross_entropy(nullptr, logits, std::span<const int>(&label, 1));
    CHECK(loss->data[0] == doctest::Approx(std::log(4.0)));

    int bad = 4;
    CHECK_THROWS_AS(softmax_cross_entropy(nullptr, logits, std::span<const int>(&bad, 1)),
                    std::invalid_argument);
}

TEST_CASE("two-layer network end-to-end gradient check") {
    RngState rng(23);
    auto x = make_tensor(gaussian_init({4, 6}, 0.0, 1.0, rng));
    auto w1 = make_tensor(gaussian_init({6, 5}, 0.0, 0.5, rng), true);
    auto b1 = make_tensor(gaussian_init({5}, 0.0, 0.1, rng), true);
    auto w2 = make_tensor(gaussian_init({5, 3}, 0.0, 0.5, rng), true);
    auto b2 = make_tensor(gaussian_init({3}, 0.0, 0.1, rng), true);
    std::vector<int> labels = {0, 2, 1, 2};

    auto build = [&](Tape* tape) {
        auto h = relu(tape, linear_layer(tape, x, w1, b1));
        auto logits = linear_layer(tape, h, w2, b2);
        return softmax_cross_entropy(tape, logits, labels);
    };
    auto value = [&]() { return build(nullptr)->data[0]; };
    auto grads = [&]() {
        Tape tape;
        tape.backward(build(&tape));
    };
    TensorPtr inputs[] = {w1, b1, w2, b2};
    CHECK(fbn::test::max_rel_grad_err(value, grads, inputs) < 1e-4);
}

TEST_CASE("elementwise and reduction ops match finite differences") {
    RngState rng(29);
    auto a = make_tensor(gaussian_init({3, 4}, 0.0, 1.0, rng), true);
    auto b = make_tensor(gaussian_init({3, 4}, 0.0, 1.0, rng), true);
    auto g = make_tensor(Tensor({4}, {0.9, -0.6, 1.3, 0.4}), true);
    auto be = make_tensor(Tensor({4}, {0.2, -0.1, 0.5, -0.8}), true);
    auto img = make_tensor(gaussian_init({2, 3, 3, 3}, 0.0, 1.0, rng), true);

    auto weighted_sum = [](const TensorPtr& t) {
        double s = 0.0;
        for (size_t i = 0; i < t->data.size(); ++i)
            s += t->data[i] * (0.1 + 0.05 * static_cast<double>(i % 11));
        return s;
    };
    auto seed_for = [](const TensorPtr& t) {
        std::vector<double> seed(t->data.size());
        for (size_t i = 0; i < seed.size(); ++i)
            seed[i] = 0.1 + 0.05 * static_cast<double>(i % 11);
        return seed;
    };

    SUBCASE("add+relu+scale") {
        auto value = [&]() { return weighted_sum(add(nullptr, relu(nullptr, a), scale(nullptr, b, -0.7))); };
        auto grads = [&]() {
            Tape tape;
            auto out = add(&tape, relu(&tape, a), scale(&tape, b, -0.7));
            tape.backward(out, seed_for(out));
        };
        TensorPtr inputs[] = {a, b};
        CHECK(fbn::test::max_rel_grad_err(value, grads, inputs) < 1e-6);
    }
    SUBCASE("channel_affine") {
        auto value = [&]() { return weighted_sum(channel_affine(nullptr, a, g, be)); };
        auto grads = [&]() {
            Tape tape;
            auto out = channel_affine(&tape, a, g, be);
            tape.backward(out, seed_for(out));
        };
        TensorPtr inputs[] = {a, g, be};
        CHECK(fbn::test::max_rel_grad_err(value, grads, inputs) < 1e-6);
    }
    SUBCASE("global_avg_pool and flatten") {
        auto value = [&]() { return weighted_sum(global_avg_pool(nullptr, img)); };
        auto grads = [&]() {
            Tape tape;
            auto out = global_avg_pool(&tape, img);
            tape.backward(out, seed_for(out));
        };
        TensorPtr inputs[] = {img};
        CHECK(fbn::test::max_rel_grad_err(value, grads, inputs) < 1e-6);

        auto value2 = [&]() { return weighted_sum(flatten(nullptr, img)); };
        auto grads2 = [&]() {
            Tape tape;
            auto out = flatten(&tape, img);
            tape.backward(out, seed_for(out));
        };
        CHECK(fbn::test::max_rel_grad_err(value2, grads2, inputs) < 1e-6);
    }
}

TEST_CASE("sgd step without momentum") {
    Parameter p(Tensor({1}, {1.0}), true, "p");
    p.tensor->ensure_grad();
    p.tensor->grad[0] = 2.0;
    Sgd opt(0.1, 0.0);
    Parameter params[] = {p};
    opt.step(params);
    CHECK(params[0].tensor->data[0] == doctest::Approx(0.8));
    CHECK(params[0].tensor->grad[0] == 0.0);
}

TEST_CASE("sgd leaves frozen parameters untouched") {
    Parameter p(Tensor({2}, {1.0, -1.0}), false, "frozen");
    p.tensor->grad = {5.0, 5.0}; // even with a stale grad buffer
    p.tensor->requires_grad = false;
    Sgd opt(0.5, 0.9);
    Parameter params[] = {p};
    for (int i = 0; i < 10; ++i) opt.step(params);
    CHECK(params[0].tensor->data[0] == 1.0);
    CHECK(params[0].tensor->data[1] == -1.0);
}

TEST_CASE("sgd momentum follows the velocity recursion") {
    // v1 = g = 2, p = 1 - 0.1*2 = 0.8
    // v2 = 0.9*2 + 2 = 3.8, p = 0.8 - 0.38 = 0.42
    Parameter p(Tensor({1}, {1.0}), true, "p");
    Sgd opt(0.1, 0.9);
    Parameter params[] = {p};
    for (int step = 0; step < 2; ++step) {
        params[0].tensor->ensure_grad();
        params[0].tensor->grad[0] = 2.0;
        opt.step(params);
    }
    CHECK(params[0].tensor->data[0] == doctest::Approx(0.42));
}

TEST_CASE("sgd requires gradients on trainable parameters") {
    Parameter p(Tensor({1}, {1.0}), true, "p");
    Sgd opt(0.1, 0.0);
    Parameter params[] = {p};
    CHECK_THROWS_AS(opt.step(params), std::runtime_error);
}

TEST_CASE("op pipeline is bit-deterministic for a fixed seed") {
    auto run = [](uint64_t seed) {
        RngState rng(seed);
        auto x = make_tensor(gaussian_init({2, 3, 4, 4}, 0.0, 1.0, rng), true);
        auto w = make_tensor(gaussian_init({3, 3, 3, 3}, 0.0, 0.5, rng), true);
        Tape tape;
        auto out = global_avg_pool(&tape, relu(&tape, conv2d(&tape, x, w)));
        std::vector<double> seedv(out->data.size(), 1.0);
        tape.backward(out, seedv);
        std::vector<double> all = out->data;
        all.insert(all.end(), x->grad.begin(), x->grad.end());
        all.insert(all.end(), w->grad.begin(), w->grad.end());
        return all;
    };
    CHECK(run(99) == run(99));
}

TEST_CASE("finite inputs produce finite outputs and gradients") {
    RngState rng(31);
    auto x = make_tensor(gaussian_init({3, 2, 5, 5}, 0.0, 3.0, rng), true);
    auto w = make_tensor(gaussian_init({2, 2, 3, 3}, 0.0, 2.0, rng), true);
    Tape tape;
    auto h = avg_pool3x3(&tape, relu(&tape, conv2d(&tape, x, w)));
    auto pooled = global_avg_pool(&tape, h);
    std::vector<int> labels = {0, 1, 0};
    auto w2 = make_tensor(gaussian_init({2, 2}, 0.0, 1.0, rng), true);
    auto logits = matmul(&tape, pooled, w2);
    auto loss = softmax_cross_entropy(&tape, logits, labels);
    tape.backward(loss);
    loss->check_finite("loss");
    CHECK(x->all_finite());
    Tensor xg;
    xg.shape = x->shape;
    xg.data = x->grad;
    CHECK(xg.all_finite());
}
