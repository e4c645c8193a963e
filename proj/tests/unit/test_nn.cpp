#include "illuminorm/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <memory>

using namespace illuminorm::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& rng) {
    Tensor t(n, c, h, w);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (float& v : t.data) v = u(rng);
    return t;
}

// L = sum(y * r) for a fixed random r, so dL/dy = r.
double weighted_sum(const Tensor& y, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.data[i]) * r.data[i];
    return s;
}

void check_layer_gradients(Layer& layer, const Tensor& x, std::mt19937_64& rng) {
    LayerCache cache;
    const Tensor y = layer.forward(x, &cache);
    const Tensor r = random_tensor(y.n, y.c, y.h, y.w, rng);
    std::vector<std::vector<float>> grads;
    for (const auto& p : layer.parameters()) grads.emplace_back(p.value.size(), 0.0f);
    const Tensor dx = layer.backward(r, cache, grads);
    REQUIRE(dx.same_shape(x));

    const float h = 1e-2f;
    auto loss_at = [&](const Tensor& input) { return weighted_sum(layer.forward(input, nullptr), r); };
    for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 25)) {
        Tensor plus = x, minus = x;
        plus.data[i] += h;
        minus.data[i] -= h;
        const double numeric = (loss_at(plus) - loss_at(minus)) / (2 * h);
        CHECK(dx.data[i] == doctest::Approx(numeric).epsilon(2e-2).scale(1e-2));
    }
    auto params = layer.parameters();
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].value.size(); i += std::max<std::size_t>(1, params[p].value.size() / 15)) {
            const float saved = params[p].value[i];
            params[p].value[i] = saved + h;
            const double up = loss_at(x);
            params[p].value[i] = saved - h;
            const double down = loss_at(x);
            params[p].value[i] = saved;
            CHECK(grads[p][i] == doctest::Approx((up - down) / (2 * h)).epsilon(2e-2).scale(1e-2));
        }
}

}  // namespace

TEST_CASE("layer gradients match finite differences") {
    std::mt19937_64 rng(3);
    SUBCASE("conv3x3") {
        Conv3x3 conv("c", 2, 3, 1.0, rng);
        check_layer_gradients(conv, random_tensor(2, 2, 5, 6, rng), rng);
    }
    SUBCASE("linear") {
        Linear lin("l", 7, 4, 1.0, rng);
        check_layer_gradients(lin, random_tensor(3, 7, 1, 1, rng), rng);
    }
    SUBCASE("sigmoid") {
        Sigmoid s;
        check_layer_gradients(s, random_tensor(2, 2, 3, 3, rng), rng);
    }
    SUBCASE("upsample") {
        Upsample2 u;
        check_layer_gradients(u, random_tensor(2, 2, 3, 3, rng), rng);
    }
    SUBCASE("reshape") {
        Reshape r(2, 2, 3);
        check_layer_gradients(r, random_tensor(2, 12, 1, 1, rng), rng);
    }
}

TEST_CASE("relu and max pooling route gradients to the active inputs") {
    Tensor x(1, 1, 2, 4);
    x.data = {1, -2, 3, 3, -1, 0.5f, 3, 2};
    Relu relu;
    LayerCache cache;
    const Tensor y = relu.forward(x, &cache);
    CHECK(y.data == std::vector<float>{1, 0, 3, 3, 0, 0.5f, 3, 2});
    Tensor ones(1, 1, 2, 4, 1.0f);
    std::vector<std::vector<float>> none;
    CHECK(relu.backward(ones, cache, none).data == std::vector<float>{1, 0, 1, 1, 0, 1, 1, 1});

    MaxPool2 pool;
    LayerCache pc;
    const Tensor p = pool.forward(x, &pc);
    CHECK(p.w == 2);
    CHECK(p.data == std::vector<float>{1, 3});
    Tensor dy(1, 1, 1, 2);
    dy.data = {5, 7};
    // The first maximum in raster order takes the whole gradient.
    CHECK(pool.backward(dy, pc, none).data == std::vector<float>{5, 0, 7, 0, 0, 0, 0, 0});
}

TEST_CASE("sequential backward equals composed finite differences and Adam decreases a loss") {
    std::mt19937_64 rng(8);
    Sequential net;
    net.add(std::make_unique<Conv3x3>("a", 1, 4, 1.0, rng));
    net.add(std::make_unique<Relu>());
    net.add(std::make_unique<MaxPool2>());
    net.add(std::make_unique<Reshape>(16, 1, 1));
    net.add(std::make_unique<Linear>("b", 16, 2, 1.0, rng));
    CHECK(net.parameter_count() == 4);
    const Tensor x = random_tensor(4, 1, 4, 4, rng);
    Tensor target(4, 2, 1, 1);
    for (std::size_t i = 0; i < target.size(); ++i) target.data[i] = (i % 3) * 0.5f;

    auto loss = [&](Tensor* dy, Gradients* grads) {
        Sequential::Cache cache;
        const Tensor y = net.forward(x, grads ? &cache : nullptr);
        double l = 0.0;
        Tensor d(y.n, y.c, y.h, y.w);
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double e = y.data[i] - target.data[i];
            l += e * e;
            d.data[i] = static_cast<float>(2 * e);
        }
        if (grads) net.backward(d, cache, *grads);
        if (dy) *dy = d;
        return l;
    };
    Adam adam(0.01);
    const double initial = loss(nullptr, nullptr);
    for (int step = 0; step < 200; ++step) {
        Gradients g = zero_gradients(std::as_const(net).parameters());
        loss(nullptr, &g);
        adam.step(net.parameters(), g);
    }
    CHECK(adam.steps() == 200);
    CHECK(loss(nullptr, nullptr) < 0.2 * initial);
}

TEST_CASE("adam first step moves every parameter by about lr against the gradient sign") {
    Parameter p{"p", {3}, {1.0f, -1.0f, 0.5f}};
    Adam adam(0.1);
    adam.step({&p}, {{2.0f, -3.0f, 0.0f}});
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-4));
    CHECK(p.value[1] == doctest::Approx(-0.9).epsilon(1e-4));
    CHECK(p.value[2] == doctest::Approx(0.5));
}
