#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "testutil.hpp"
#include "vaells/common.hpp"
#include "vaells/mlp.hpp"

using namespace vaells;

namespace {

MlpSpec small_spec() {
    return {{3, 4, 2},
            {Activation::relu, Activation::identity}};
}

// Flattened view of all parameters for finite differencing.
std::vector<double*> param_ptrs(MlpParams& p) {
    std::vector<double*> ptrs;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        for (std::size_t i = 0; i < p.weights[l].count(); ++i)
            ptrs.push_back(p.weights[l].data() + i);
        for (std::size_t i = 0; i < p.biases[l].size(); ++i)
            ptrs.push_back(p.biases[l].data() + i);
    }
    return ptrs;
}

std::vector<double> grad_flat(const MlpGrads& g) {
    std::vector<double> out;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        for (std::size_t i = 0; i < g.weights[l].count(); ++i)
            out.push_back(g.weights[l].data()[i]);
        for (std::size_t i = 0; i < g.biases[l].size(); ++i)
            out.push_back(g.biases[l][i]);
    }
    return out;
}

}  // namespace

TEST_CASE("init_mlp shapes, determinism, bounds") {
    MlpSpec spec{{20, 512, 2}, {Activation::relu, Activation::identity}};
    Rng rng(1);
    MlpParams p = init_mlp(spec, rng);
    REQUIRE(p.weights.size() == 2);
    CHECK(p.weights[0].rows() == 512);
    CHECK(p.weights[0].cols() == 20);
    CHECK(p.weights[1].rows() == 2);
    CHECK(p.weights[1].cols() == 512);
    CHECK(p.biases[0].size() == 512);
    CHECK(p.biases[1].size() == 2);

    for (const Vec& b : p.biases)
        for (double x : b) CHECK(x == 0.0);

    const double bound0 = std::sqrt(6.0 / (20.0 + 512.0));
    for (std::size_t i = 0; i < p.weights[0].count(); ++i)
        CHECK(std::abs(p.weights[0].data()[i]) <= bound0);

    Rng rng2(1);
    MlpParams q = init_mlp(spec, rng2);
    for (std::size_t i = 0; i < p.weights[0].count(); ++i)
        CHECK(p.weights[0].data()[i] == q.weights[0].data()[i]);

    CHECK(param_count(p) == 20 * 512 + 512 + 512 * 2 + 2);

    MlpSpec bad{{3, 2}, {Activation::relu}};
    CHECK_THROWS_AS(init_mlp(bad, rng), config_error);
}

TEST_CASE("mlp_forward linear layer and relu behavior") {
    MlpSpec spec{{2, 2}, {Activation::identity}};
    Rng rng(3);
    MlpParams p = init_mlp(spec, rng);
    p.weights[0](0, 0) = 1.0; p.weights[0](0, 1) = 2.0;
    p.weights[0](1, 0) = -3.0; p.weights[0](1, 1) = 0.5;
    p.biases[0][0] = 0.25;
    p.biases[0][1] = -1.0;
    auto [y, cache] = mlp_forward(p, Vec{2.0, -1.0});
    CHECK(y[0] == 2.0 - 2.0 + 0.25);
    CHECK(y[1] == -6.0 - 0.5 - 1.0);
    CHECK(cache.pre[0][0] == y[0]);

    MlpSpec rspec{{2, 2, 2}, {Activation::relu, Activation::identity}};
    MlpParams rp = init_mlp(rspec, rng);
    for (Mat& w : rp.weights)
        for (std::size_t i = 0; i < w.count(); ++i) w.data()[i] = 1.0;
    rp.biases[0][0] = -100.0;  // force both hidden pre-activations negative
    rp.biases[0][1] = -100.0;
    auto [ry, rcache] = mlp_forward(rp, Vec{1.0, 1.0});
    CHECK(rcache.post[0][0] == 0.0);
    CHECK(rcache.post[0][1] == 0.0);
    CHECK(ry[0] == 0.0);

    for (Mat& w : rp.weights)
        for (std::size_t i = 0; i < w.count(); ++i) w.data()[i] = 0.0;
    for (Vec& b : rp.biases)
        for (double& x : b) x = 0.0;
    auto [zy, zcache] = mlp_forward(rp, Vec{5.0, -3.0});
    (void)zcache;
    CHECK(zy[0] == 0.0);
    CHECK(zy[1] == 0.0);

    CHECK_THROWS_AS(mlp_forward(p, Vec{1.0}), dim_error);
}

TEST_CASE("mlp_forward deterministic") {
    Rng rng(9);
    MlpParams p = init_mlp(small_spec(), rng);
    Vec x{0.3, -0.7, 1.1};
    auto [y1, c1] = mlp_forward(p, x);
    auto [y2, c2] = mlp_forward(p, x);
    (void)c1; (void)c2;
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("mlp_backward closed forms") {
    MlpSpec spec{{3, 2}, {Activation::identity}};
    Rng rng(5);
    MlpParams p = init_mlp(spec, rng);
    Vec x{1.0, -2.0, 0.5};
    auto [y, cache] = mlp_forward(p, x);
    (void)y;

    MlpGrads zero = mlp_backward(p, cache, Vec{0.0, 0.0});
    CHECK(frobenius_norm(zero.weights[0]) == 0.0);
    CHECK(norm2(zero.input) == 0.0);

    Vec og{0.7, -0.3};
    MlpGrads g = mlp_backward(p, cache, og);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(g.weights[0](i, j) == og[i] * x[j]);
    for (std::size_t i = 0; i < 2; ++i) CHECK(g.biases[0][i] == og[i]);

    CHECK_THROWS_AS(mlp_backward(p, cache, Vec{1.0}), dim_error);
}

TEST_CASE("mlp_backward matches finite differences on a 3-layer net") {
    MlpSpec spec{{3, 4, 3, 2},
                 {Activation::relu, Activation::sigmoid, Activation::identity}};
    Rng rng(17);
    MlpParams p = init_mlp(spec, rng);
    Vec x{0.4, -0.9, 1.3};
    Vec og{0.8, -0.6};  // gradient of the probe scalar og . y

    auto [y0, cache] = mlp_forward(p, x);
    (void)y0;
    MlpGrads g = mlp_backward(p, cache, og);
    std::vector<double> flat = grad_flat(g);
    std::vector<double*> ptrs = param_ptrs(p);
    REQUIRE(flat.size() == ptrs.size());

    auto probe = [&]() {
        auto [y, c] = mlp_forward(p, x);
        (void)c;
        return og[0] * y[0] + og[1] * y[1];
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const double saved = *ptrs[i];
        *ptrs[i] = saved + h;
        const double fp = probe();
        *ptrs[i] = saved - h;
        const double fm = probe();
        *ptrs[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        CHECK(std::abs(flat[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
    }

    // Input gradient through the same probe.
    for (std::size_t i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        auto [yp, cp] = mlp_forward(p, xp);
        auto [ym, cm] = mlp_forward(p, xm);
        (void)cp; (void)cm;
        const double fd = (og[0] * (yp[0] - ym[0]) + og[1] * (yp[1] - ym[1])) / (2.0 * h);
        CHECK(std::abs(g.input[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
    }
}

TEST_CASE("adam_step behavior") {
    Rng rng(23);
    MlpParams p = init_mlp(small_spec(), rng);
    MlpParams before = p;
    AdamState st = make_adam_state(param_count(p));

    MlpGrads zero = make_grads_like(p);
    adam_step(p, zero, st, 0.1);
    CHECK(st.step == 1);
    for (std::size_t i = 0; i < p.weights[0].count(); ++i)
        CHECK(p.weights[0].data()[i] == before.weights[0].data()[i]);

    // Constant gradient: first update magnitude is ~lr per entry.
    std::vector<double> param{1.0, -2.0};
    std::vector<double> grad{0.37, -250.0};
    AdamState flat = make_adam_state(2);
    adam_step(std::span<double>(param), std::span<const double>(grad), flat, 0.01);
    CHECK(std::abs(param[0] - (1.0 - 0.01)) < 1e-6);
    CHECK(std::abs(param[1] - (-2.0 + 0.01)) < 1e-6);

    // lr = 0 leaves parameters alone but moments move.
    AdamState lr0 = make_adam_state(2);
    std::vector<double> param2{0.5, 0.5};
    adam_step(std::span<double>(param2), std::span<const double>(grad), lr0, 0.0);
    CHECK(param2[0] == 0.5);
    CHECK(lr0.m[0] != 0.0);
    CHECK(lr0.step == 1);

    // beta1 = beta2 = 0 reduces to lr * g / (|g| + eps).
    AdamState sgd = make_adam_state(2, 0.0, 0.0);
    std::vector<double> param3{1.0, 1.0};
    adam_step(std::span<double>(param3), std::span<const double>(grad), sgd, 0.2);
    for (std::size_t i = 0; i < 2; ++i) {
        const double want = 1.0 - 0.2 * grad[i] / (std::abs(grad[i]) + sgd.epsilon);
        CHECK(param3[i] == Catch::Approx(want).epsilon(1e-12));
    }

    AdamState wrong = make_adam_state(3);
    std::vector<double> param4{1.0, 1.0};
    CHECK_THROWS_AS(
        adam_step(std::span<double>(param4), std::span<const double>(grad), wrong, 0.1),
        dim_error);
}
