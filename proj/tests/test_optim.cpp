#include "doctest.h"
#include "helpers.hpp"

#include "hynea/optim.hpp"

#include <cmath>

using namespace hynea;

TEST_SUITE("optim") {

TEST_CASE("first AdamW step moves each coordinate by lr * sign(g) after decay") {
    // With bias correction the first step is m_hat / sqrt(v_hat) = g / |g|.
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const double p0 = rng.normal(), g = rng.normal(), lr = rng.uniform(1e-4, 1e-1), wd = rng.uniform(0, 0.1);
        std::vector<double> p{p0};
        const std::vector<double> gv{g};
        AdamWMoments mom;
        adamw_update(p, gv, mom, AdamWConfig{0.9, 0.999, 0.0, wd}, 1, lr);
        const double expect = p0 * (1 - lr * wd) - lr * (g > 0 ? 1.0 : -1.0);
        CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("AdamW matches a scalar reference over many steps") {
    Rng rng(2);
    const AdamWConfig cfg{0.8, 0.95, 1e-8, 0.05};
    std::vector<double> p{0.3, -1.2, 2.0};
    std::vector<double> ref = p, m(3, 0.0), v(3, 0.0);
    AdamWMoments mom;
    for (std::size_t t = 1; t <= 30; ++t) {
        std::vector<double> g{rng.normal(), rng.normal(), rng.normal()};
        const double lr = 0.01 * (1.0 + 0.1 * double(t));
        adamw_update(p, g, mom, cfg, t, lr);
        for (std::size_t i = 0; i < 3; ++i) {
            ref[i] *= 1.0 - lr * cfg.weight_decay;
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(cfg.beta1, double(t)));
            const double vh = v[i] / (1 - std::pow(cfg.beta2, double(t)));
            ref[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("AdamW class skips frozen tensors and treats missing grads as zero") {
    Tensor a({2}, std::vector<double>{1.0, 1.0});
    a.set_requires_grad(true);
    Tensor b({1}, std::vector<double>{5.0});
    b.set_requires_grad(true);
    AdamW opt({a, b}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    {
        Tape tape;
        tape.backward(sum(a * a));
    }
    opt.step(0.1);
    CHECK(a[0] == doctest::Approx(0.9));
    CHECK(b[0] == 5.0);
    CHECK(opt.step_count() == 1);
    opt.zero_grad();
    CHECK((!a.has_grad() || a.grad()[0] == 0.0));
}

TEST_CASE("one-cycle schedule endpoints and shape") {
    const auto s = OneCycleSchedule::from_min(1e-6, 2500);
    CHECK(s.lr_max == doctest::Approx(1e-4));
    CHECK(onecycle_lr(0, s) == 1e-6);
    CHECK(onecycle_lr(s.warm_steps(), s) == s.lr_max);
    CHECK(onecycle_lr(2500, s) == doctest::Approx(1e-7));
    double prev = 0.0;
    for (std::size_t t = 0; t <= s.warm_steps(); ++t) {
        const double lr = onecycle_lr(t, s);
        CHECK(lr >= prev);
        prev = lr;
    }
    for (std::size_t t = s.warm_steps() + 1; t <= 2500; ++t) {
        const double lr = onecycle_lr(t, s);
        CHECK(lr <= prev);
        CHECK(lr >= s.final_floor() * (1 - 1e-12));
        prev = lr;
    }
    CHECK_THROWS_AS(onecycle_lr(2501, s), std::out_of_range);
    CHECK_THROWS(onecycle_lr(0, OneCycleSchedule{1e-3, 1e-4, 10, 0.3}));
}

}  // TEST_SUITE
