#include "doctest.h"
#include "helpers.hpp"

#include "hynea/config.hpp"
#include "hynea/drift.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>

using namespace hynea;
using namespace hynea::drift;

namespace {

double ad_oracle(std::vector<double> x) {
    const double n = double(x.size());
    double m = 0, s = 0;
    for (double v : x) m += v;
    m /= n;
    for (double v : x) s += (v - m) * (v - m);
    s = std::sqrt(s / (n - 1));
    std::sort(x.begin(), x.end());
    const boost::math::normal N;
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lo = boost::math::cdf(N, (x[i] - m) / s);
        const double hi = boost::math::cdf(boost::math::complement(N, (x[x.size() - 1 - i] - m) / s));
        acc += (2.0 * double(i + 1) - 1.0) * (std::log(lo) + std::log(hi));
    }
    return (-n - acc / n) * (1.0 + 4.0 / n - 25.0 / (n * n));
}

}  // namespace

TEST_SUITE("drift") {

TEST_CASE("chi-square cdf and quantile agree with Boost") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const double a = rng.uniform(0.3, 200.0), x = rng.uniform(0.0, 3.0 * a + 5.0);
        CHECK(std::abs(gamma_p(a, x) - boost::math::gamma_p(a, x)) <= 1e-12);
    }
    for (double d : {1.0, 2.0, 10.0, 256.0}) {
        for (double x : {0.5, d, 2.0 * d}) {
            CHECK(std::abs(chi2_cdf(x, d) - boost::math::gamma_p(d / 2, x / 2)) <= 1e-12);
        }
        for (double p : {0.01, 0.5, 0.99}) {
            const double q = boost::math::quantile(boost::math::chi_squared(d), p);
            CHECK(std::abs(chi2_quantile(d, p) - q) <= 1e-8);
        }
    }
    CHECK_THROWS(chi2_quantile(0.0, 0.5));
    CHECK_THROWS(chi2_quantile(3.0, 1.0));
}

TEST_CASE("normal tails") {
    const boost::math::normal N;
    for (double x : {-30.0, -8.0, -1.0, 0.0, 0.7, 5.0, 30.0}) {
        CHECK(normal_cdf(x) == doctest::Approx(boost::math::cdf(N, x)).epsilon(1e-12));
        CHECK(normal_sf(x) == doctest::Approx(boost::math::cdf(boost::math::complement(N, x))).epsilon(1e-12));
    }
}

TEST_CASE("anderson-darling statistic") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(50 + rng.uniform_int(500));
        for (auto& v : x) v = trial % 2 ? rng.normal() : rng.uniform();
        CHECK(anderson_darling(x) == doctest::Approx(ad_oracle(x)).epsilon(1e-9));
    }
    std::vector<double> normal(20000), flat(20000);
    for (auto& v : normal) v = rng.normal();
    for (auto& v : flat) v = rng.uniform();
    CHECK(anderson_darling(normal) < kAdCritical);
    CHECK(anderson_darling(flat) > kAdCritical);
    CHECK_THROWS(anderson_darling(std::vector<double>(4, 1.0)));
    CHECK_THROWS(anderson_darling(std::vector<double>(10, 1.0)));
}

TEST_CASE("mutation respects the clip bounds and the step-size rule") {
    const auto pop = initial_population(16, 200, 3);
    CHECK(pop.range == doctest::Approx(*std::max_element(pop.z_max.begin(), pop.z_max.end()) -
                                       *std::min_element(pop.z_min.begin(), pop.z_min.end())));
    Rng rng(4);
    for (int trial = 0; trial < 40; ++trial) {
        const double delta0 = std::pow(10.0, rng.uniform(-4, 1));
        auto c = start_chain(16, delta0, 100 + trial);
        const double p_s = trial % 3 == 0 ? 0.0 : (trial % 3 == 1 ? 1.0 : 0.5);
        for (int k = 0; k < 30; ++k) {
            const double before = c.delta;
            mutate(c, delta0, p_s, pop);
            for (std::size_t j = 0; j < 16; ++j) {
                CHECK(c.z[j] >= pop.z_min[j]);
                CHECK(c.z[j] <= pop.z_max[j]);
            }
            if (p_s == 0.0) CHECK(c.delta == delta0);
            if (p_s == 1.0) CHECK(c.delta == 2.0 * before);
            if (p_s == 0.5) CHECK((c.delta == delta0 || c.delta == 2.0 * before));
        }
    }
}

TEST_CASE("experiment is deterministic per seed") {
    DriftConfig cfg;
    cfg.d = 32;
    cfg.trials = 300;
    cfg.k_max = 12;
    cfg.population = 200;
    const auto a = run_drift_experiment(cfg), b = run_drift_experiment(cfg);
    CHECK(a.p_ood == b.p_ood);
    CHECK(a.ad_stat == b.ad_stat);
    CHECK(a.p_ood.size() == 13);
    CHECK(a.threshold == doctest::Approx(boost::math::quantile(boost::math::chi_squared(32), 0.99)).epsilon(1e-9));
    cfg.seed += 1;
    CHECK(run_drift_experiment(cfg).p_ood != a.p_ood);
    CHECK(ood_probability(std::vector<double>{1, 5, 10}, 4.0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("config parsing") {
    CHECK(DriftConfig::named("low").alpha == 1e-3);
    CHECK(DriftConfig::named("high").alpha == 1e-4);
    const auto c = drift_config_from_json({{"label", "high"}, {"p_s", 0.5}, {"trials", 500}});
    CHECK(c.p_s == 0.5);
    CHECK(c.trials == 500);
    CHECK(drift_config_from_json(to_json(c)).p_s == 0.5);
    CHECK_THROWS_AS(drift_config_from_json({{"p_z", 0.5}}), ConfigError);
    CHECK_THROWS_AS(drift_config_from_json({{"trials", "many"}}), ConfigError);
    CHECK_THROWS(drift_config_from_json({{"p_s", 1.5}}));
}

}  // TEST_SUITE
