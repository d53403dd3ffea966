#include "doctest.h"
#include "helpers.hpp"

#include "hynea/objectives.hpp"

#include <cmath>

using namespace hynea;
using namespace hynea::obj;

TEST_SUITE("objectives") {

TEST_CASE("loss values match closed forms") {
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor a = test::randn({1, 4, 4}, rng), b = test::randn({1, 4, 4}, rng);
        double sq = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(frobenius_loss(a, b).item() == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));

        Tensor y = test::randn({5}, rng, 3.0);
        const std::size_t t = trial % 5;
        double z = 0.0;
        for (double v : y.data()) z += std::exp(v);
        CHECK(ce_loss(y, t).item() == doctest::Approx(-y[t] + std::log(z)).epsilon(1e-12));

        const double l = 4.0 * rng.normal();
        Tensor lt({1}, std::vector<double>{l});
        const double p = 1.0 / (1.0 + std::exp(-l));
        CHECK(bce_logits_loss(lt, true).item() == doctest::Approx(-std::log(p)).epsilon(1e-10));
        CHECK(bce_logits_loss(lt, false).item() == doctest::Approx(-std::log(1 - p)).epsilon(1e-10));
    }
    // No overflow far in the tails.
    CHECK(std::isfinite(bce_logits_loss(Tensor({1}, std::vector<double>{800.0}), false).item()));
    CHECK_THROWS_AS(frobenius_loss(Tensor({2}), Tensor({3})), ShapeError);
}

TEST_CASE("behavior losses are differentiable") {
    Rng rng(2);
    Tensor y = test::leaf(test::randn({4}, rng));
    CHECK(grad_check([&] { return ce_loss(y, 2); }, y) < 1e-4);
    Tensor m = test::leaf(test::randn({5, 4}, rng));
    const std::size_t tg[] = {0, 3, 1, 1, 2};
    CHECK(grad_check([&] { return mean_ce_loss(m, tg); }, m) < 1e-4);
    Tensor a = test::leaf(test::randn({1, 3, 3}, rng)), b = test::randn({1, 3, 3}, rng);
    CHECK(grad_check([&] { return frobenius_loss(a, b); }, a) < 1e-4);
    Tensor l = test::leaf(test::randn({1}, rng));
    CHECK(grad_check([&] { return bce_logits_loss(l, true); }, l) < 1e-4);
}

TEST_CASE("fidelity gradient is bounded at the origin") {
    Tensor a = test::leaf(Tensor({4}, std::vector<double>{0.1, 0.2, 0.3, 0.4}));
    {
        Tape tape;
        tape.backward(frobenius_loss(a, a.detach()));
    }
    for (double g : a.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("combined loss sums the two terms for every task") {
    Rng rng(3);
    const Tensor o = test::uniform({1, 32, 32}, rng, 0, 1), g = test::uniform({1, 32, 32}, rng, 0, 1);
    const double fid = frobenius_loss(g, o).item();

    sut::Prediction mc{sut::TaskKind::multiclass, test::randn({4}, rng)};
    auto s = sut::select_target(mc);
    auto terms = combined_loss(o, g, mc, s);
    CHECK(terms.fidelity == doctest::Approx(fid));
    CHECK(terms.behavior == doctest::Approx(ce_loss(mc.logits, s.target_class).item()));
    CHECK(terms.total.item() == doctest::Approx(terms.fidelity + terms.behavior));

    sut::Prediction bin{sut::TaskKind::binary, test::randn({6}, rng)};
    s = sut::select_target(bin, 3);
    terms = combined_loss(o, g, bin, s);
    CHECK(terms.behavior == doctest::Approx(bce_logits_loss(element(bin.logits, 3), s.target_positive).item()));

    sut::Prediction det{sut::TaskKind::detection, test::randn({sut::kAnchors, sut::kDetClasses + 1}, rng)};
    s = sut::select_target(det);
    double ref = 0.0;
    for (std::size_t i = 0; i < sut::kTopK; ++i) {
        const auto row = sut::detection_row(det, s.anchors[i]);
        double z = 0.0;
        for (double v : row) z += std::exp(v);
        ref += -row[s.anchor_targets[i]] + std::log(z);
    }
    terms = combined_loss(o, g, det, s);
    CHECK(terms.behavior == doctest::Approx(ref / sut::kTopK).epsilon(1e-12));
    CHECK_THROWS(behavior_loss(mc, s));
}

}  // TEST_SUITE
