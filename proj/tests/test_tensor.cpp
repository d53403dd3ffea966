#include "doctest.h"
#include "helpers.hpp"
#include "op_checks.hpp"

#include "hynea/tensor.hpp"

#include <cmath>
#include <sstream>

using namespace hynea;
using test::leaf;
using test::probe;
using test::randn;

namespace {

constexpr double kTol = 1e-4;

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("broadcast add matches a loop") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(4), m = 1 + rng.uniform_int(5);
        Tensor a = randn({n, m}, rng), b = randn({m}, rng), c = randn({n, 1}, rng);
        Tensor ab = a + b, ac = a * c;
        REQUIRE(ab.shape() == Shape{n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                CHECK(ab[i * m + j] == a[i * m + j] + b[j]);
                CHECK(ac[i * m + j] == a[i * m + j] * c[i]);
            }
    }
    CHECK_THROWS_AS(add(Tensor({2, 3}), Tensor({4})), ShapeError);
}

TEST_CASE("matmul and conv2d match loop oracles") {
    Rng rng(2);
    Tensor a = randn({3, 4}, rng), b = randn({4, 5}, rng);
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 5 + j];
            CHECK(c[i * 5 + j] == doctest::Approx(s).epsilon(1e-12));
        }

    const std::size_t C = 2, O = 3, H = 5, W = 6, K = 3;
    Tensor x = randn({C, H, W}, rng), w = randn({O, C, K, K}, rng);
    Tensor y = conv2d(x, w, Padding::same);
    REQUIRE(y.shape() == Shape{O, H, W});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                double s = 0;
                for (std::size_t ci = 0; ci < C; ++ci)
                    for (std::size_t di = 0; di < K; ++di)
                        for (std::size_t dj = 0; dj < K; ++dj) {
                            const long yi = long(i) + long(di) - 1, xj = long(j) + long(dj) - 1;
                            if (yi < 0 || xj < 0 || yi >= long(H) || xj >= long(W)) continue;
                            s += x[(ci * H + yi) * W + xj] * w[((o * C + ci) * K + di) * K + dj];
                        }
                CHECK(y[(o * H + i) * W + j] == doctest::Approx(s).epsilon(1e-12));
            }
    Tensor v = conv2d(x, w, Padding::valid);
    CHECK(v.shape() == Shape{O, H - 2, W - 2});
}

TEST_CASE("reductions and softmax") {
    Rng rng(3);
    Tensor x = randn({3, 4}, rng);
    Tensor s = reduce(x, Reduce::sum, {1});
    Tensor m = reduce(x, Reduce::mean, {0}, true);
    Tensor v = reduce(x, Reduce::var, {1});
    CHECK(m.shape() == Shape{1, 4});
    for (std::size_t i = 0; i < 3; ++i) {
        double acc = 0, sq = 0;
        for (std::size_t j = 0; j < 4; ++j) acc += x[i * 4 + j];
        for (std::size_t j = 0; j < 4; ++j) sq += std::pow(x[i * 4 + j] - acc / 4, 2);
        CHECK(s[i] == doctest::Approx(acc).epsilon(1e-12));
        CHECK(v[i] == doctest::Approx(sq / 4).epsilon(1e-12));
    }
    Tensor p = softmax(x, 1), lp = log_softmax(x, 1), lse = logsumexp(x, 1);
    for (std::size_t i = 0; i < 3; ++i) {
        double tot = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            tot += p[i * 4 + j];
            CHECK(lp[i * 4 + j] == doctest::Approx(x[i * 4 + j] - lse[i]).epsilon(1e-12));
        }
        CHECK(tot == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Stable for large logits.
    Tensor big({2}, std::vector<double>{1000.0, 999.0});
    CHECK(logsumexp(big, 0).item() == doctest::Approx(1000.0 + std::log1p(std::exp(-1.0))));
}

TEST_CASE("domain errors") {
    CHECK_THROWS_AS(log(Tensor({2}, std::vector<double>{1.0, 0.0})), DomainError);
    CHECK_THROWS_AS(sqrt(Tensor({1}, std::vector<double>{-1.0})), DomainError);
    CHECK_THROWS_AS(reshape(Tensor({2, 3}), {4}), ShapeError);
}

TEST_CASE("finite-difference gradients of every differentiable op") {
    for (std::uint64_t seed : {4, 40, 400}) {
        for (const auto& c : test::check_all_ops(seed)) {
            INFO(c.name);
            CHECK(c.error < kTol);
        }
    }
}

TEST_CASE("gradients accumulate over reused tensors") {
    Tensor x = leaf(Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
    {
        Tape tape;
        tape.backward(sum(x * x + x));
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2 * x[i] + 1);
}

TEST_CASE("frozen tensors receive no gradient and no grad guard records nothing") {
    Rng rng(6);
    Tensor w = randn({3}, rng);
    w.freeze();
    Tensor x = leaf(randn({3}, rng));
    {
        Tape tape;
        Tensor y;
        {
            NoGradGuard g;
            y = x * w;
            CHECK(tape.size() == 0);
        }
        tape.backward(sum(x * w));
    }
    CHECK(w.frozen());
    CHECK_FALSE(w.has_grad());
    CHECK(x.has_grad());
}

TEST_CASE("checkpointed backward is bit-identical to the plain backward") {
    Rng rng(7);
    Tensor w1 = leaf(randn({4, 3, 3, 3}, rng, 0.3)), w2 = leaf(randn({4, 4, 3, 3}, rng, 0.3));
    Tensor x0 = randn({1, 3, 6, 6}, rng);
    auto segment = [w1, w2](std::span<const Tensor> in) { return conv2d(silu(conv2d(in[0], w1)), w2); };
    auto run = [&](bool ckpt) {
        w1.zero_grad();
        w2.zero_grad();
        Tensor x = leaf(x0.clone());
        Tape tape;
        Tensor h = x;
        std::vector<Tensor> in{h};
        h = ckpt ? checkpoint(segment, {h}) : segment(in);
        tape.backward(probe(sum(h * h)));
        return std::vector<std::vector<double>>{{w1.grad().begin(), w1.grad().end()},
                                                {w2.grad().begin(), w2.grad().end()},
                                                {x.grad().begin(), x.grad().end()}};
    };
    const std::size_t before = checkpoint_recompute_count();
    const auto checkpointed = run(true);
    CHECK(checkpoint_recompute_count() == before + 1);
    const auto plain = run(false);
    CHECK(checkpointed == plain);
}

TEST_CASE("hynt round trip and hash") {
    Rng rng(8);
    Tensor t = randn({2, 3, 4}, rng);
    std::stringstream ss;
    write_hynt(ss, t);
    Tensor back = read_hynt(ss);
    CHECK(test::same_bits(t, back));
    const Tensor one[] = {t};
    const Tensor two[] = {back};
    CHECK(hash_tensors(one) == hash_tensors(two));
    Tensor other = t.clone();
    other.mutable_data()[5] += 1e-15;
    const Tensor three[] = {other};
    CHECK(hash_tensors(one) != hash_tensors(three));
    std::stringstream bad("HYNX garbage");
    CHECK_THROWS(read_hynt(bad));
}

}  // TEST_SUITE
