#include "doctest.h"
#include "helpers.hpp"
#include "metric_oracles.hpp"

#include "hynea/dataset.hpp"
#include "hynea/metrics.hpp"

#include <cmath>

using namespace hynea;
using namespace hynea::metrics;

namespace {

oracle::Rows rows_of(const Matrix& m) {
    oracle::Rows r(m.rows(), std::vector<double>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
    return r;
}

// Logits with frequent exact ties so tie-breaking is exercised.
Matrix tied_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = double(rng.uniform_int(5)) - 2.0;
    return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("task rates match loop oracles") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t B = 1 + rng.uniform_int(12), C = 2 + rng.uniform_int(6);
        const bool ties = trial % 3 == 0;
        const Matrix Y = ties ? tied_matrix(B, C, rng) : test::rand_matrix(B, C, rng);
        const Matrix Yh = ties ? tied_matrix(B, C, rng) : test::rand_matrix(B, C, rng);
        const auto y = rows_of(Y), yh = rows_of(Yh);
        CHECK(std::abs(mr_multiclass(Y, Yh) - oracle::mr_multiclass(y, yh)) <= 1e-12);
        CHECK(std::abs(escape_multiclass(Y, Yh) - oracle::escape_multiclass(y, yh)) <= 1e-12);
        const std::size_t c = rng.uniform_int(C);
        CHECK(std::abs(escape_binary(Y, Yh, c) - oracle::escape_binary(y, yh, c)) <= 1e-12);
        CHECK(std::abs(confidence_reduction(Y, Yh) - oracle::confidence_reduction(y, yh)) <= 1e-12);
        std::vector<double> col(B), colh(B);
        for (std::size_t i = 0; i < B; ++i) {
            col[i] = Y(i, c);
            colh[i] = Yh(i, c);
        }
        CHECK(std::abs(mr_binary(col, colh) - oracle::mr_binary(col, colh)) <= 1e-12);
        std::vector<Matrix> D, Dh;
        std::vector<oracle::Rows> d, dh;
        for (std::size_t i = 0; i < B; ++i) {
            D.push_back(test::rand_matrix(5, C, rng));
            Dh.push_back(ties ? tied_matrix(5, C, rng) : test::rand_matrix(5, C, rng));
            d.push_back(rows_of(D.back()));
            dh.push_back(rows_of(Dh.back()));
        }
        CHECK(std::abs(mr_detection(D, Dh) - oracle::mr_detection(d, dh)) <= 1e-12);
    }
}

TEST_CASE("rate edge cases") {
    Matrix Y(2, 3);
    Y << 1, 2, 3, 3, 2, 1;
    CHECK(mr_multiclass(Y, Y) == 0.0);
    CHECK(escape_multiclass(Y, Y) == 0.0);
    Matrix swapped = Y.rowwise().reverse();
    CHECK(mr_multiclass(Y, swapped) == 1.0);
    CHECK(escape_multiclass(Y, swapped) == 1.0);
    CHECK_THROWS(mr_multiclass(Y, Matrix(3, 3)));
    CHECK_THROWS(escape_binary(Y, Y, 3));
    CHECK_THROWS(mr_binary(std::vector<double>{}, std::vector<double>{}));
}

TEST_CASE("trace difference equals the diagonal L1 form and the oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t C = 1 + rng.uniform_int(8), n = 2 + rng.uniform_int(30);
        const Matrix E0 = test::rand_matrix(C, n, rng), Et = test::rand_matrix(C, n, rng) * 1.5;
        const double td = trace_diff(E0, Et);
        CHECK(std::abs(td - l1_diag_equiv(E0, Et)) <= 1e-10);
        CHECK(std::abs(td - oracle::trace_diff(rows_of(E0), rows_of(Et))) <= 1e-12 * std::max(1.0, td));
        const auto S = oracle::covariance(rows_of(E0));
        const Matrix K = covariance(E0);
        for (std::size_t a = 0; a < C; ++a)
            for (std::size_t b = 0; b < C; ++b) CHECK(std::abs(K(a, b) - S[a][b]) <= 1e-12);
        if (C >= 2) CHECK(std::abs(embedding_diversity(E0) - oracle::diversity(rows_of(E0))) <= 1e-12);
        CHECK(trace_diff(E0, E0) == 0.0);
    }
}

TEST_CASE("frechet distance closed forms") {
    Rng rng(3);
    const Matrix E = test::rand_matrix(200, 3, rng);
    CHECK(std::abs(frechet_distance(E, E)) < 1e-6);
    Eigen::RowVector3d shift(1.0, -2.0, 0.5);
    const Matrix moved = E.rowwise() + shift;
    CHECK(frechet_distance(E, moved) == doctest::Approx(shift.squaredNorm()).epsilon(1e-5));
    // One dimension: (mu1 - mu2)^2 + (s1 - s2)^2.
    const Matrix a = test::rand_matrix(500, 1, rng);
    const Matrix b = (a.array() * 3.0 + 2.0).matrix();
    const auto sd = [](const Matrix& x) {
        const double m = x.mean();
        return std::sqrt((x.array() - m).square().sum() / double(x.rows() - 1));
    };
    const double expect = std::pow(a.mean() - b.mean(), 2) + std::pow(sd(a) - sd(b), 2);
    CHECK(frechet_distance(a, b) == doctest::Approx(expect).epsilon(1e-5));
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-8));
}

TEST_CASE("ms-ssim identities") {
    Rng rng(4);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Tensor a = data::gen_shape(s % 4, s).pixels;
        const Tensor b = data::gen_shape((s + 1) % 4, s + 50).pixels;
        CHECK(std::abs(ms_ssim(a, a) - 1.0) <= 1e-9);
        const double ab = ms_ssim(a, b);
        CHECK(ab < 1.0);
        CHECK(ab == doctest::Approx(ms_ssim(b, a)).epsilon(1e-12));
    }
    const Tensor noise = test::uniform({1, 32, 32}, rng, 0, 1);
    CHECK(std::abs(ms_ssim(noise, noise) - 1.0) <= 1e-9);
    // Small perturbations score above large ones.
    Tensor near = noise.clone(), far = noise.clone();
    for (std::size_t i = 0; i < near.size(); ++i) {
        near.mutable_data()[i] = std::clamp(noise[i] + 0.02 * rng.normal(), 0.0, 1.0);
        far.mutable_data()[i] = std::clamp(noise[i] + 0.3 * rng.normal(), 0.0, 1.0);
    }
    CHECK(ms_ssim(noise, near) > ms_ssim(noise, far));
    for (std::size_t k = 1; k <= 5; ++k) {
        double t = 0;
        for (double w : ms_ssim_weights(k)) t += w;
        CHECK(t == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mean and sample sd") {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    const auto m = mean_sd(v);
    CHECK(m.mean == 5.0);
    CHECK(m.sd == doctest::Approx(std::sqrt(32.0 / 7.0)));
    CHECK(mean_sd(std::vector<double>{}).n == 0);
}

}  // TEST_SUITE
