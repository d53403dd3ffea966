#pragma once

#include "hynea/rng.hpp"
#include "hynea/tensor.hpp"

#include <Eigen/Core>

namespace hynea::test {

inline Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor leaf(Tensor t) {
    t.set_requires_grad(true);
    return t;
}

inline Eigen::MatrixXd rand_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
    return m;
}

inline bool same_bits(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace hynea::test
