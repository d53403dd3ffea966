#pragma once

// Plain-loop restatements of the test-case metrics on nested vectors. They
// share no code with hynea::metrics and are only used to check it.

#include <cmath>
#include <cstddef>
#include <vector>

namespace hynea::oracle {

using Rows = std::vector<std::vector<double>>;

inline std::size_t first_max(const std::vector<double>& r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.size(); ++k)
        if (r[k] > r[best]) best = k;
    return best;
}

// Position of class c when r is ordered by descending score, ties to the lower index.
inline std::size_t rank_of(const std::vector<double>& r, std::size_t c) {
    std::size_t rank = 0;
    for (std::size_t k = 0; k < r.size(); ++k)
        if (r[k] > r[c] || (r[k] == r[c] && k < c)) ++rank;
    return rank;
}

inline double mr_multiclass(const Rows& Y, const Rows& Yh) {
    double n = 0;
    for (std::size_t i = 0; i < Y.size(); ++i) n += first_max(Y[i]) != first_max(Yh[i]) ? 1 : 0;
    return n / double(Y.size());
}

inline double mr_binary(const std::vector<double>& y, const std::vector<double>& yh) {
    double n = 0;
    for (std::size_t i = 0; i < y.size(); ++i) n += (y[i] > 0) != (yh[i] > 0) ? 1 : 0;
    return n / double(y.size());
}

inline double mr_detection(const std::vector<Rows>& Y, const std::vector<Rows>& Yh) {
    double n = 0, total = 0;
    for (std::size_t i = 0; i < Y.size(); ++i)
        for (std::size_t j = 0; j < Y[i].size(); ++j) {
            total += 1;
            n += first_max(Y[i][j]) != first_max(Yh[i][j]) ? 1 : 0;
        }
    return n / total;
}

inline double escape_multiclass(const Rows& Y, const Rows& Yh) {
    double n = 0;
    for (std::size_t i = 0; i < Y.size(); ++i) n += rank_of(Y[i], first_max(Yh[i])) >= 2 ? 1 : 0;
    return n / double(Y.size());
}

inline double escape_binary(const Rows& Y, const Rows& Yh, std::size_t c) {
    const std::size_t C = Y.front().size();
    double acc = 0;
    for (std::size_t j = 0; j < C; ++j) {
        if (j == c) continue;
        double n = 0;
        for (std::size_t i = 0; i < Y.size(); ++i) n += (Y[i][j] > 0) != (Yh[i][j] > 0) ? 1 : 0;
        acc += n / double(Y.size());
    }
    return acc / double(C - 1);
}

inline double confidence_reduction(const Rows& Y, const Rows& Yh) {
    double s = 0, n = 0;
    for (std::size_t i = 0; i < Y.size(); ++i)
        for (std::size_t j = 0; j < Y[i].size(); ++j) {
            s += Y[i][j] - Yh[i][j];
            n += 1;
        }
    return s / n;
}

inline double diversity(const Rows& E) {
    double acc = 0;
    for (const auto& r : E) {
        double m = 0;
        for (double v : r) m += v;
        m /= double(r.size());
        double var = 0;
        for (double v : r) var += (v - m) * (v - m);
        acc += var / double(r.size());
    }
    return acc / double(E.size());
}

// Sample covariance of the rows of a C x n feature map.
inline Rows covariance(const Rows& E) {
    const std::size_t C = E.size(), n = E.front().size();
    std::vector<double> mu(C, 0.0);
    for (std::size_t a = 0; a < C; ++a) {
        for (double v : E[a]) mu[a] += v;
        mu[a] /= double(n);
    }
    Rows S(C, std::vector<double>(C, 0.0));
    for (std::size_t a = 0; a < C; ++a)
        for (std::size_t b = 0; b < C; ++b) {
            for (std::size_t k = 0; k < n; ++k) S[a][b] += (E[a][k] - mu[a]) * (E[b][k] - mu[b]);
            S[a][b] /= double(n - 1);
        }
    return S;
}

inline double trace_diff(const Rows& E0, const Rows& Et) {
    const Rows A = covariance(E0), B = covariance(Et);
    double t = 0;
    for (std::size_t a = 0; a < A.size(); ++a) t += std::abs(A[a][a] - B[a][a]);
    return t;
}

}  // namespace hynea::oracle
