#include "hynea/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hynea::metrics {

namespace {

constexpr double kStandardWeights[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr double kSigma = 1.5;
constexpr std::size_t kWindow = 11;

struct Image {
    std::size_t h = 0, w = 0;
    std::vector<double> v;
    double at(std::size_t i, std::size_t j) const { return v[i * w + j]; }
};

Image as_image(const Tensor& t) {
    if (t.rank() < 2) throw ShapeError("ms_ssim expects an image");
    Image im;
    im.h = t.dim(t.rank() - 2);
    im.w = t.dim(t.rank() - 1);
    if (t.size() != im.h * im.w) throw ShapeError("ms_ssim supports single-channel images only");
    im.v.assign(t.data().begin(), t.data().end());
    return im;
}

Image downsample(const Image& x) {
    Image y;
    y.h = x.h / 2;
    y.w = x.w / 2;
    y.v.resize(y.h * y.w);
    for (std::size_t i = 0; i < y.h; ++i)
        for (std::size_t j = 0; j < y.w; ++j)
            y.v[i * y.w + j] =
                0.25 * (x.at(2 * i, 2 * j) + x.at(2 * i, 2 * j + 1) + x.at(2 * i + 1, 2 * j) + x.at(2 * i + 1, 2 * j + 1));
    return y;
}

std::vector<double> gaussian(std::size_t size) {
    std::vector<double> g(size);
    const double c = static_cast<double>(size / 2);
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    }
    const double s = std::accumulate(g.begin(), g.end(), 0.0);
    for (auto& x : g) x /= s;
    return g;
}

// Separable valid filtering.
Image filter(const Image& x, const std::vector<double>& g) {
    const std::size_t k = g.size();
    Image tmp{x.h, x.w - k + 1, {}};
    tmp.v.assign(tmp.h * tmp.w, 0.0);
    for (std::size_t i = 0; i < tmp.h; ++i)
        for (std::size_t j = 0; j < tmp.w; ++j) {
            double s = 0.0;
            for (std::size_t q = 0; q < k; ++q) s += g[q] * x.at(i, j + q);
            tmp.v[i * tmp.w + j] = s;
        }
    Image out{x.h - k + 1, tmp.w, {}};
    out.v.assign(out.h * out.w, 0.0);
    for (std::size_t i = 0; i < out.h; ++i)
        for (std::size_t j = 0; j < out.w; ++j) {
            double s = 0.0;
            for (std::size_t q = 0; q < k; ++q) s += g[q] * tmp.at(i + q, j);
            out.v[i * out.w + j] = s;
        }
    return out;
}

Image product(const Image& a, const Image& b) {
    Image r{a.h, a.w, std::vector<double>(a.v.size())};
    for (std::size_t i = 0; i < a.v.size(); ++i) r.v[i] = a.v[i] * b.v[i];
    return r;
}

// Mean contrast-structure term and mean full SSIM at one scale.
std::pair<double, double> ssim_terms(const Image& x, const Image& y) {
    std::size_t size = std::min({kWindow, x.h, x.w});
    if (size % 2 == 0) --size;
    const auto g = gaussian(size);
    const Image mx = filter(x, g), my = filter(y, g);
    const Image sxx = filter(product(x, x), g), syy = filter(product(y, y), g), sxy = filter(product(x, y), g);
    double cs_sum = 0.0, ssim_sum = 0.0;
    for (std::size_t i = 0; i < mx.v.size(); ++i) {
        const double ux = mx.v[i], uy = my.v[i];
        const double vx = sxx.v[i] - ux * ux, vy = syy.v[i] - uy * uy, cxy = sxy.v[i] - ux * uy;
        const double cs = (2.0 * cxy + kC2) / (vx + vy + kC2);
        const double lum = (2.0 * ux * uy + kC1) / (ux * ux + uy * uy + kC1);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    const double n = static_cast<double>(mx.v.size());
    return {cs_sum / n, ssim_sum / n};
}

void require_same(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(what) + ": shape mismatch");
}

std::size_t row_argmax(const Matrix& m, Eigen::Index r) {
    std::size_t best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c)
        if (m(r, c) > m(r, static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(c);
    return best;
}

}  // namespace

std::vector<double> ms_ssim_weights(std::size_t scales) {
    if (scales < 1 || scales > 5) throw std::invalid_argument("ms_ssim supports 1..5 scales");
    std::vector<double> w(kStandardWeights, kStandardWeights + scales);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= s;
    return w;
}

double ms_ssim(const Tensor& a, const Tensor& b, std::size_t scales) {
    if (a.shape() != b.shape()) throw ShapeError("ms_ssim: images differ in shape");
    Image x = as_image(a), y = as_image(b);
    const std::size_t coarsest = std::min(x.h, x.w) >> (scales - 1);
    if (scales < 1 || coarsest < 8) throw std::invalid_argument("ms_ssim: image too small for the requested scales");
    const auto w = ms_ssim_weights(scales);
    double result = 1.0;
    for (std::size_t s = 0; s < scales; ++s) {
        const auto [cs, full] = ssim_terms(x, y);
        const double term = s + 1 == scales ? full : cs;
        result *= std::pow(std::max(term, 0.0), w[s]);
        if (s + 1 < scales) {
            x = downsample(x);
            y = downsample(y);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

double embedding_diversity(const Matrix& E) {
    if (E.rows() < 2) throw std::invalid_argument("embedding_diversity needs at least two embeddings");
    double total = 0.0;
    for (Eigen::Index i = 0; i < E.rows(); ++i) {
        const double m = E.row(i).mean();
        total += (E.row(i).array() - m).square().mean();
    }
    return total / static_cast<double>(E.rows());
}

Matrix covariance(const Matrix& E) {
    if (E.cols() < 2) throw std::invalid_argument("covariance needs at least two columns");
    const Eigen::VectorXd mu = E.rowwise().mean();
    const Matrix c = E.colwise() - mu;
    return (c * c.transpose()) / static_cast<double>(E.cols() - 1);
}

double trace_diff(const Matrix& E0, const Matrix& Et) {
    require_same(E0, Et, "trace_diff");
    return (covariance(E0) - covariance(Et)).cwiseAbs().trace();
}

double l1_diag_equiv(const Matrix& E0, const Matrix& Et) {
    require_same(E0, Et, "l1_diag_equiv");
    const Matrix d = covariance(E0) - covariance(Et);
    const Matrix masked = d.cwiseProduct(Matrix::Identity(d.rows(), d.cols()));
    return masked.cwiseAbs().sum();
}

double frechet_distance(const Matrix& E1, const Matrix& E2, double reg) {
    if (E1.cols() != E2.cols()) throw ShapeError("frechet_distance: embedding widths differ");
    if (E1.rows() < 2 || E2.rows() < 2) throw std::invalid_argument("frechet_distance needs at least two samples per set");
    const Eigen::Index d = E1.cols();
    auto stats = [&](const Matrix& E) {
        const Eigen::RowVectorXd mu = E.colwise().mean();
        const Matrix c = E.rowwise() - mu;
        Matrix cov = (c.transpose() * c) / static_cast<double>(E.rows() - 1);
        cov += reg * Matrix::Identity(d, d);
        return std::pair{mu, cov};
    };
    const auto [mu1, s1] = stats(E1);
    const auto [mu2, s2] = stats(E2);
    Eigen::SelfAdjointEigenSolver<Matrix> es1(s1);
    const Eigen::VectorXd l1 = es1.eigenvalues();
    if (!l1.allFinite()) throw std::domain_error("frechet_distance: non-finite eigenvalues");
    const Matrix root1 = es1.eigenvectors() * l1.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es1.eigenvectors().transpose();
    const Matrix m = root1 * s2 * root1;
    Eigen::SelfAdjointEigenSolver<Matrix> es2((m + m.transpose()) * 0.5);
    const Eigen::VectorXd l2 = es2.eigenvalues();
    if (!l2.allFinite()) throw std::domain_error("frechet_distance: non-finite eigenvalues");
    const double tr_sqrt = l2.cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    return std::max(value, 0.0);
}

// ---------------------------------------------------------------------------

double mr_multiclass(const Matrix& Y, const Matrix& Yhat) {
    require_same(Y, Yhat, "mr_multiclass");
    if (Y.rows() == 0) throw std::invalid_argument("mr_multiclass of an empty batch");
    std::size_t changed = 0;
    for (Eigen::Index i = 0; i < Y.rows(); ++i)
        if (row_argmax(Y, i) != row_argmax(Yhat, i)) ++changed;
    return static_cast<double>(changed) / static_cast<double>(Y.rows());
}

double mr_binary(std::span<const double> Yc, std::span<const double> Yc_hat) {
    if (Yc.size() != Yc_hat.size()) throw ShapeError("mr_binary: length mismatch");
    if (Yc.empty()) throw std::invalid_argument("mr_binary of an empty batch");
    std::size_t changed = 0;
    for (std::size_t i = 0; i < Yc.size(); ++i)
        if ((Yc[i] > 0.0) != (Yc_hat[i] > 0.0)) ++changed;
    return static_cast<double>(changed) / static_cast<double>(Yc.size());
}

double mr_detection(const std::vector<Matrix>& Y, const std::vector<Matrix>& Yhat) {
    if (Y.size() != Yhat.size() || Y.empty()) throw ShapeError("mr_detection: batch mismatch");
    std::size_t changed = 0, total = 0;
    for (std::size_t i = 0; i < Y.size(); ++i) {
        require_same(Y[i], Yhat[i], "mr_detection");
        for (Eigen::Index j = 0; j < Y[i].rows(); ++j) {
            ++total;
            if (row_argmax(Y[i], j) != row_argmax(Yhat[i], j)) ++changed;
        }
    }
    return static_cast<double>(changed) / static_cast<double>(total);
}

double escape_multiclass(const Matrix& Y, const Matrix& Yhat) {
    require_same(Y, Yhat, "escape_multiclass");
    if (Y.cols() < 2) throw std::invalid_argument("escape_multiclass needs at least two classes");
    if (Y.rows() == 0) throw std::invalid_argument("escape_multiclass of an empty batch");
    std::size_t escaped = 0;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        std::vector<double> row(Y.cols());
        for (Eigen::Index c = 0; c < Y.cols(); ++c) row[static_cast<std::size_t>(c)] = Y(i, c);
        std::vector<std::size_t> order(row.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
        const std::size_t now = row_argmax(Yhat, i);
        if (now != order[0] && now != order[1]) ++escaped;
    }
    return static_cast<double>(escaped) / static_cast<double>(Y.rows());
}

double escape_binary(const Matrix& Y, const Matrix& Yhat, std::size_t c) {
    require_same(Y, Yhat, "escape_binary");
    const auto C = static_cast<std::size_t>(Y.cols());
    if (C < 2) throw std::invalid_argument("escape_binary needs at least two attributes");
    if (c >= C) throw std::out_of_range("escape_binary: target attribute out of range");
    double total = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
        if (j == c) continue;
        const auto col = static_cast<Eigen::Index>(j);
        std::vector<double> a(Y.rows()), b(Y.rows());
        for (Eigen::Index i = 0; i < Y.rows(); ++i) {
            a[static_cast<std::size_t>(i)] = Y(i, col);
            b[static_cast<std::size_t>(i)] = Yhat(i, col);
        }
        total += mr_binary(a, b);
    }
    return total / static_cast<double>(C - 1);
}

double confidence_reduction(const Matrix& Yc, const Matrix& Yc_hat) {
    require_same(Yc, Yc_hat, "confidence_reduction");
    if (Yc.size() == 0) throw std::invalid_argument("confidence_reduction of an empty batch");
    return (Yc - Yc_hat).sum() / static_cast<double>(Yc.size());
}

MeanSd mean_sd(std::span<const double> v) {
    MeanSd r;
    r.n = v.size();
    if (v.empty()) return r;
    r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double s = 0.0;
        for (double x : v) s += (x - r.mean) * (x - r.mean);
        r.sd = std::sqrt(s / static_cast<double>(v.size() - 1));
    }
    return r;
}

}  // namespace hynea::metrics
