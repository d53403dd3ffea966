#pragma once

#include "hynea/tensor.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace hynea::metrics {

using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Image similarity

/// Multi-scale SSIM of two single-channel images in [0,1] (last two axes are
/// H, W). Standard 5-scale exponents truncated to `scales` and renormalized.
double ms_ssim(const Tensor& a, const Tensor& b, std::size_t scales = 3);

/// Exponent weights used for `scales` levels.
std::vector<double> ms_ssim_weights(std::size_t scales);

// ---------------------------------------------------------------------------
// Embedding statistics

/// Mean over rows of the population variance of each row.
double embedding_diversity(const Matrix& E);

/// Covariance of the columns of a C x n feature map (C x C, 1/(n-1)).
Matrix covariance(const Matrix& E);

/// tr(|cov(E0) - cov(Et)|), feature maps C x n.
double trace_diff(const Matrix& E0, const Matrix& Et);

/// ||(cov(E0) - cov(Et)) o I||_1
double l1_diag_equiv(const Matrix& E0, const Matrix& Et);

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2); rows are samples.
double frechet_distance(const Matrix& E1, const Matrix& E2, double reg = 1e-6);

// ---------------------------------------------------------------------------
// Task rates

/// Fraction of rows (B x C) whose argmax changed.
double mr_multiclass(const Matrix& Y, const Matrix& Yhat);
/// Fraction of entries whose sign (> 0 vs <= 0) changed.
double mr_binary(std::span<const double> Yc, std::span<const double> Yc_hat);
/// Y[i] is the D x C matrix of image i; fraction of (i, j) with changed argmax.
double mr_detection(const std::vector<Matrix>& Y, const std::vector<Matrix>& Yhat);
/// Fraction of rows whose new argmax is outside the origin's top-2.
double escape_multiclass(const Matrix& Y, const Matrix& Yhat);
/// Mean over non-target attributes j != c of mr_binary on column j.
double escape_binary(const Matrix& Y, const Matrix& Yhat, std::size_t c);
/// Mean of Y - Yhat over all B x D entries.
double confidence_reduction(const Matrix& Yc, const Matrix& Yc_hat);

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
};
/// Mean and sample standard deviation.
MeanSd mean_sd(std::span<const double> v);

}  // namespace hynea::metrics
