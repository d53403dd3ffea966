#pragma once

#include "hynea/rng.hpp"

#include "json.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hynea::drift {

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
double chi2_cdf(double x, double dof);
/// x with chi2_cdf(x, dof) = p, by bisection (absolute tolerance 1e-8).
double chi2_quantile(double dof, double p);

/// Standard normal CDF and upper tail via erfc.
double normal_cdf(double x);
double normal_sf(double x);

/// Anderson-Darling normality statistic with small-sample correction,
/// A*^2 = A^2 (1 + 4/n - 25/n^2), after standardizing by the sample mean and std.
double anderson_darling(std::span<const double> sample);

inline constexpr double kAdCritical = 1.092;

struct DriftConfig {
    std::string label = "high";
    std::size_t d = 256;
    double alpha = 1e-4;
    double p_s = 0.75;
    std::size_t k_max = 60;
    std::size_t trials = 10000;
    std::size_t population = 1000;
    std::uint64_t seed = 2024;

    /// Named presets: "low" is alpha = 1e-3, "high" is alpha = 1e-4.
    static DriftConfig named(const std::string& label);
    void validate() const;
};

nlohmann::json to_json(const DriftConfig& c);
DriftConfig drift_config_from_json(const nlohmann::json& j);

/// Observed range and per-coordinate clip bounds of the initial latent population.
struct Population {
    double range = 0.0;
    std::vector<double> z_min, z_max;
};

Population initial_population(std::size_t d, std::size_t n, std::uint64_t seed);

/// Mutation state of one chain.
struct Chain {
    std::vector<double> z;
    double delta = 0.0;  // noise variance of the next mutation
    Rng rng;
};

Chain start_chain(std::size_t d, double delta0, std::uint64_t seed);
/// z <- clip(z + N(0, delta I)); then delta doubles with probability p_s, else resets to delta0.
void mutate(Chain& c, double delta0, double p_s, const Population& pop);

/// Whole trajectory z_0..z_kmax of one chain.
std::vector<std::vector<double>> perturb_chain(const DriftConfig& cfg, const Population& pop, std::uint64_t chain_seed);

double ood_probability(std::span<const double> squared_norms, double threshold);

struct DriftReport {
    DriftConfig config;
    double range = 0.0;
    double threshold = 0.0;
    std::vector<double> p_ood;   // k = 0..k_max
    std::vector<double> ad_stat; // k = 0..k_max
    /// First k with A*^2 > 1.092 (k_max + 1 when never).
    std::size_t ad_crossing() const;
};

DriftReport run_drift_experiment(const DriftConfig& cfg);

/// CSV with columns k, P_OOD, A_star_sq, config; one block per report.
void write_drift_csv(const std::string& path, const std::vector<DriftReport>& reports);

}  // namespace hynea::drift
