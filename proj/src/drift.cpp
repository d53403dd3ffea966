#include "hynea/drift.hpp"

#include "hynea/config.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <fstream>
#ifdef __AVX__
#include <immintrin.h>
#endif
#include <limits>
#include <stdexcept>

namespace hynea::drift {

namespace {

constexpr double kSqrt2 = 1.41421356237309504880;

double gamma_series(double a, double x) {
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < 10000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper tail Q(a, x) by Lentz's continued fraction.
double gamma_cf(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double safe_log(double p) { return std::log(std::max(p, DBL_MIN)); }

// glibc's scalar erfc/log run many times slower when the upper halves of the
// vector registers are left dirty by the vectorized loops around them.
inline void clear_upper() {
#ifdef __AVX__
    _mm256_zeroupper();
#endif
}

}  // namespace

double gamma_p(double a, double x) {
    if (!(a > 0.0) || x < 0.0) throw std::domain_error("gamma_p needs a > 0, x >= 0");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return gamma_series(a, x);
    return 1.0 - gamma_cf(a, x);
}

double chi2_cdf(double x, double dof) { return x <= 0.0 ? 0.0 : gamma_p(dof / 2.0, x / 2.0); }

double chi2_quantile(double dof, double p) {
    if (!(dof >= 1.0)) throw std::domain_error("chi2_quantile needs dof >= 1");
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("chi2_quantile needs p in (0, 1)");
    double lo = 0.0, hi = std::max(1.0, dof);
    while (chi2_cdf(hi, dof) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (chi2_cdf(mid, dof) < p) lo = mid;
        else hi = mid;
        if (hi - lo < 1e-10) return 0.5 * (lo + hi);
    }
    throw std::runtime_error("chi2_quantile did not converge");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }
double normal_sf(double x) { return 0.5 * std::erfc(x / kSqrt2); }

double anderson_darling(std::span<const double> sample) {
    const std::size_t n = sample.size();
    if (n < 8) throw std::invalid_argument("anderson_darling needs at least 8 observations");
    double mean = 0.0;
    for (double v : sample) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : sample) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw std::domain_error("anderson_darling: zero sample variance");
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = (sample[i] - mean) / sd;
    std::sort(x.begin(), x.end());
    clear_upper();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 2.0 * static_cast<double>(i + 1) - 1.0;
        s += w * (safe_log(normal_cdf(x[i])) + safe_log(normal_sf(x[n - 1 - i])));
    }
    const double nn = static_cast<double>(n);
    const double a2 = -nn - s / nn;
    clear_upper();
    return a2 * (1.0 + 4.0 / nn - 25.0 / (nn * nn));
}

// ---------------------------------------------------------------------------

DriftConfig DriftConfig::named(const std::string& label) {
    DriftConfig c;
    c.label = label;
    if (label == "low") c.alpha = 1e-3;
    else if (label == "high") c.alpha = 1e-4;
    else throw std::invalid_argument("unknown drift config '" + label + "' (expected low or high)");
    return c;
}

void DriftConfig::validate() const {
    if (d < 1) throw std::invalid_argument("drift: d must be positive");
    if (alpha < 0.0) throw std::invalid_argument("drift: alpha must be non-negative");
    if (!(p_s >= 0.0 && p_s <= 1.0)) throw std::invalid_argument("drift: p_s must lie in [0, 1]");
    if (trials < 100) throw std::invalid_argument("drift: at least 100 trials required");
    if (population < 2) throw std::invalid_argument("drift: population needs at least two samples");
}

nlohmann::json to_json(const DriftConfig& c) {
    return {{"label", c.label}, {"d", c.d},         {"alpha", c.alpha},           {"p_s", c.p_s},
            {"k_max", c.k_max}, {"trials", c.trials}, {"population", c.population}, {"seed", c.seed}};
}

DriftConfig drift_config_from_json(const nlohmann::json& j) {
    check_keys(j, {"label", "d", "alpha", "p_s", "k_max", "trials", "population", "seed"}, "drift config");
    DriftConfig c = DriftConfig::named(field<std::string>(j, "label", "high"));
    c.d = field<std::size_t>(j, "d", c.d);
    c.alpha = field<double>(j, "alpha", c.alpha);
    c.p_s = field<double>(j, "p_s", c.p_s);
    c.k_max = field<std::size_t>(j, "k_max", c.k_max);
    c.trials = field<std::size_t>(j, "trials", c.trials);
    c.population = field<std::size_t>(j, "population", c.population);
    c.seed = field<std::uint64_t>(j, "seed", c.seed);
    c.validate();
    return c;
}

Population initial_population(std::size_t d, std::size_t n, std::uint64_t seed) {
    Rng rng(split_seed(seed, 0x909));
    Population p;
    p.z_min.assign(d, std::numeric_limits<double>::infinity());
    p.z_max.assign(d, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double v = rng.normal();
            p.z_min[j] = std::min(p.z_min[j], v);
            p.z_max[j] = std::max(p.z_max[j], v);
        }
    p.range = *std::max_element(p.z_max.begin(), p.z_max.end()) - *std::min_element(p.z_min.begin(), p.z_min.end());
    return p;
}

Chain start_chain(std::size_t d, double delta0, std::uint64_t seed) {
    Chain c{std::vector<double>(d), delta0, Rng(seed)};
    for (auto& v : c.z) v = c.rng.normal();
    return c;
}

void mutate(Chain& c, double delta0, double p_s, const Population& pop) {
    const double sd = std::sqrt(c.delta);
    for (std::size_t j = 0; j < c.z.size(); ++j) {
        c.z[j] = std::clamp(c.z[j] + sd * c.rng.normal(), pop.z_min[j], pop.z_max[j]);
    }
    c.delta = c.rng.bernoulli(p_s) ? 2.0 * c.delta : delta0;
}

std::vector<std::vector<double>> perturb_chain(const DriftConfig& cfg, const Population& pop, std::uint64_t chain_seed) {
    const double delta0 = cfg.alpha * pop.range;
    Chain c = start_chain(cfg.d, delta0, chain_seed);
    std::vector<std::vector<double>> traj{c.z};
    for (std::size_t k = 0; k < cfg.k_max; ++k) {
        mutate(c, delta0, cfg.p_s, pop);
        traj.push_back(c.z);
    }
    return traj;
}

double ood_probability(std::span<const double> squared_norms, double threshold) {
    if (squared_norms.empty()) throw std::invalid_argument("ood_probability of no trials");
    std::size_t out = 0;
    for (double v : squared_norms)
        if (v > threshold) ++out;
    return static_cast<double>(out) / static_cast<double>(squared_norms.size());
}

std::size_t DriftReport::ad_crossing() const {
    for (std::size_t k = 0; k < ad_stat.size(); ++k)
        if (ad_stat[k] > kAdCritical) return k;
    return ad_stat.size();
}

DriftReport run_drift_experiment(const DriftConfig& cfg) {
    cfg.validate();
    DriftReport r;
    r.config = cfg;
    const Population pop = initial_population(cfg.d, cfg.population, cfg.seed);
    r.range = pop.range;
    r.threshold = chi2_quantile(static_cast<double>(cfg.d), 0.99);
    const double delta0 = cfg.alpha * pop.range;
    std::vector<Chain> chains;
    chains.reserve(cfg.trials);
    for (std::size_t t = 0; t < cfg.trials; ++t) chains.push_back(start_chain(cfg.d, delta0, split_seed(cfg.seed, 1000 + t)));
    std::vector<double> norms(cfg.trials), pooled(cfg.trials * cfg.d);
    for (std::size_t k = 0; k <= cfg.k_max; ++k) {
        if (k > 0)
            for (auto& c : chains) mutate(c, delta0, cfg.p_s, pop);
        for (std::size_t t = 0; t < cfg.trials; ++t) {
            double s = 0.0;
            for (std::size_t j = 0; j < cfg.d; ++j) {
                s += chains[t].z[j] * chains[t].z[j];
                pooled[t * cfg.d + j] = chains[t].z[j];
            }
            norms[t] = s;
        }
        r.p_ood.push_back(ood_probability(norms, r.threshold));
        r.ad_stat.push_back(anderson_darling(pooled));
    }
    return r;
}

void write_drift_csv(const std::string& path, const std::vector<DriftReport>& reports) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "k,P_OOD,A_star_sq,config\n";
    char buf[160];
    for (const auto& r : reports) {
        char id[64];
        std::snprintf(id, sizeof id, "%s_ps%.2f", r.config.label.c_str(), r.config.p_s);
        for (std::size_t k = 0; k < r.p_ood.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%s\n", k, r.p_ood[k], r.ad_stat[k], id);
            f << buf;
        }
    }
}

}  // namespace hynea::drift
