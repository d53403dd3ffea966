#pragma once

#include "hynea/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace hynea {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// First/second moments for one parameter tensor.
struct AdamWMoments {
    std::vector<double> m;
    std::vector<double> v;
};

/// One AdamW update of a flat parameter block. Decoupled weight decay is
/// applied before the bias-corrected Adam step; `step` is 1-based.
void adamw_update(std::span<double> param, std::span<const double> grad, AdamWMoments& moments,
                  const AdamWConfig& cfg, std::size_t step, double lr);

class AdamW {
public:
    explicit AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

    /// Updates every parameter from its accumulated gradient (absent = zero).
    void step(double lr);
    void zero_grad();

    std::size_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<AdamWMoments>& moments() const { return moments_; }

private:
    std::vector<Tensor> params_;
    std::vector<AdamWMoments> moments_;
    AdamWConfig cfg_;
    std::size_t step_count_ = 0;
};

/// Cosine warm-up from lr_min to lr_max, then cosine decay to lr_min / 10.
struct OneCycleSchedule {
    double lr_min = 1e-6;
    double lr_max = 1e-4;
    std::size_t total_steps = 2500;
    double warm_fraction = 0.3;

    static OneCycleSchedule from_min(double lr_min, std::size_t total_steps = 2500) {
        return OneCycleSchedule{lr_min, 100.0 * lr_min, total_steps, 0.3};
    }
    double final_floor() const { return lr_min / 10.0; }
    std::size_t warm_steps() const;
    void validate() const;
};

double onecycle_lr(std::size_t step, const OneCycleSchedule& sched);

}  // namespace hynea
