#include "hynea/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hynea {

void adamw_update(std::span<double> param, std::span<const double> grad, AdamWMoments& moments,
                  const AdamWConfig& cfg, std::size_t step, double lr) {
    if (!grad.empty() && grad.size() != param.size()) throw ShapeError("AdamW gradient size does not match parameter");
    if (moments.m.empty()) {
        moments.m.assign(param.size(), 0.0);
        moments.v.assign(param.size(), 0.0);
    }
    if (moments.m.size() != param.size()) throw ShapeError("AdamW state size does not match parameter");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        param[i] -= lr * cfg.weight_decay * param[i];
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = moments.m[i] / bc1;
        const double v_hat = moments.v[i] / bc2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), moments_(params_.size()), cfg_(cfg) {
    for (const auto& p : params_) {
        if (p.frozen()) throw std::logic_error("AdamW cannot own a frozen tensor");
    }
}

void AdamW::step(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    ++step_count_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (p.frozen()) throw std::logic_error("attempted update of a frozen tensor");
        adamw_update(p.mutable_data(), p.grad(), moments_[i], cfg_, step_count_, lr);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::size_t OneCycleSchedule::warm_steps() const {
    return static_cast<std::size_t>(std::ceil(warm_fraction * static_cast<double>(total_steps)));
}

void OneCycleSchedule::validate() const {
    if (!(lr_min > 0.0) || !(lr_max > lr_min)) throw std::invalid_argument("OneCycle needs 0 < lr_min < lr_max");
    if (!(warm_fraction > 0.0 && warm_fraction < 1.0)) throw std::invalid_argument("warm_fraction must lie in (0,1)");
    if (total_steps < 2 || warm_steps() >= total_steps) {
        throw std::invalid_argument("OneCycle needs a non-empty decay phase (total_steps >= 2)");
    }
}

double onecycle_lr(std::size_t step, const OneCycleSchedule& sched) {
    sched.validate();
    if (step > sched.total_steps) {
        throw std::out_of_range("step " + std::to_string(step) + " beyond schedule of " +
                                std::to_string(sched.total_steps));
    }
    const std::size_t warm = sched.warm_steps();
    if (step == 0) return sched.lr_min;
    if (step == warm) return sched.lr_max;
    if (step == sched.total_steps) return sched.final_floor();
    constexpr double pi = std::numbers::pi;
    if (step < warm) {
        const double u = static_cast<double>(step) / static_cast<double>(warm);
        return sched.lr_min + (sched.lr_max - sched.lr_min) * 0.5 * (1.0 - std::cos(pi * u));
    }
    const double u = static_cast<double>(step - warm) / static_cast<double>(sched.total_steps - warm);
    const double floor = sched.final_floor();
    return floor + (sched.lr_max - floor) * 0.5 * (1.0 + std::cos(pi * u));
}

}  // namespace hynea
