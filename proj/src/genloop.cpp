#include "hynea/genloop.hpp"

#include "hynea/config.hpp"
#include "hynea/drift.hpp"
#include "hynea/metrics.hpp"
#include "hynea/optim.hpp"
#include "hynea/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace hynea::gen {

GenConfig GenConfig::defaults(sut::TaskKind task) {
    GenConfig c;
    c.task = task;
    switch (task) {
        case sut::TaskKind::multiclass: c.lr_min = 1e-6; c.lr_max = 1e-4; break;
        case sut::TaskKind::binary: c.lr_min = 1e-5; c.lr_max = 4e-4; break;
        case sut::TaskKind::detection: c.lr_min = 1e-4; c.lr_max = 4e-3; break;
    }
    return c;
}

void GenConfig::validate() const {
    if (!(lr_min > 0.0) || !(lr_max >= lr_min)) throw std::invalid_argument("need 0 < lr_min <= lr_max");
    if (total_steps < 2) throw std::invalid_argument("total_steps must be at least 2");
    if (!(detection_fraction > 0.0 && detection_fraction <= 1.0)) {
        throw std::invalid_argument("detection_fraction must lie in (0, 1]");
    }
    if (max_origin_attempts < 1) throw std::invalid_argument("max_origin_attempts must be positive");
    if (fidelity_gate && !(*fidelity_gate >= -1.0 && *fidelity_gate <= 1.0)) {
        throw std::invalid_argument("fidelity_gate must lie in [-1, 1]");
    }
}

nlohmann::json to_json(const GenConfig& c) {
    nlohmann::json j;
    j["task"] = sut::task_name(c.task);
    j["lr_min"] = c.lr_min;
    j["lr_max"] = c.lr_max;
    j["lr_ratio"] = c.lr_max / c.lr_min;
    j["total_steps"] = c.total_steps;
    j["budget_cap"] = c.budget_cap;
    j["fidelity_gate"] = c.fidelity_gate ? nlohmann::json(*c.fidelity_gate) : nlohmann::json(nullptr);
    j["refresh_control"] = c.refresh_control;
    j["detection_fraction"] = c.detection_fraction;
    j["weight_decay"] = c.weight_decay;
    j["hyper_seed"] = c.hyper_seed;
    j["max_origin_attempts"] = c.max_origin_attempts;
    j["checkpointed"] = c.checkpointed;
    return j;
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"task", "lr_min", "lr_max", "lr_ratio", "total_steps", "budget_cap", "fidelity_gate", "refresh_control",
                "detection_fraction", "weight_decay", "hyper_seed", "max_origin_attempts", "checkpointed"},
               "generation config");
    const auto task = sut::parse_task(field<std::string>(j, "task", "multiclass"));
    GenConfig c = GenConfig::defaults(task);
    // lr_min alone keeps the task's lr_max / lr_min ratio unless lr_ratio is given.
    const double ratio = field<double>(j, "lr_ratio", c.lr_max / c.lr_min);
    if (j.contains("lr_min") || j.contains("lr_ratio")) {
        c.lr_min = field<double>(j, "lr_min", c.lr_min);
        c.lr_max = ratio * c.lr_min;
    }
    c.lr_max = field<double>(j, "lr_max", c.lr_max);
    c.total_steps = field<std::size_t>(j, "total_steps", c.total_steps);
    c.budget_cap = field<std::size_t>(j, "budget_cap", c.budget_cap);
    if (j.contains("fidelity_gate") && !j.at("fidelity_gate").is_null()) c.fidelity_gate = field<double>(j, "fidelity_gate", 0.0);
    c.refresh_control = field<bool>(j, "refresh_control", c.refresh_control);
    c.detection_fraction = field<double>(j, "detection_fraction", c.detection_fraction);
    c.weight_decay = field<double>(j, "weight_decay", c.weight_decay);
    c.hyper_seed = field<std::uint64_t>(j, "hyper_seed", c.hyper_seed);
    c.max_origin_attempts = field<std::size_t>(j, "max_origin_attempts", c.max_origin_attempts);
    c.checkpointed = field<bool>(j, "checkpointed", c.checkpointed);
    c.validate();
    return c;
}

Tensor latent_noise(std::uint64_t seed) {
    Rng rng(split_seed(seed, 0x27));
    std::vector<double> v(ldm::kLatentDim);
    for (auto& x : v) x = rng.normal();
    return Tensor(ldm::latent_shape(1), std::move(v));
}

Shape control_input_shape(sut::TaskKind task) {
    switch (task) {
        case sut::TaskKind::multiclass: return {data::kShapeClasses};
        case sut::TaskKind::binary: return {data::kAttributes};
        case sut::TaskKind::detection: return {sut::kTopK, sut::kDetClasses};
    }
    return {};
}

Tensor control_input(const sut::Prediction& pred) {
    if (pred.kind != sut::TaskKind::detection) return pred.logits.detach();
    const auto anchors = sut::top5(pred);
    std::vector<double> v;
    for (std::size_t a : anchors) {
        const auto row = sut::detection_row(pred, a);
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({sut::kTopK, sut::kDetClasses}, std::move(v));
}

namespace {

bool origin_is_valid(const sut::Prediction& p, std::size_t cls) {
    switch (p.kind) {
        case sut::TaskKind::multiclass: return sut::argmax(p.logits.data()) == cls;
        case sut::TaskKind::binary: return true;
        case sut::TaskKind::detection:
            for (std::size_t a : sut::top5(p))
                if (sut::detection_class(p, a) == cls) return true;
            return false;
    }
    return false;
}

Tensor image_of(const Tensor& z0, const ldm::Autoencoder& ae) {
    return reshape(ldm::render(z0, ae), {1, data::kImageSize, data::kImageSize});
}

}  // namespace

Origin generate_origin(const ldm::Backbone& bb, const sut::Sut& sut, std::size_t cls, std::uint64_t seed,
                       std::size_t max_attempts, std::size_t attribute) {
    Origin o;
    o.seed = seed;
    o.attribute = attribute;
    o.cond = sut.kind() == sut::TaskKind::binary ? ldm::kAttributeCondition : cls;
    NoGradGuard ng;
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        o.attempts = attempt + 1;
        o.used_seed = seed + attempt;
        o.z_T = latent_noise(o.used_seed);
        o.image = image_of(bb.sample(o.z_T, o.cond, false), bb.autoencoder);
        o.pred = sut.predict(o.image);
        ++o.sut_evals;
        if (origin_is_valid(o.pred, cls)) {
            o.valid = true;
            return o;
        }
    }
    o.valid = false;
    return o;
}

TestCaseRecord run_adaptation(const Origin& origin, const GenConfig& cfg, const ldm::Backbone& bb,
                              const sut::Sut& sut) {
    cfg.validate();
    if (!origin.valid) throw std::invalid_argument("run_adaptation needs a valid origin");
    TestCaseRecord r;
    r.task = sut.kind();
    r.cond = origin.cond;
    r.attribute = origin.attribute;
    r.seed = origin.seed;
    r.used_seed = origin.used_seed;
    r.origin_image = origin.image;
    r.origin_pred = origin.pred;
    r.result_image = origin.image;
    r.result_pred = origin.pred;
    r.spec = sut::select_target(origin.pred, origin.attribute);
    r.sut_evals = origin.sut_evals;

    const auto t0 = std::chrono::steady_clock::now();
    hyper::HyperNet hp = hyper::HyperNet::init_from_backbone(bb.denoiser, control_input_shape(r.task), cfg.hyper_seed);
    AdamW opt(hp.trainable(), AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    OneCycleSchedule sched{cfg.lr_min, cfg.lr_max, cfg.total_steps, 0.3};
    Tensor ctrl_in = control_input(origin.pred);
    const Tensor origin_image = origin.image.detach();

    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        if (cfg.budget_cap > 0 && r.sut_evals >= cfg.budget_cap) break;
        Tape tape;
        const Tensor control = hp.projector(ctrl_in);
        const Tensor z0 = hyper::generate(bb, hp, origin.z_T, origin.cond, control, cfg.checkpointed);
        const Tensor image = image_of(z0, bb.autoencoder);
        const sut::Prediction pred = sut.predict(image);
        ++r.sut_evals;
        r.result_image = image.detach();
        r.result_pred = sut::Prediction{pred.kind, pred.logits.detach()};
        if (sut::is_misbehavior(origin.pred, pred, r.spec, cfg.detection_fraction)) {
            const bool gate_ok = !cfg.fidelity_gate || metrics::ms_ssim(origin_image, r.result_image) >= *cfg.fidelity_gate;
            if (gate_ok) {
                r.misbehavior = true;
                r.terminated_early = true;
                const auto terms = obj::combined_loss(origin_image, image, pred, r.spec);
                r.fidelity = terms.fidelity;
                r.behavior = terms.behavior;
                break;
            }
        }
        const auto terms = obj::combined_loss(origin_image, image, pred, r.spec);
        r.fidelity = terms.fidelity;
        r.behavior = terms.behavior;
        if (!std::isfinite(terms.total.item())) {
            r.valid = false;
            r.error = "non-finite loss at step " + std::to_string(step);
            break;
        }
        opt.zero_grad();
        tape.backward(terms.total);
        const double lr = onecycle_lr(step, sched);
        r.lr_trace.push_back(lr);
        opt.step(lr);
        ++r.steps;
        if (cfg.refresh_control) ctrl_in = control_input(pred);
    }
    if (!r.terminated_early && r.valid) {
        r.misbehavior = sut::is_misbehavior(origin.pred, r.result_pred, r.spec, cfg.detection_fraction);
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

TestCaseRecord run_noise_baseline(const Origin& origin, const NoiseBaselineConfig& cfg, const ldm::Backbone& bb,
                                  const sut::Sut& sut) {
    if (!origin.valid) throw std::invalid_argument("run_noise_baseline needs a valid origin");
    if (!(cfg.alpha > 0.0)) throw std::invalid_argument("baseline alpha must be positive");
    TestCaseRecord r;
    r.task = sut.kind();
    r.cond = origin.cond;
    r.attribute = origin.attribute;
    r.seed = origin.seed;
    r.used_seed = origin.used_seed;
    r.origin_image = r.result_image = origin.image;
    r.origin_pred = r.result_pred = origin.pred;
    r.spec = sut::select_target(origin.pred, origin.attribute);
    r.sut_evals = origin.sut_evals;

    const auto t0 = std::chrono::steady_clock::now();
    const drift::Population pop = drift::initial_population(ldm::kLatentDim, cfg.population, cfg.seed);
    const double delta0 = cfg.alpha * pop.range;
    double delta = delta0;
    Rng rng(split_seed(cfg.seed, origin.used_seed));
    std::vector<double> z(origin.z_T.data().begin(), origin.z_T.data().end());
    const Tensor origin_image = origin.image.detach();
    NoGradGuard ng;
    double best = obj::combined_loss(origin_image, origin_image, origin.pred, r.spec).total.item();
    while (r.sut_evals < cfg.max_evals) {
        const double sd = std::sqrt(delta);
        for (std::size_t j = 0; j < z.size(); ++j) z[j] = std::clamp(z[j] + sd * rng.normal(), pop.z_min[j], pop.z_max[j]);
        const Tensor image = image_of(bb.sample(Tensor(ldm::latent_shape(1), z), origin.cond, false), bb.autoencoder);
        const sut::Prediction pred = sut.predict(image);
        ++r.sut_evals;
        ++r.steps;
        r.result_image = image;
        r.result_pred = pred;
        const auto terms = obj::combined_loss(origin_image, image, pred, r.spec);
        r.fidelity = terms.fidelity;
        r.behavior = terms.behavior;
        if (sut::is_misbehavior(origin.pred, pred, r.spec, cfg.detection_fraction)) {
            r.misbehavior = r.terminated_early = true;
            break;
        }
        const double f = terms.total.item();
        if (f < best) {
            best = f;
            delta = delta0;
        } else {
            delta *= 2.0;
        }
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::vector<CaseSpec> make_cases(sut::TaskKind task, std::size_t count, std::uint64_t master_seed) {
    std::vector<CaseSpec> cases;
    for (std::size_t i = 0; i < count; ++i) {
        CaseSpec c;
        c.seed = split_seed(master_seed, i) >> 16;
        if (task == sut::TaskKind::binary) {
            c.cls = ldm::kAttributeCondition;
            c.attribute = i % data::kAttributes;
        } else {
            c.cls = i % data::kShapeClasses;
        }
        cases.push_back(c);
    }
    return cases;
}

std::vector<TestCaseRecord> batch_run(const std::vector<CaseSpec>& cases, const GenConfig& cfg,
                                      const ldm::Backbone& bb, const sut::Sut& sut, std::size_t workers) {
    cfg.validate();
    std::vector<TestCaseRecord> out(cases.size());
    auto run_one = [&](std::size_t i) {
        const CaseSpec& cs = cases[i];
        TestCaseRecord r;
        r.task = sut.kind();
        r.seed = cs.seed;
        r.attribute = cs.attribute;
        try {
            const Origin o = generate_origin(bb, sut, cs.cls, cs.seed, cfg.max_origin_attempts, cs.attribute);
            if (!o.valid) {
                r.task = sut.kind();
                r.cond = o.cond;
                r.seed = cs.seed;
                r.used_seed = o.used_seed;
                r.attribute = cs.attribute;
                r.sut_evals = o.sut_evals;
                r.origin_image = r.result_image = o.image;
                r.origin_pred = r.result_pred = o.pred;
                r.valid = false;
                r.error = "no valid origin after " + std::to_string(o.attempts) + " attempts";
            } else {
                r = run_adaptation(o, cfg, bb, sut);
            }
        } catch (const std::exception& e) {
            r.valid = false;
            r.error = e.what();
        }
        r.case_id = i;
        out[i] = std::move(r);
    };
    workers = std::max<std::size_t>(1, std::min(workers, cases.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < cases.size(); ++i) run_one(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < cases.size(); i = next++) run_one(i);
        });
    }
    for (auto& t : pool) t.join();
    return out;
}

}  // namespace hynea::gen
