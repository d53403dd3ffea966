#pragma once

#include "hynea/hypernet.hpp"
#include "hynea/ldm.hpp"
#include "hynea/objectives.hpp"
#include "hynea/suts.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hynea::gen {

struct GenConfig {
    sut::TaskKind task = sut::TaskKind::multiclass;
    double lr_min = 1e-6;
    double lr_max = 1e-4;
    std::size_t total_steps = 2500;
    std::size_t budget_cap = 0;  // 0: no cap beyond total_steps
    std::optional<double> fidelity_gate;
    bool refresh_control = false;
    double detection_fraction = 1.0;
    double weight_decay = 0.01;
    std::uint64_t hyper_seed = 1234;
    std::size_t max_origin_attempts = 20;
    bool checkpointed = true;

    /// Per-task learning-rate ranges: 1e-6..1e-4, 1e-5..4e-4, 1e-4..4e-3.
    static GenConfig defaults(sut::TaskKind task);
    void validate() const;
};

nlohmann::json to_json(const GenConfig& c);
GenConfig gen_config_from_json(const nlohmann::json& j);

struct Origin {
    std::size_t cond = 0;       // backbone condition
    std::size_t attribute = 0;  // binary task: targeted attribute
    std::uint64_t seed = 0;     // requested seed
    std::uint64_t used_seed = 0;
    std::size_t attempts = 0;
    std::size_t sut_evals = 0;
    Tensor z_T;
    Tensor image;  // [1,32,32]
    sut::Prediction pred;
    bool valid = false;
};

/// Draws z_T from the seed, renders the pure backbone output and checks that
/// the SUT sees the conditioned class; resamples with the next seed on failure.
Origin generate_origin(const ldm::Backbone& bb, const sut::Sut& sut, std::size_t cls, std::uint64_t seed,
                       std::size_t max_attempts = 20, std::size_t attribute = 0);

/// z_T for a given seed.
Tensor latent_noise(std::uint64_t seed);

/// Input of the control projector for a prediction: the logit vector, or the
/// object-class logits of the top-5 anchors for detection.
Tensor control_input(const sut::Prediction& pred);
Shape control_input_shape(sut::TaskKind task);

struct TestCaseRecord {
    std::size_t case_id = 0;
    sut::TaskKind task = sut::TaskKind::multiclass;
    std::size_t cond = 0;
    std::size_t attribute = 0;
    std::uint64_t seed = 0;
    std::uint64_t used_seed = 0;
    Tensor origin_image, result_image;
    sut::Prediction origin_pred, result_pred;
    sut::TargetSpec spec;
    std::size_t steps = 0;  // optimizer updates applied
    std::size_t sut_evals = 0;
    double wall_seconds = 0.0;
    bool terminated_early = false;
    bool misbehavior = false;
    double fidelity = 0.0;
    double behavior = 0.0;
    bool valid = true;
    std::string error;
    std::vector<double> lr_trace;
};

/// Per-instance adaptation of a fresh HyperNet until the SUT misbehaves or the
/// step budget runs out.
TestCaseRecord run_adaptation(const Origin& origin, const GenConfig& cfg, const ldm::Backbone& bb,
                              const sut::Sut& sut);

struct CaseSpec {
    std::size_t cls = 0;
    std::uint64_t seed = 0;
    std::size_t attribute = 0;
};

/// `count` cases cycling through the classes (attributes for binary), seeds split from master_seed.
std::vector<CaseSpec> make_cases(sut::TaskKind task, std::size_t count, std::uint64_t master_seed);

std::vector<TestCaseRecord> batch_run(const std::vector<CaseSpec>& cases, const GenConfig& cfg,
                                      const ldm::Backbone& bb, const sut::Sut& sut, std::size_t workers = 1);

/// Clipped Gaussian mutation of z_T with fitness-coupled step size: the noise
/// variance doubles whenever the combined loss fails to improve and resets to
/// alpha * R otherwise. Comparison point for the adapted generator.
struct NoiseBaselineConfig {
    double alpha = 1e-3;
    std::size_t max_evals = 2500;  // including the origin evaluations
    std::size_t population = 1000;
    std::uint64_t seed = 99;
    double detection_fraction = 1.0;
};

TestCaseRecord run_noise_baseline(const Origin& origin, const NoiseBaselineConfig& cfg, const ldm::Backbone& bb,
                                  const sut::Sut& sut);

}  // namespace hynea::gen
