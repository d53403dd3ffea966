#pragma once

#include "hynea/nn.hpp"
#include "hynea/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace hynea::ldm {

inline constexpr std::size_t kLatentChannels = 4;
inline constexpr std::size_t kLatentSize = 8;
inline constexpr std::size_t kLatentDim = kLatentChannels * kLatentSize * kLatentSize;
// Four shape classes plus one condition for the attribute (face-proxy) images.
inline constexpr std::size_t kConditions = 5;
inline constexpr std::size_t kAttributeCondition = 4;

Shape latent_shape(std::size_t batch = 1);

/// Linear beta schedule; index 0 is the clean signal (alpha_bar = 1).
struct NoiseSchedule {
    std::size_t steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::vector<double> beta;       // [0..steps], beta[0] unused
    std::vector<double> alpha_bar;  // [0..steps]

    static NoiseSchedule linear(std::size_t steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);
    double abar(std::size_t t) const;
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) noise, t in [1, T].
Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& noise, const NoiseSchedule& sched);

struct SamplerConfig {
    std::vector<std::size_t> timesteps;  // strictly decreasing, each in [1, T]

    static SamplerConfig uniform(std::size_t train_steps, std::size_t inference_steps = 8);
    void validate(const NoiseSchedule& sched) const;
};

struct Autoencoder {
    nn::Conv2d enc1, enc2, enc3;
    nn::Conv2d dec1, dec2, dec3, dec4;
    double latent_scale = 1.0;
    bool frozen = false;

    static Autoencoder create(std::uint64_t seed);
    /// [N,1,32,32] -> normalized latent [N,4,8,8]
    Tensor encode(const Tensor& x) const;
    /// normalized latent -> image in (0,1), before clamping
    Tensor decode(const Tensor& z) const;
    nn::NamedTensors parameters() const;
    void freeze();
};

struct ResBlock {
    nn::Conv2d conv1, conv2;
    nn::Linear proj;

    Tensor operator()(const Tensor& h, const Tensor& emb) const;
    void append(nn::NamedTensors& out, const std::string& prefix) const;
    ResBlock copy() const;
};

/// epsilon-prediction network: conv_in, three residual blocks of width 32 with
/// timestep and class embeddings, conv_out.
struct Denoiser {
    static constexpr std::size_t kWidth = 32;
    static constexpr std::size_t kEmbed = 64;
    static constexpr std::size_t kTimeFeatures = 32;

    nn::Linear time1, time2;
    Tensor class_table;  // [kConditions, kEmbed]
    nn::Conv2d conv_in;
    std::array<ResBlock, 3> blocks;
    nn::Conv2d conv_out;
    bool frozen = false;

    static Denoiser create(std::uint64_t seed);
    Tensor embedding(std::span<const std::size_t> t, std::span<const std::size_t> cond) const;
    Tensor head(const Tensor& h) const;
    Tensor forward(const Tensor& z, std::span<const std::size_t> t, std::span<const std::size_t> cond) const;
    nn::NamedTensors parameters() const;
    void freeze();
};

/// Sinusoidal features [N, kTimeFeatures].
Tensor timestep_features(std::span<const std::size_t> t);

using EpsFn = std::function<Tensor(const Tensor& z, std::size_t t)>;

/// Deterministic (eta = 0) update from t to t_prev given the predicted noise.
Tensor ddim_step(const Tensor& z, const Tensor& eps, double abar_t, double abar_prev);

/// Unrolled deterministic sampler. With `checkpointed`, every step is a
/// recompute root for the backward pass.
Tensor ddim_sample(const Tensor& z_T, const EpsFn& eps, const NoiseSchedule& sched, const SamplerConfig& sampler,
                   bool checkpointed = true);

/// Decoded image clamped to [0,1].
Tensor render(const Tensor& z0, const Autoencoder& ae);

struct Backbone {
    Autoencoder autoencoder;
    Denoiser denoiser;
    NoiseSchedule schedule = NoiseSchedule::linear();
    SamplerConfig sampler = SamplerConfig::uniform(1000, 8);

    EpsFn plain_eps(std::size_t cond) const;
    /// Backbone-only generation of a latent for condition `cond`.
    Tensor sample(const Tensor& z_T, std::size_t cond, bool checkpointed = true) const;
    std::uint64_t weight_hash() const;
};

struct TrainReport {
    std::vector<double> curve;
    double heldout_mse = 0.0;
    bool converged = true;
};

struct AutoencoderTrainConfig {
    std::size_t steps = 2000;
    std::size_t batch = 16;
    double lr = 2e-3;
    std::uint64_t seed = 7;
    double mse_threshold = 0.01;
};

/// Trains, computes the latent scale on the training set and freezes.
Autoencoder train_autoencoder(const std::vector<Tensor>& train, const std::vector<Tensor>& heldout,
                              const AutoencoderTrainConfig& cfg, TrainReport& report);

struct DenoiserTrainConfig {
    std::size_t steps = 4000;
    std::size_t batch = 32;
    double lr = 2e-3;
    std::uint64_t seed = 11;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Minimizes E||eps - eps_theta(z_t, t, y)||^2 over labeled latents, then freezes.
Denoiser train_denoiser(const Autoencoder& ae, const std::vector<Tensor>& images,
                        const std::vector<std::size_t>& conditions, const NoiseSchedule& sched,
                        const DenoiserTrainConfig& cfg, TrainReport& report);

}  // namespace hynea::ldm
