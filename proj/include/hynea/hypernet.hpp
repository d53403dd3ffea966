#pragma once

#include "hynea/ldm.hpp"
#include "hynea/nn.hpp"

#include <array>
#include <cstdint>

namespace hynea::hyper {

/// Maps a SUT prediction of any supported rank onto the latent shape [4,8,8].
struct Projector {
    enum class Branch { linear, conv1d_linear, conv2d };

    Branch branch = Branch::linear;
    Shape input;
    nn::Linear expand;  // linear: C -> 256; conv1d_linear: D -> 64
    Tensor conv1d_w;    // [4, C, 3]
    Tensor conv1d_b;    // [4]
    nn::Conv2d conv;    // channel adaptation for spatial predictions

    /// Chooses the branch from the rank of `input` (the prediction without batch axis).
    static Projector create(const Shape& input, std::uint64_t seed);
    /// y shaped like `input` -> control signal [1,4,8,8]
    Tensor operator()(const Tensor& y) const;
    nn::NamedTensors parameters() const;
};

const char* branch_name(Projector::Branch b);

/// Trainable control branch: copies of the denoiser's input conv and residual
/// blocks, one zero-initialized 1x1 conv after each, and the control projector.
struct HyperNet {
    nn::Conv2d copy_in;
    std::array<ldm::ResBlock, 3> copies;
    std::array<nn::Conv2d, 4> zero;
    Projector projector;

    static HyperNet init_from_backbone(const ldm::Denoiser& den, const Shape& prediction_shape, std::uint64_t seed);
    nn::NamedTensors parameters() const;
    std::vector<Tensor> trainable() const { return nn::tensors_of(parameters()); }
    /// Analytic parameter count from the layer dimensions.
    static std::size_t expected_count(const Shape& prediction_shape);
};

/// Noise prediction of the frozen denoiser with the control branch added after
/// each block: h_j = F_j(h_{j-1}) + Z_j(g_j), g_j = G_j(g_{j-1}), g_0 = G_0(z + c).
Tensor modulated_eps(const ldm::Denoiser& den, const HyperNet& hp, const Tensor& z, std::size_t t, std::size_t cond,
                     const Tensor& control);

/// One deterministic sampler step with the modulated noise prediction.
Tensor modulated_step(const Tensor& z, std::size_t t, double abar_t, double abar_prev, std::size_t cond,
                      const Tensor& control, const ldm::Denoiser& den, const HyperNet& hp);

/// Full modulated generation of a latent from z_T.
Tensor generate(const ldm::Backbone& bb, const HyperNet& hp, const Tensor& z_T, std::size_t cond,
                const Tensor& control, bool checkpointed = true);

}  // namespace hynea::hyper
