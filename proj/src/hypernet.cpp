#include "hynea/hypernet.hpp"

#include "hynea/rng.hpp"

#include <stdexcept>

namespace hynea::hyper {

namespace {

constexpr std::size_t kProjectorKernel = 3;
constexpr double kProjectorGain = 0.1;

Tensor small_normal(Shape shape, Rng& rng, double stddev) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

}  // namespace

const char* branch_name(Projector::Branch b) {
    switch (b) {
        case Projector::Branch::linear: return "linear";
        case Projector::Branch::conv1d_linear: return "conv1d+linear";
        case Projector::Branch::conv2d: return "conv2d";
    }
    return "?";
}

Projector Projector::create(const Shape& input, std::uint64_t seed) {
    constexpr std::size_t latent_rank = 3;
    if (input.empty() || input.size() > latent_rank) {
        throw ShapeError("control projector: prediction rank " + std::to_string(input.size()) + " unsupported");
    }
    Rng rng(split_seed(seed, 0x9c));
    Projector p;
    p.input = input;
    if (input.size() == latent_rank) {
        const std::size_t hw = input[1] * input[2];
        if (ldm::kLatentDim % hw != 0) throw ShapeError("control projector: spatial size does not tile the latent");
        p.branch = Branch::conv2d;
        p.conv = nn::Conv2d(input[0], ldm::kLatentDim / hw, 3, rng);
        for (auto& w : p.conv.weight.mutable_data()) w *= kProjectorGain;
    } else if (latent_rank - input.size() == 1) {
        // [D, C]: C channels convolved along D, then D expanded to the 8x8 plane.
        p.branch = Branch::conv1d_linear;
        const std::size_t d = input[0], c = input[1];
        p.conv1d_w = small_normal({ldm::kLatentChannels, c, kProjectorKernel}, rng,
                                  kProjectorGain / std::sqrt(static_cast<double>(c * kProjectorKernel)));
        p.conv1d_b = Tensor::zeros({ldm::kLatentChannels});
        p.conv1d_b.set_requires_grad(true);
        p.expand = nn::Linear(d, ldm::kLatentSize * ldm::kLatentSize, rng, kProjectorGain);
    } else {
        p.branch = Branch::linear;
        p.expand = nn::Linear(input[0], ldm::kLatentDim, rng, kProjectorGain);
    }
    return p;
}

Tensor Projector::operator()(const Tensor& y) const {
    if (y.shape() != input) {
        throw ShapeError("control projector built for " + to_string(input) + ", got " + to_string(y.shape()));
    }
    Tensor c;
    switch (branch) {
        case Branch::conv2d: c = conv(y); break;
        case Branch::conv1d_linear: {
            Tensor h = conv1d(transpose(y), conv1d_w, Padding::same) + reshape(conv1d_b, {ldm::kLatentChannels, 1});
            c = expand(h);
            break;
        }
        case Branch::linear: c = expand(reshape(y, {1, input[0]})); break;
    }
    return reshape(reshape(c, {c.size()}), ldm::latent_shape(1));
}

nn::NamedTensors Projector::parameters() const {
    nn::NamedTensors out;
    switch (branch) {
        case Branch::conv2d: conv.append(out, "projector.conv"); break;
        case Branch::conv1d_linear:
            out.emplace_back("projector.conv1d.weight", conv1d_w);
            out.emplace_back("projector.conv1d.bias", conv1d_b);
            expand.append(out, "projector.expand");
            break;
        case Branch::linear: expand.append(out, "projector.expand"); break;
    }
    return out;
}

HyperNet HyperNet::init_from_backbone(const ldm::Denoiser& den, const Shape& prediction_shape, std::uint64_t seed) {
    if (!den.frozen) throw std::logic_error("HyperNet must be initialized from a frozen denoiser");
    HyperNet hp;
    hp.copy_in = den.conv_in.copy();
    for (std::size_t j = 0; j < hp.copies.size(); ++j) hp.copies[j] = den.blocks[j].copy();
    for (auto& z : hp.zero) z = nn::Conv2d::zeros(ldm::Denoiser::kWidth, ldm::Denoiser::kWidth, 1);
    hp.projector = Projector::create(prediction_shape, seed);
    return hp;
}

nn::NamedTensors HyperNet::parameters() const {
    nn::NamedTensors out;
    copy_in.append(out, "copy_in");
    for (std::size_t j = 0; j < copies.size(); ++j) copies[j].append(out, "copy" + std::to_string(j));
    for (std::size_t j = 0; j < zero.size(); ++j) zero[j].append(out, "zero" + std::to_string(j));
    for (auto& p : projector.parameters()) out.push_back(p);
    return out;
}

std::size_t HyperNet::expected_count(const Shape& pred) {
    constexpr std::size_t W = ldm::Denoiser::kWidth, E = ldm::Denoiser::kEmbed, L = ldm::kLatentChannels;
    const std::size_t conv_in = W * L * 9 + W;
    const std::size_t block = 2 * (W * W * 9 + W) + (E * W + W);
    const std::size_t zeros = 4 * (W * W + W);
    std::size_t proj = 0;
    if (pred.size() == 1) {
        proj = pred[0] * ldm::kLatentDim + ldm::kLatentDim;
    } else if (pred.size() == 2) {
        proj = L * pred[1] * kProjectorKernel + L + pred[0] * 64 + 64;
    } else if (pred.size() == 3) {
        const std::size_t out = ldm::kLatentDim / (pred[1] * pred[2]);
        proj = out * pred[0] * 9 + out;
    }
    return conv_in + 3 * block + zeros + proj;
}

Tensor modulated_eps(const ldm::Denoiser& den, const HyperNet& hp, const Tensor& z, std::size_t t, std::size_t cond,
                     const Tensor& control) {
    if (control.shape() != z.shape()) {
        throw ShapeError("control " + to_string(control.shape()) + " does not match latent " + to_string(z.shape()));
    }
    const std::vector<std::size_t> ts(z.dim(0), t), cs(z.dim(0), cond);
    const Tensor emb = den.embedding(ts, cs);
    Tensor h = den.conv_in(z);
    Tensor g = hp.copy_in(z + control);
    h = h + hp.zero[0](g);
    for (std::size_t j = 0; j < den.blocks.size(); ++j) {
        h = den.blocks[j](h, emb);
        g = hp.copies[j](g, emb);
        h = h + hp.zero[j + 1](g);
    }
    return den.head(h);
}

Tensor modulated_step(const Tensor& z, std::size_t t, double abar_t, double abar_prev, std::size_t cond,
                      const Tensor& control, const ldm::Denoiser& den, const HyperNet& hp) {
    return ldm::ddim_step(z, modulated_eps(den, hp, z, t, cond, control), abar_t, abar_prev);
}

Tensor generate(const ldm::Backbone& bb, const HyperNet& hp, const Tensor& z_T, std::size_t cond,
                const Tensor& control, bool checkpointed) {
    const ldm::EpsFn eps = [&bb, &hp, cond, control](const Tensor& z, std::size_t t) {
        return modulated_eps(bb.denoiser, hp, z, t, cond, control);
    };
    return ldm::ddim_sample(z_T, eps, bb.schedule, bb.sampler, checkpointed);
}

}  // namespace hynea::hyper
