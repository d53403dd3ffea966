#include "doctest.h"
#include "helpers.hpp"
#include "toy_stack.hpp"

#include <cmath>

using namespace hynea;
using namespace hynea::ldm;

TEST_SUITE("ldm") {

TEST_CASE("linear schedule matches the cumulative product") {
    const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
    CHECK(s.abar(0) == 1.0);
    double prod = 1.0;
    for (std::size_t t = 1; t <= 1000; ++t) {
        const double beta = 1e-4 + (0.02 - 1e-4) * double(t - 1) / 999.0;
        CHECK(s.beta[t] == doctest::Approx(beta).epsilon(1e-12));
        prod *= 1.0 - beta;
        CHECK(s.abar(t) == doctest::Approx(prod).epsilon(1e-10));
    }
    CHECK(s.abar(1000) < 1e-4);
}

TEST_CASE("ddim step with the true noise recovers the clean latent") {
    Rng rng(1);
    const auto s = NoiseSchedule::linear();
    for (std::size_t t : {1ul, 125ul, 500ul, 1000ul}) {
        Tensor z0 = test::randn(latent_shape(), rng), noise = test::randn(latent_shape(), rng);
        Tensor zt = forward_diffuse(z0, t, noise, s);
        for (std::size_t i = 0; i < z0.size(); i += 17)
            CHECK(zt[i] == doctest::Approx(std::sqrt(s.abar(t)) * z0[i] + std::sqrt(1 - s.abar(t)) * noise[i]));
        Tensor back = ddim_step(zt, noise, s.abar(t), 1.0);
        for (std::size_t i = 0; i < z0.size(); ++i) CHECK(back[i] == doctest::Approx(z0[i]).epsilon(1e-8));
        // Intermediate targets land on the same trajectory.
        Tensor mid = ddim_step(zt, noise, s.abar(t), s.abar(t / 2));
        Tensor direct = forward_diffuse(z0, std::max<std::size_t>(t / 2, 1), noise, s);
        if (t / 2 >= 1)
            for (std::size_t i = 0; i < z0.size(); i += 13) CHECK(mid[i] == doctest::Approx(direct[i]).epsilon(1e-8));
    }
}

TEST_CASE("uniform sampler timesteps") {
    const auto c = SamplerConfig::uniform(1000, 8);
    CHECK(c.timesteps == std::vector<std::size_t>{1000, 875, 750, 625, 500, 375, 250, 125});
    const auto s = NoiseSchedule::linear();
    CHECK_NOTHROW(c.validate(s));
    CHECK_THROWS(SamplerConfig{{500, 500}}.validate(s));
    CHECK_THROWS(SamplerConfig{{1001, 10}}.validate(s));
    CHECK_THROWS(SamplerConfig::uniform(1000, 1));
}

TEST_CASE("network shapes and output ranges") {
    auto bb = test::toy_backbone();
    Rng rng(2);
    Tensor x = test::uniform({2, 1, 32, 32}, rng, 0.0, 1.0);
    Tensor z = bb.autoencoder.encode(x);
    CHECK(z.shape() == latent_shape(2));
    Tensor y = bb.autoencoder.decode(z);
    CHECK(y.shape() == Shape{2, 1, 32, 32});
    for (double v : y.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    const std::size_t t[] = {10, 900}, c[] = {0, 4};
    CHECK(bb.denoiser.forward(z, t, c).shape() == latent_shape(2));
    CHECK(timestep_features(t).shape() == Shape{2, Denoiser::kTimeFeatures});
}

TEST_CASE("denoiser gradient check on sampled coordinates") {
    auto den = Denoiser::create(5);
    Rng rng(3);
    Tensor z = test::leaf(test::randn(latent_shape(), rng));
    const std::size_t t[] = {400}, c[] = {2};
    auto f = [&] { return sum(square(den.forward(z, t, c))); };
    CHECK(grad_check(f, {z}, 1e-5, 24) < 1e-4);
    auto named = den.parameters();
    auto params = nn::tensors_of(named);
    CHECK(grad_check(f, params, 1e-5, 3) < 1e-4);
}

TEST_CASE("checkpointed and plain sampling agree bitwise") {
    auto bb = test::toy_backbone(4);
    Rng rng(4);
    const Tensor zT = test::randn(latent_shape(), rng);
    CHECK(test::same_bits(bb.sample(zT, 1, true), bb.sample(zT, 1, false)));
    CHECK_FALSE(test::same_bits(bb.sample(zT, 1), bb.sample(zT, 2)));
}

TEST_CASE("checkpoint round trip keeps weights and hash") {
    auto ae = Autoencoder::create(9);
    ae.latent_scale = 0.7;
    const auto dir = std::filesystem::temp_directory_path() / "hynea_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string stem = (dir / "ae").string();
    nn::save_checkpoint(stem, {{"latent_scale", ae.latent_scale}}, ae.parameters());
    auto other = Autoencoder::create(10);
    CHECK(nn::hash(other.parameters()) != nn::hash(ae.parameters()));
    const auto header = nn::load_checkpoint(stem, other.parameters());
    CHECK(header.at("latent_scale").get<double>() == 0.7);
    CHECK(nn::hash(other.parameters()) == nn::hash(ae.parameters()));
    auto den = Denoiser::create(1);
    CHECK_THROWS(nn::load_checkpoint(stem, den.parameters()));
    std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
