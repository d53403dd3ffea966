#include "doctest.h"
#include "helpers.hpp"
#include "toy_stack.hpp"

#include "hynea/objectives.hpp"
#include "hynea/optim.hpp"

using namespace hynea;
using namespace hynea::hyper;

namespace {

bool is_zero_layer(const std::string& name) { return name.rfind("zero", 0) == 0; }

double grad_norm(const Tensor& t) {
    if (!t.has_grad()) return 0.0;
    double s = 0.0;
    for (double g : t.grad()) s += g * g;
    return std::sqrt(s);
}

}  // namespace

TEST_SUITE("hypernet") {

TEST_CASE("projector branch follows the prediction rank") {
    CHECK(Projector::create({4}, 1).branch == Projector::Branch::linear);
    CHECK(Projector::create({5, 4}, 1).branch == Projector::Branch::conv1d_linear);
    CHECK(Projector::create({3, 8, 8}, 1).branch == Projector::Branch::conv2d);
    CHECK_THROWS_AS(Projector::create({}, 1), ShapeError);
    CHECK_THROWS_AS(Projector::create({1, 2, 3, 4}, 1), ShapeError);
    Rng rng(1);
    for (const Shape& s : {Shape{4}, Shape{6}, Shape{5, 4}, Shape{2, 4, 4}}) {
        const auto p = Projector::create(s, 2);
        CHECK(p(test::randn(s, rng)).shape() == ldm::latent_shape());
    }
}

TEST_CASE("parameter count matches the layer dimensions") {
    auto bb = test::toy_backbone();
    for (const Shape& s : {Shape{4}, Shape{6}, Shape{5, 4}, Shape{4, 8, 8}}) {
        const auto hp = HyperNet::init_from_backbone(bb.denoiser, s, 3);
        CHECK(nn::parameter_count(hp.parameters()) == HyperNet::expected_count(s));
    }
    auto unfrozen = ldm::Denoiser::create(1);
    CHECK_THROWS(HyperNet::init_from_backbone(unfrozen, {4}, 1));
}

TEST_CASE("zero-initialized control reproduces the backbone bit for bit") {
    auto bb = test::toy_backbone();
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const std::size_t cond = seed % ldm::kConditions;
        const Tensor zT = gen::latent_noise(seed);
        const auto hp = HyperNet::init_from_backbone(bb.denoiser, {4}, seed);
        Rng rng(seed);
        const Tensor control = hp.projector(test::randn({4}, rng, 5.0));
        CHECK(test::same_bits(generate(bb, hp, zT, cond, control, false), bb.sample(zT, cond, false)));
    }
}

TEST_CASE("control reaches the output only through the zero layers") {
    auto bb = test::toy_backbone(2);
    auto hp = HyperNet::init_from_backbone(bb.denoiser, {4}, 5);
    const Tensor zT = gen::latent_noise(5);
    const auto sut = test::toy_sut(sut::TaskKind::multiclass);
    const Tensor origin = test::image_of(bb.sample(zT, 1), bb.autoencoder);
    const auto spec = sut::select_target(sut.predict(origin));
    Rng rng(6);
    const Tensor y = test::randn({4}, rng);

    auto backward_once = [&] {
        for (auto& [_, t] : hp.parameters()) t.zero_grad();
        Tape tape;
        const Tensor img = test::image_of(generate(bb, hp, zT, 1, hp.projector(y)), bb.autoencoder);
        tape.backward(obj::combined_loss(origin, img, sut.predict(img), spec).total);
    };
    backward_once();
    for (auto& [name, t] : bb.denoiser.parameters()) CHECK_FALSE(t.has_grad());
    for (auto& [name, t] : bb.autoencoder.parameters()) CHECK_FALSE(t.has_grad());
    for (auto& [name, t] : sut.parameters()) CHECK_FALSE(t.has_grad());
    std::size_t live = 0;
    for (auto& [name, t] : hp.parameters()) {
        INFO(name);
        if (is_zero_layer(name)) {
            live += grad_norm(t) > 0.0;
        } else {
            CHECK(grad_norm(t) == 0.0);
        }
    }
    CHECK(live > 0);

    // One optimizer step on the zero layers opens the path to the rest.
    AdamW opt(hp.trainable());
    opt.step(1e-3);
    backward_once();
    double copy_grad = 0.0;
    for (auto& [name, t] : hp.parameters())
        if (!is_zero_layer(name)) copy_grad += grad_norm(t);
    CHECK(copy_grad > 0.0);
}

TEST_CASE("composed two-step generation loss passes the gradient check") {
    auto bb = test::toy_backbone(2);
    auto hp = HyperNet::init_from_backbone(bb.denoiser, {4}, 7);
    Rng rng(8);
    for (auto& z : hp.zero) {
        for (auto& w : z.weight.mutable_data()) w = 0.05 * rng.normal();
        for (auto& b : z.bias.mutable_data()) b = 0.01 * rng.normal();
    }
    const Tensor zT = gen::latent_noise(8);
    const auto sut = test::toy_sut(sut::TaskKind::multiclass);
    const Tensor origin = test::image_of(bb.sample(zT, 2), bb.autoencoder);
    const auto spec = sut::select_target(sut.predict(origin));
    const Tensor y = test::randn({4}, rng);
    for (bool ckpt : {false, true}) {
        auto f = [&] {
            const Tensor img = test::image_of(generate(bb, hp, zT, 2, hp.projector(y), ckpt), bb.autoencoder);
            return obj::combined_loss(origin, img, sut.predict(img), spec).total;
        };
        CHECK(grad_check(f, hp.trainable(), 1e-5, 4) < 1e-4);
    }
}

}  // TEST_SUITE
