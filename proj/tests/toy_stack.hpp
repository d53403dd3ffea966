#pragma once

// Untrained but frozen networks with the production shapes: enough for
// structural properties that do not depend on what the weights learned.

#include "hynea/genloop.hpp"
#include "hynea/hypernet.hpp"
#include "hynea/ldm.hpp"
#include "hynea/suts.hpp"

namespace hynea::test {

inline ldm::Backbone toy_backbone(std::size_t sampler_steps = 8) {
    ldm::Backbone bb{ldm::Autoencoder::create(7), ldm::Denoiser::create(11)};
    bb.autoencoder.freeze();
    bb.denoiser.freeze();
    bb.sampler = ldm::SamplerConfig::uniform(bb.schedule.steps, sampler_steps);
    return bb;
}

inline sut::Sut toy_sut(sut::TaskKind kind) {
    sut::Sut s = kind == sut::TaskKind::detection
                     ? sut::Sut(sut::Detector::create(3))
                     : sut::Sut(kind, sut::Classifier::create(kind == sut::TaskKind::binary ? 6 : 4, 3));
    s.freeze();
    return s;
}

inline Tensor image_of(const Tensor& z0, const ldm::Autoencoder& ae) {
    return reshape(ldm::render(z0, ae), {1, data::kImageSize, data::kImageSize});
}

}  // namespace hynea::test
