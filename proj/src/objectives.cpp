#include "hynea/objectives.hpp"

#include <stdexcept>

namespace hynea::obj {

Tensor frobenius_loss(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("frobenius_loss: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    return sqrt(sum(square(a - b)));
}

Tensor ce_loss(const Tensor& logits, std::size_t target) {
    if (logits.rank() != 1) throw ShapeError("ce_loss expects a logit vector");
    if (target >= logits.size()) throw std::out_of_range("ce_loss: target class out of range");
    return logsumexp(logits, 0) - element(logits, target);
}

Tensor bce_logits_loss(const Tensor& logit, bool target) {
    if (logit.size() != 1) throw ShapeError("bce_logits_loss expects a single logit");
    const Tensor y = reshape(logit, {});
    return target ? softplus(neg(y)) : softplus(y);
}

Tensor mean_ce_loss(const Tensor& logits, std::span<const std::size_t> targets) {
    if (logits.rank() != 2) throw ShapeError("mean_ce_loss expects [D, C] logits");
    const std::size_t d = logits.dim(0), c = logits.dim(1);
    if (targets.size() != d) throw ShapeError("mean_ce_loss: one target per row required");
    std::vector<double> onehot(d * c, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        if (targets[i] >= c) throw std::out_of_range("mean_ce_loss: target class out of range");
        onehot[i * c + targets[i]] = 1.0;
    }
    const Tensor picked = sum(logits * Tensor({d, c}, std::move(onehot)));
    return (sum(logsumexp(logits, 1)) - picked) * (1.0 / static_cast<double>(d));
}

Tensor behavior_loss(const sut::Prediction& pred, const sut::TargetSpec& spec) {
    if (pred.kind != spec.kind) throw std::invalid_argument("prediction and target spec are for different tasks");
    switch (spec.kind) {
        case sut::TaskKind::multiclass: return ce_loss(pred.logits, spec.target_class);
        case sut::TaskKind::binary:
            return bce_logits_loss(element(pred.logits, spec.attribute), spec.target_positive);
        case sut::TaskKind::detection: {
            // Object-class logits of the origin's top-5 anchors.
            std::vector<std::size_t> cols(sut::kDetClasses);
            for (std::size_t k = 0; k < cols.size(); ++k) cols[k] = k;
            const Tensor rows = index_select(index_select(pred.logits, 0, spec.anchors), 1, cols);
            return mean_ce_loss(rows, spec.anchor_targets);
        }
    }
    throw std::logic_error("unknown task");
}

LossTerms combined_loss(const Tensor& origin_image, const Tensor& generated_image, const sut::Prediction& pred,
                        const sut::TargetSpec& spec) {
    const Tensor fid = frobenius_loss(generated_image, origin_image);
    const Tensor beh = behavior_loss(pred, spec);
    return {fid + beh, fid.item(), beh.item()};
}

}  // namespace hynea::obj
