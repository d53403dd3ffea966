#pragma once

#include "hynea/suts.hpp"
#include "hynea/tensor.hpp"

#include <span>

namespace hynea::obj {

/// sqrt of the summed squared difference over all entries.
Tensor frobenius_loss(const Tensor& a, const Tensor& b);

/// -y_t + logsumexp(y) for a logit vector y[C].
Tensor ce_loss(const Tensor& logits, std::size_t target);

/// Binary cross-entropy with logits, softplus form: softplus(y) - t*y.
Tensor bce_logits_loss(const Tensor& logit, bool target);

/// Mean over rows of ce_loss for a [D, C] logit matrix.
Tensor mean_ce_loss(const Tensor& logits, std::span<const std::size_t> targets);

struct LossTerms {
    Tensor total;
    double fidelity = 0.0;
    double behavior = 0.0;
};

/// Visual-fidelity term plus the task's behavior-steering term, unit weights.
LossTerms combined_loss(const Tensor& origin_image, const Tensor& generated_image, const sut::Prediction& pred,
                        const sut::TargetSpec& spec);

/// The behavior-steering term alone.
Tensor behavior_loss(const sut::Prediction& pred, const sut::TargetSpec& spec);

}  // namespace hynea::obj
