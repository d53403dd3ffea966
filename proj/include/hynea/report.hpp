#pragma once

#include "hynea/genloop.hpp"
#include "hynea/metrics.hpp"
#include "hynea/suts.hpp"

#include "json.hpp"

#include <limits>
#include <string>
#include <vector>

namespace hynea::report {

/// Origin top-5 anchors as a 5x4 matrix of object logits, for origin or result.
metrics::Matrix detection_slice(const sut::Prediction& p, const std::vector<std::size_t>& anchors);
/// 5x1 softmax probability (over object classes) of each anchor's origin class.
metrics::Matrix origin_class_probability(const sut::Prediction& p, const sut::TargetSpec& spec);
/// True when none of `anchors` has `cls` as its class in `p`.
bool class_evicted(const sut::Prediction& p, const std::vector<std::size_t>& anchors, std::size_t cls);
/// Same, over the top-5 of `p` itself (re-ranked after the change).
bool class_evicted(const sut::Prediction& p, std::size_t cls);

/// Task label of a prediction: argmax (multiclass), sign of the attribute
/// logit (binary) or the class of the most confident detection.
std::size_t prediction_label(const sut::Prediction& p, std::size_t attribute);

struct MetricsReport {
    sut::TaskKind task = sut::TaskKind::multiclass;
    std::size_t cases = 0, valid = 0, misbehaviors = 0;
    double misbehavior_rate = 0.0;  // mr over valid cases
    metrics::MeanSd ms_ssim, sut_evals, steps, wall_seconds;
    static constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
    double escape = kNan;               // multiclass, binary (over misbehaving cases)
    double confidence_reduction = kNan; // detection
    double eviction_rate = kNan;          // detection, over the origin's top-5 anchors
    double eviction_rate_reranked = kNan; // detection, over the result's own top-5
    double diversity_origin = kNan, diversity_result = kNan;
    double trace_diff = kNan;  // mean over cases of the per-image feature-map trace difference
    double frechet = kNan;     // result vs origin embeddings
};

/// Aggregates valid records; embedding metrics need at least two valid records.
MetricsReport summarize(const std::vector<gen::TestCaseRecord>& records, const sut::Classifier& embedder);
nlohmann::json to_json(const MetricsReport& r);

/// One row per record, without wall time, so reruns are byte-identical.
void write_records_csv(const std::string& path, const std::vector<gen::TestCaseRecord>& records);
void write_timings_csv(const std::string& path, const std::vector<gen::TestCaseRecord>& records);
/// case_NNN_origin.pgm / case_NNN_result.pgm
void write_image_pairs(const std::string& dir, const std::vector<gen::TestCaseRecord>& records);

}  // namespace hynea::report
