#pragma once

#include "hynea/dataset.hpp"
#include "hynea/nn.hpp"
#include "hynea/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace hynea::sut {

enum class TaskKind { multiclass, binary, detection };

const char* task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

inline constexpr std::size_t kGrid = 6;
inline constexpr std::size_t kAnchors = kGrid * kGrid;
inline constexpr std::size_t kDetClasses = data::kShapeClasses;  // object classes
inline constexpr std::size_t kBackground = kDetClasses;          // extra logit column
inline constexpr std::size_t kTopK = 5;

/// Small conv net on 32x32 images: three conv stages, global 4x4 pooling, linear head.
struct Classifier {
    nn::Conv2d c1, c2, c3;
    nn::Linear fc;
    std::size_t outputs = 0;

    static Classifier create(std::size_t outputs, std::uint64_t seed);
    /// [N,16,8,8] activations of the last conv stage.
    Tensor feature_map(const Tensor& x) const;
    /// [N,256] flattened pooled features.
    Tensor embed(const Tensor& x) const;
    Tensor forward(const Tensor& x) const;
    nn::NamedTensors parameters() const;
};

/// Dense one-stage detector on 48x48 scenes: a 6x6 anchor grid with logits
/// over the four object classes plus background.
struct Detector {
    nn::Conv2d c1, c2, c3, c4, head;

    static Detector create(std::uint64_t seed);
    /// [N,1,48,48] -> [N,36,5]
    Tensor forward(const Tensor& x) const;
    nn::NamedTensors parameters() const;
};

struct Prediction {
    TaskKind kind = TaskKind::multiclass;
    Tensor logits;  // [C] | [K] | [36,5]
};

/// Index of the maximum; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);
/// Stable descending order.
std::vector<std::size_t> argsort_desc(std::span<const double> v);

/// Per-anchor confidence: largest softmax mass among the object classes.
std::vector<double> detection_confidences(const Prediction& p);
/// Per-anchor most likely object class.
std::size_t detection_class(const Prediction& p, std::size_t anchor);
/// Object-class logits of one anchor.
std::vector<double> detection_row(const Prediction& p, std::size_t anchor);
/// The five most confident anchors, descending, ties to the lower index.
std::vector<std::size_t> top5(const Prediction& p);

struct TargetSpec {
    TaskKind kind = TaskKind::multiclass;
    std::size_t origin_class = 0;
    std::size_t target_class = 0;
    std::size_t attribute = 0;
    bool target_positive = false;
    std::vector<std::size_t> anchors;         // origin top-5
    std::vector<std::size_t> anchor_origin;   // origin class per anchor
    std::vector<std::size_t> anchor_targets;  // second class per anchor
};

TargetSpec select_target(const Prediction& origin, std::size_t attribute = 0);

/// Fraction of the origin top-5 anchors whose class must change (default: all).
bool is_misbehavior(const Prediction& origin, const Prediction& now, const TargetSpec& spec,
                    double detection_fraction = 1.0);

class Sut {
public:
    Sut() = default;
    Sut(TaskKind kind, Classifier net);
    Sut(Detector det);

    TaskKind kind() const { return kind_; }
    /// image [1,32,32]; the detector sees it centered on a 48x48 canvas.
    Prediction predict(const Tensor& image) const;
    /// Raw batched logits for images of the SUT's native input size.
    Tensor logits(const Tensor& batch) const;
    nn::NamedTensors parameters() const;
    std::uint64_t weight_hash() const { return nn::hash(parameters()); }
    void freeze() { nn::freeze(parameters()); }
    const Classifier& classifier() const { return classifier_; }
    const Detector& detector() const { return detector_; }

private:
    TaskKind kind_ = TaskKind::multiclass;
    Classifier classifier_;
    Detector detector_;
};

/// Places a 32x32 image in the middle of a 48x48 canvas.
Tensor to_scene(const Tensor& image);

struct SutTrainConfig {
    std::size_t steps = 1500;
    std::size_t batch = 32;
    double lr = 3e-3;
    std::uint64_t seed = 21;
    std::size_t train_size = 2000;
    std::size_t heldout_size = 400;
};

struct SutReport {
    std::vector<double> curve;
    /// multiclass: accuracy; binary: per-attribute accuracy; detection: per-object top-1 accuracy
    std::vector<double> accuracy;
    double threshold = 0.0;
    bool passed = false;
};

Sut train_multiclass(const SutTrainConfig& cfg, SutReport& report);
Sut train_binary(const SutTrainConfig& cfg, SutReport& report);
Sut train_detector(const SutTrainConfig& cfg, SutReport& report);
/// Five-way classifier (shapes plus attribute images) used only for metrics.
Classifier train_embedder(const SutTrainConfig& cfg, SutReport& report);

/// Minimum overlap (pixels, per axis) of an object box with a cell for the
/// anchor to count as that object.
inline constexpr double kMinCellOverlap = 3.0;

/// Anchor whose cell holds the object's center.
std::size_t center_anchor(const data::SceneObject& o);
/// Dense labels of one scene: every anchor whose cell overlaps an object's
/// box (plus the center cell) carries that object's class, the rest background.
std::vector<std::size_t> anchor_labels(const data::SceneImage& scene);

}  // namespace hynea::sut
