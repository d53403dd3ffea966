#include "hynea/suts.hpp"

#include "hynea/optim.hpp"
#include "hynea/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hynea::sut {

const char* task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::multiclass: return "multiclass";
        case TaskKind::binary: return "binary";
        case TaskKind::detection: return "detection";
    }
    return "?";
}

TaskKind parse_task(const std::string& name) {
    if (name == "multiclass") return TaskKind::multiclass;
    if (name == "binary") return TaskKind::binary;
    if (name == "detection") return TaskKind::detection;
    throw std::invalid_argument("unknown task '" + name + "'");
}

Classifier Classifier::create(std::size_t outputs, std::uint64_t seed) {
    Rng rng(split_seed(seed, 0xc1));
    Classifier c;
    c.c1 = nn::Conv2d(1, 8, 3, rng);
    c.c2 = nn::Conv2d(8, 16, 3, rng);
    c.c3 = nn::Conv2d(16, 16, 3, rng);
    c.fc = nn::Linear(256, outputs, rng);
    c.outputs = outputs;
    return c;
}

Tensor Classifier::feature_map(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != data::kImageSize || x.dim(3) != data::kImageSize) {
        throw ShapeError("classifier expects [N,1,32,32], got " + to_string(x.shape()));
    }
    Tensor h = avg_pool2(silu(c1(x)));
    h = avg_pool2(silu(c2(h)));
    return silu(c3(h));
}

Tensor Classifier::embed(const Tensor& x) const {
    const Tensor f = avg_pool2(feature_map(x));
    return reshape(f, {f.dim(0), 256});
}

Tensor Classifier::forward(const Tensor& x) const { return fc(embed(x)); }

nn::NamedTensors Classifier::parameters() const {
    nn::NamedTensors out;
    c1.append(out, "c1");
    c2.append(out, "c2");
    c3.append(out, "c3");
    fc.append(out, "fc");
    return out;
}

Detector Detector::create(std::uint64_t seed) {
    Rng rng(split_seed(seed, 0xd7));
    Detector d;
    d.c1 = nn::Conv2d(1, 8, 3, rng);
    d.c2 = nn::Conv2d(8, 16, 3, rng);
    d.c3 = nn::Conv2d(16, 16, 3, rng);
    d.c4 = nn::Conv2d(16, 16, 3, rng);
    d.head = nn::Conv2d(16, kDetClasses + 1, 1, rng);
    return d;
}

Tensor Detector::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != data::kSceneSize || x.dim(3) != data::kSceneSize) {
        throw ShapeError("detector expects [N,1,48,48], got " + to_string(x.shape()));
    }
    const std::size_t n = x.dim(0);
    Tensor h = avg_pool2(silu(c1(x)));
    h = avg_pool2(silu(c2(h)));
    h = avg_pool2(silu(c3(h)));
    h = head(silu(c4(h)));
    return transpose(reshape(h, {n, kDetClasses + 1, kAnchors}));
}

nn::NamedTensors Detector::parameters() const {
    nn::NamedTensors out;
    c1.append(out, "c1");
    c2.append(out, "c2");
    c3.append(out, "c3");
    c4.append(out, "c4");
    head.append(out, "head");
    return out;
}

// ---------------------------------------------------------------------------

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::vector<std::size_t> argsort_desc(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    return idx;
}

namespace {

void require_detection(const Prediction& p) {
    if (p.kind != TaskKind::detection) throw std::invalid_argument("not a detection prediction");
    if (p.logits.rank() != 2 || p.logits.dim(1) != kDetClasses + 1 || p.logits.dim(0) < kTopK) {
        throw ShapeError("detection logits must be [D>=5, 5], got " + to_string(p.logits.shape()));
    }
}

}  // namespace

std::vector<double> detection_confidences(const Prediction& p) {
    require_detection(p);
    const std::size_t d = p.logits.dim(0), c = kDetClasses + 1;
    const auto v = p.logits.data();
    std::vector<double> conf(d);
    for (std::size_t a = 0; a < d; ++a) {
        const auto row = v.subspan(a * c, c);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double x : row) z += std::exp(x - m);
        double best = 0.0;
        for (std::size_t k = 0; k < kDetClasses; ++k) best = std::max(best, std::exp(row[k] - m) / z);
        conf[a] = best;
    }
    return conf;
}

std::vector<double> detection_row(const Prediction& p, std::size_t anchor) {
    require_detection(p);
    const auto row = p.logits.data().subspan(anchor * (kDetClasses + 1), kDetClasses);
    return {row.begin(), row.end()};
}

std::size_t detection_class(const Prediction& p, std::size_t anchor) { return argmax(detection_row(p, anchor)); }

std::vector<std::size_t> top5(const Prediction& p) {
    auto order = argsort_desc(detection_confidences(p));
    order.resize(kTopK);
    return order;
}

TargetSpec select_target(const Prediction& origin, std::size_t attribute) {
    TargetSpec s;
    s.kind = origin.kind;
    switch (origin.kind) {
        case TaskKind::multiclass: {
            if (origin.logits.size() < 2) throw std::invalid_argument("target selection needs at least two classes");
            const auto order = argsort_desc(origin.logits.data());
            s.origin_class = order[0];
            s.target_class = order[1];
            break;
        }
        case TaskKind::binary: {
            if (attribute >= origin.logits.size()) throw std::out_of_range("attribute index out of range");
            s.attribute = attribute;
            s.target_positive = !(origin.logits[attribute] > 0.0);
            break;
        }
        case TaskKind::detection: {
            s.anchors = top5(origin);
            for (std::size_t a : s.anchors) {
                const auto order = argsort_desc(detection_row(origin, a));
                s.anchor_origin.push_back(order[0]);
                s.anchor_targets.push_back(order[1]);
            }
            break;
        }
    }
    return s;
}

bool is_misbehavior(const Prediction& origin, const Prediction& now, const TargetSpec& spec, double detection_fraction) {
    if (origin.kind != now.kind || origin.kind != spec.kind) throw std::invalid_argument("prediction kinds differ");
    switch (spec.kind) {
        case TaskKind::multiclass: return argmax(now.logits.data()) != argmax(origin.logits.data());
        case TaskKind::binary: return (now.logits[spec.attribute] > 0.0) == spec.target_positive;
        case TaskKind::detection: {
            std::size_t flipped = 0;
            for (std::size_t i = 0; i < spec.anchors.size(); ++i) {
                if (detection_class(now, spec.anchors[i]) != spec.anchor_origin[i]) ++flipped;
            }
            const double needed = std::ceil(detection_fraction * static_cast<double>(spec.anchors.size()) - 1e-12);
            return static_cast<double>(flipped) >= std::max(needed, 1.0);
        }
    }
    return false;
}

// ---------------------------------------------------------------------------

Sut::Sut(TaskKind kind, Classifier net) : kind_(kind), classifier_(std::move(net)) {
    if (kind == TaskKind::detection) throw std::invalid_argument("detection SUT needs a detector");
}

Sut::Sut(Detector det) : kind_(TaskKind::detection), detector_(std::move(det)) {}

Tensor to_scene(const Tensor& image) {
    const std::size_t pad = (data::kSceneSize - data::kImageSize) / 2;
    return pad2d(image, pad, pad, pad, pad);
}

Tensor Sut::logits(const Tensor& batch) const {
    return kind_ == TaskKind::detection ? detector_.forward(batch) : classifier_.forward(batch);
}

Prediction Sut::predict(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != data::kImageSize || image.dim(2) != data::kImageSize) {
        throw ShapeError("SUT input must be [1,32,32], got " + to_string(image.shape()));
    }
    const Tensor x = reshape(image, {1, 1, data::kImageSize, data::kImageSize});
    Prediction p;
    p.kind = kind_;
    if (kind_ == TaskKind::detection) {
        p.logits = reshape(detector_.forward(to_scene(x)), {kAnchors, kDetClasses + 1});
    } else {
        const Tensor y = classifier_.forward(x);
        p.logits = reshape(y, {y.dim(1)});
    }
    return p;
}

nn::NamedTensors Sut::parameters() const {
    return kind_ == TaskKind::detection ? detector_.parameters() : classifier_.parameters();
}

std::size_t center_anchor(const data::SceneObject& o) {
    const double cell = static_cast<double>(data::kSceneSize) / static_cast<double>(kGrid);
    const auto gy = std::min<std::size_t>(kGrid - 1, static_cast<std::size_t>(o.cy / cell));
    const auto gx = std::min<std::size_t>(kGrid - 1, static_cast<std::size_t>(o.cx / cell));
    return gy * kGrid + gx;
}

std::vector<std::size_t> anchor_labels(const data::SceneImage& scene) {
    std::vector<std::size_t> labels(kAnchors, kBackground);
    const double cell = static_cast<double>(data::kSceneSize) / static_cast<double>(kGrid);
    auto overlap = [&](double lo, double hi, std::size_t g) {
        return std::min(hi, cell * static_cast<double>(g + 1)) - std::max(lo, cell * static_cast<double>(g));
    };
    for (const auto& o : scene.objects) {
        for (std::size_t gy = 0; gy < kGrid; ++gy)
            for (std::size_t gx = 0; gx < kGrid; ++gx)
                if (overlap(o.y0(), o.y1(), gy) >= kMinCellOverlap && overlap(o.x0(), o.x1(), gx) >= kMinCellOverlap)
                    labels[gy * kGrid + gx] = o.cls;
        labels[center_anchor(o)] = o.cls;
    }
    return labels;
}

// ---------------------------------------------------------------------------

namespace {

struct Batch {
    Tensor x;
    Tensor target;  // one-hot / binary targets, shaped like the logits
    Tensor weight;  // per-entry loss weight, shaped like the logits (optional)
};

double cosine_lr(double base, std::size_t step, std::size_t total) {
    const double frac = static_cast<double>(step - 1) / static_cast<double>(total);
    return base * (0.05 + 0.475 * (1.0 + std::cos(M_PI * frac)));
}

// Minimizes the loss produced by `loss_of` over batches drawn by `draw`.
template <class Draw, class LossOf>
std::vector<double> fit(const nn::NamedTensors& named, const SutTrainConfig& cfg, Draw draw, LossOf loss_of) {
    auto params = nn::tensors_of(named);
    AdamW opt(params, AdamWConfig{0.9, 0.999, 1e-8, 1e-4});
    Rng rng(split_seed(cfg.seed, 0xf17));
    std::vector<double> curve;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const Batch b = draw(rng);
        Tape tape;
        Tensor loss = loss_of(b);
        if (!std::isfinite(loss.item())) throw std::runtime_error("SUT training diverged at step " + std::to_string(step));
        curve.push_back(loss.item());
        opt.zero_grad();
        tape.backward(loss);
        opt.step(cosine_lr(cfg.lr, step, cfg.steps));
    }
    return curve;
}

Tensor softmax_ce(const Tensor& logits, const Tensor& onehot, std::size_t axis) {
    return neg(sum(log_softmax(logits, axis) * onehot)) * (1.0 / static_cast<double>(logits.size() / logits.dim(axis)));
}

struct LabeledImages {
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
};

LabeledImages five_way(std::size_t n, std::uint64_t seed, bool with_attributes) {
    LabeledImages out;
    const std::size_t n_attr = with_attributes ? n / 5 : 0;
    for (auto& s : data::shape_dataset(n - n_attr, split_seed(seed, 1))) {
        out.images.push_back(s.pixels);
        out.labels.push_back(s.label);
    }
    for (auto& a : data::attribute_dataset(n_attr, split_seed(seed, 2))) {
        out.images.push_back(a.pixels);
        out.labels.push_back(data::kShapeClasses);
    }
    return out;
}

Batch draw_labeled(const LabeledImages& set, std::size_t classes, std::size_t batch, Rng& rng) {
    std::vector<Tensor> xs;
    std::vector<double> t(batch * classes, 0.0);
    for (std::size_t k = 0; k < batch; ++k) {
        const std::size_t i = rng.uniform_int(set.images.size());
        xs.push_back(set.images[i]);
        t[k * classes + set.labels[i]] = 1.0;
    }
    return {data::stack_images(xs), Tensor({batch, classes}, std::move(t)), {}};
}

double accuracy(const Classifier& net, const LabeledImages& set) {
    NoGradGuard ng;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < set.images.size(); start += 100) {
        const std::size_t end = std::min(set.images.size(), start + 100);
        const Tensor y = net.forward(
            data::stack_images(std::vector<Tensor>(set.images.begin() + static_cast<long>(start),
                                                   set.images.begin() + static_cast<long>(end))));
        for (std::size_t k = 0; k < end - start; ++k) {
            if (argmax(y.data().subspan(k * net.outputs, net.outputs)) == set.labels[start + k]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(set.images.size());
}

Classifier train_classifier(std::size_t classes, bool with_attributes, const SutTrainConfig& cfg, SutReport& report,
                            std::uint64_t stream) {
    const auto train = five_way(cfg.train_size, split_seed(cfg.seed, stream), with_attributes);
    const auto held = five_way(cfg.heldout_size, split_seed(cfg.seed, stream + 1), with_attributes);
    Classifier net = Classifier::create(classes, split_seed(cfg.seed, stream + 2));
    report.curve = fit(
        net.parameters(), cfg, [&](Rng& rng) { return draw_labeled(train, classes, cfg.batch, rng); },
        [&](const Batch& b) { return softmax_ce(net.forward(b.x), b.target, 1); });
    report.accuracy = {accuracy(net, held)};
    nn::freeze(net.parameters());
    return net;
}

}  // namespace

Sut train_multiclass(const SutTrainConfig& cfg, SutReport& report) {
    Classifier net = train_classifier(data::kShapeClasses, false, cfg, report, 10);
    report.threshold = 0.95;
    report.passed = report.accuracy[0] > report.threshold;
    return Sut(TaskKind::multiclass, std::move(net));
}

Classifier train_embedder(const SutTrainConfig& cfg, SutReport& report) {
    Classifier net = train_classifier(data::kShapeClasses + 1, true, cfg, report, 20);
    report.threshold = 0.9;
    report.passed = report.accuracy[0] > report.threshold;
    return net;
}

Sut train_binary(const SutTrainConfig& cfg, SutReport& report) {
    const auto train = data::attribute_dataset(cfg.train_size, split_seed(cfg.seed, 30));
    const auto held = data::attribute_dataset(cfg.heldout_size, split_seed(cfg.seed, 31));
    Classifier net = Classifier::create(data::kAttributes, split_seed(cfg.seed, 32));
    constexpr std::size_t K = data::kAttributes;
    report.curve = fit(
        net.parameters(), cfg,
        [&](Rng& rng) {
            std::vector<Tensor> xs;
            std::vector<double> t(cfg.batch * K);
            for (std::size_t k = 0; k < cfg.batch; ++k) {
                const auto& im = train[rng.uniform_int(train.size())];
                xs.push_back(im.pixels);
                for (std::size_t a = 0; a < K; ++a) t[k * K + a] = im.attributes[a] ? 1.0 : 0.0;
            }
            return Batch{data::stack_images(xs), Tensor({cfg.batch, K}, std::move(t)), {}};
        },
        [&](const Batch& b) {
            const Tensor y = net.forward(b.x);
            return mean(softplus(y) - y * b.target);
        });
    std::vector<std::size_t> correct(K, 0);
    {
        NoGradGuard ng;
        for (const auto& im : held) {
            const Tensor y = net.forward(reshape(im.pixels, {1, 1, data::kImageSize, data::kImageSize}));
            for (std::size_t a = 0; a < K; ++a)
                if ((y[a] > 0.0) == im.attributes[a]) ++correct[a];
        }
    }
    report.accuracy.clear();
    for (std::size_t a = 0; a < K; ++a) report.accuracy.push_back(static_cast<double>(correct[a]) / held.size());
    report.threshold = 0.9;
    report.passed = std::all_of(report.accuracy.begin(), report.accuracy.end(),
                                [&](double acc) { return acc > report.threshold; });
    nn::freeze(net.parameters());
    return Sut(TaskKind::binary, std::move(net));
}

Sut train_detector(const SutTrainConfig& cfg, SutReport& report) {
    const auto train = data::scene_dataset(cfg.train_size, split_seed(cfg.seed, 40));
    const auto held = data::scene_dataset(cfg.heldout_size, split_seed(cfg.seed, 41));
    Detector det = Detector::create(split_seed(cfg.seed, 42));
    constexpr std::size_t C = kDetClasses + 1;
    // Object anchors are rarer than background; weight them up.
    constexpr double kObjectWeight = 2.0;
    report.curve = fit(
        det.parameters(), cfg,
        [&](Rng& rng) {
            std::vector<Tensor> xs;
            std::vector<double> t(cfg.batch * kAnchors * C, 0.0), w(cfg.batch * kAnchors * C, 0.0);
            for (std::size_t k = 0; k < cfg.batch; ++k) {
                const auto& sc = train[rng.uniform_int(train.size())];
                xs.push_back(sc.pixels);
                const auto labels = anchor_labels(sc);
                for (std::size_t a = 0; a < kAnchors; ++a) {
                    const std::size_t base = (k * kAnchors + a) * C;
                    t[base + labels[a]] = 1.0;
                    const double wt = labels[a] == kBackground ? 1.0 : kObjectWeight;
                    for (std::size_t c = 0; c < C; ++c) w[base + c] = wt;
                }
            }
            const Shape s{cfg.batch, kAnchors, C};
            return Batch{data::stack_images(xs), Tensor(s, std::move(t)), Tensor(s, std::move(w))};
        },
        [&](const Batch& b) {
            const Tensor lp = log_softmax(det.forward(b.x), 2);
            return neg(sum(lp * b.target * b.weight)) * (1.0 / static_cast<double>(cfg.batch * kAnchors));
        });
    std::size_t objects = 0, correct = 0;
    {
        NoGradGuard ng;
        for (const auto& sc : held) {
            const Tensor y = det.forward(reshape(sc.pixels, {1, 1, data::kSceneSize, data::kSceneSize}));
            for (const auto& o : sc.objects) {
                ++objects;
                if (argmax(y.data().subspan(center_anchor(o) * C, C)) == o.cls) ++correct;
            }
        }
    }
    report.accuracy = {static_cast<double>(correct) / static_cast<double>(objects)};
    report.threshold = 0.85;
    report.passed = report.accuracy[0] > report.threshold;
    nn::freeze(det.parameters());
    return Sut(std::move(det));
}

}  // namespace hynea::sut
