#include "hynea/stack.hpp"

#include "hynea/config.hpp"
#include "hynea/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace hynea::stack {

namespace fs = std::filesystem;

const char* component_name(Component c) {
    switch (c) {
        case Component::autoencoder: return "autoencoder";
        case Component::denoiser: return "denoiser";
        case Component::multiclass: return "sut_multiclass";
        case Component::binary: return "sut_binary";
        case Component::detector: return "sut_detection";
        case Component::embedder: return "embedder";
    }
    return "?";
}

Component parse_component(const std::string& name) {
    for (Component c : all_components())
        if (name == component_name(c)) return c;
    if (name == "multiclass") return Component::multiclass;
    if (name == "binary") return Component::binary;
    if (name == "detection" || name == "detector") return Component::detector;
    throw std::invalid_argument("unknown component '" + name + "'");
}

const std::vector<Component>& all_components() {
    static const std::vector<Component> all{Component::autoencoder, Component::denoiser, Component::multiclass,
                                            Component::binary,      Component::detector, Component::embedder};
    return all;
}

nlohmann::json to_json(const StackConfig& c) {
    return {{"shape_images", c.shape_images},
            {"attribute_images", c.attribute_images},
            {"data_seed", c.data_seed},
            {"autoencoder",
             {{"steps", c.autoencoder.steps},
              {"batch", c.autoencoder.batch},
              {"lr", c.autoencoder.lr},
              {"seed", c.autoencoder.seed},
              {"mse_threshold", c.autoencoder.mse_threshold}}},
            {"denoiser",
             {{"steps", c.denoiser.steps}, {"batch", c.denoiser.batch}, {"lr", c.denoiser.lr}, {"seed", c.denoiser.seed}}},
            {"sut",
             {{"steps", c.sut.steps},
              {"batch", c.sut.batch},
              {"lr", c.sut.lr},
              {"seed", c.sut.seed},
              {"train_size", c.sut.train_size},
              {"heldout_size", c.sut.heldout_size}}},
            {"sampler_steps", c.sampler_steps}};
}

StackConfig stack_config_from_json(const nlohmann::json& j) {
    check_keys(j, {"shape_images", "attribute_images", "data_seed", "autoencoder", "denoiser", "sut", "sampler_steps"},
               "stack config");
    StackConfig c;
    c.shape_images = field<std::size_t>(j, "shape_images", c.shape_images);
    c.attribute_images = field<std::size_t>(j, "attribute_images", c.attribute_images);
    c.data_seed = field<std::uint64_t>(j, "data_seed", c.data_seed);
    if (j.contains("autoencoder")) {
        const auto& a = j.at("autoencoder");
        check_keys(a, {"steps", "batch", "lr", "seed", "mse_threshold"}, "stack.autoencoder");
        c.autoencoder.steps = field<std::size_t>(a, "steps", c.autoencoder.steps);
        c.autoencoder.batch = field<std::size_t>(a, "batch", c.autoencoder.batch);
        c.autoencoder.lr = field<double>(a, "lr", c.autoencoder.lr);
        c.autoencoder.seed = field<std::uint64_t>(a, "seed", c.autoencoder.seed);
        c.autoencoder.mse_threshold = field<double>(a, "mse_threshold", c.autoencoder.mse_threshold);
    }
    if (j.contains("denoiser")) {
        const auto& d = j.at("denoiser");
        check_keys(d, {"steps", "batch", "lr", "seed"}, "stack.denoiser");
        c.denoiser.steps = field<std::size_t>(d, "steps", c.denoiser.steps);
        c.denoiser.batch = field<std::size_t>(d, "batch", c.denoiser.batch);
        c.denoiser.lr = field<double>(d, "lr", c.denoiser.lr);
        c.denoiser.seed = field<std::uint64_t>(d, "seed", c.denoiser.seed);
    }
    if (j.contains("sut")) {
        const auto& s = j.at("sut");
        check_keys(s, {"steps", "batch", "lr", "seed", "train_size", "heldout_size"}, "stack.sut");
        c.sut.steps = field<std::size_t>(s, "steps", c.sut.steps);
        c.sut.batch = field<std::size_t>(s, "batch", c.sut.batch);
        c.sut.lr = field<double>(s, "lr", c.sut.lr);
        c.sut.seed = field<std::uint64_t>(s, "seed", c.sut.seed);
        c.sut.train_size = field<std::size_t>(s, "train_size", c.sut.train_size);
        c.sut.heldout_size = field<std::size_t>(s, "heldout_size", c.sut.heldout_size);
    }
    c.sampler_steps = field<std::size_t>(j, "sampler_steps", c.sampler_steps);
    if (c.shape_images == 0) throw ConfigError("stack: shape_images must be positive");
    if (c.sampler_steps < 2) throw ConfigError("stack: sampler_steps must be at least 2");
    if (c.autoencoder.steps == 0 || c.denoiser.steps == 0 || c.sut.steps == 0) {
        throw ConfigError("stack: training steps must be positive");
    }
    return c;
}

std::string checkpoint_stem(const std::string& dir, Component c) { return (fs::path(dir) / component_name(c)).string(); }

bool present(const std::string& dir, Component c) {
    const std::string stem = checkpoint_stem(dir, c);
    return fs::exists(stem + ".json") && fs::exists(stem + ".hynt");
}

namespace {

void require(const std::string& dir, Component c, Component needed_by) {
    if (!present(dir, c)) {
        throw MissingPrerequisite(std::string(component_name(needed_by)) + " needs the " + component_name(c) +
                                  " checkpoint (" + checkpoint_stem(dir, c) + ".json); train it first");
    }
}

void write_curve(const std::string& path, const std::vector<double>& curve) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, curve[i]);
        f << buf;
    }
}

struct Corpus {
    std::vector<Tensor> images;
    std::vector<std::size_t> conditions;
};

Corpus backbone_corpus(const StackConfig& cfg) {
    Corpus c;
    for (auto& s : data::shape_dataset(cfg.shape_images, cfg.data_seed)) {
        c.images.push_back(s.pixels);
        c.conditions.push_back(s.label);
    }
    for (auto& a : data::attribute_dataset(cfg.attribute_images, cfg.data_seed + 1)) {
        c.images.push_back(a.pixels);
        c.conditions.push_back(ldm::kAttributeCondition);
    }
    return c;
}

nlohmann::json base_header(Component c, const StackConfig& cfg) {
    return {{"component", component_name(c)}, {"stack_config", to_json(cfg)}};
}

}  // namespace

TrainResult train_component(Component c, const StackConfig& cfg, const std::string& dir) {
    fs::create_directories(dir);
    TrainResult out;
    out.component = c;
    nlohmann::json header = base_header(c, cfg);
    nn::NamedTensors params;
    switch (c) {
        case Component::autoencoder: {
            const Corpus corpus = backbone_corpus(cfg);
            std::vector<Tensor> heldout;
            for (auto& s : data::shape_dataset(200, cfg.data_seed + 2)) heldout.push_back(s.pixels);
            ldm::TrainReport r;
            const ldm::Autoencoder ae = ldm::train_autoencoder(corpus.images, heldout, cfg.autoencoder, r);
            out.curve = r.curve;
            out.accuracy = {r.heldout_mse};
            out.passed = r.heldout_mse < cfg.autoencoder.mse_threshold;
            header["latent_scale"] = ae.latent_scale;
            header["heldout_mse"] = r.heldout_mse;
            params = ae.parameters();
            break;
        }
        case Component::denoiser: {
            require(dir, Component::autoencoder, c);
            const ldm::Autoencoder ae = load_autoencoder(dir);
            const Corpus corpus = backbone_corpus(cfg);
            ldm::TrainReport r;
            const auto sched = ldm::NoiseSchedule::linear();
            const ldm::Denoiser den = ldm::train_denoiser(ae, corpus.images, corpus.conditions, sched, cfg.denoiser, r);
            out.curve = r.curve;
            out.passed = r.converged;
            header["schedule"] = {{"steps", sched.steps}, {"beta_start", sched.beta_start}, {"beta_end", sched.beta_end}};
            header["sampler_steps"] = cfg.sampler_steps;
            header["autoencoder_hash"] = nn::hash(ae.parameters());
            params = den.parameters();
            break;
        }
        case Component::multiclass:
        case Component::binary:
        case Component::detector: {
            sut::SutReport r;
            sut::Sut s = c == Component::multiclass ? sut::train_multiclass(cfg.sut, r)
                         : c == Component::binary   ? sut::train_binary(cfg.sut, r)
                                                    : sut::train_detector(cfg.sut, r);
            out.curve = r.curve;
            out.accuracy = r.accuracy;
            out.passed = r.passed;
            header["accuracy"] = r.accuracy;
            header["threshold"] = r.threshold;
            params = s.parameters();
            break;
        }
        case Component::embedder: {
            sut::SutReport r;
            const sut::Classifier e = sut::train_embedder(cfg.sut, r);
            out.curve = r.curve;
            out.accuracy = r.accuracy;
            out.passed = r.passed;
            header["accuracy"] = r.accuracy;
            params = e.parameters();
            break;
        }
    }
    header["passed"] = out.passed;
    out.weight_hash = nn::hash(params);
    header["weight_hash"] = out.weight_hash;
    nn::save_checkpoint(checkpoint_stem(dir, c), header, params);
    write_curve((fs::path(dir) / (std::string(component_name(c)) + "_curve.csv")).string(), out.curve);
    return out;
}

void ensure_stack(const StackConfig& cfg, const std::string& dir, const Log& log) {
    for (Component c : all_components()) {
        if (present(dir, c)) continue;
        if (log) log(std::string("training ") + component_name(c));
        const TrainResult r = train_component(c, cfg, dir);
        if (log && !r.passed) log(std::string("warning: ") + component_name(c) + " missed its quality threshold");
    }
}

ldm::Autoencoder load_autoencoder(const std::string& dir) {
    require(dir, Component::autoencoder, Component::autoencoder);
    ldm::Autoencoder ae = ldm::Autoencoder::create(0);
    const auto h = nn::load_checkpoint(checkpoint_stem(dir, Component::autoencoder), ae.parameters());
    ae.latent_scale = h.at("latent_scale").get<double>();
    ae.freeze();
    return ae;
}

ldm::Backbone load_backbone(const std::string& dir) {
    require(dir, Component::autoencoder, Component::denoiser);
    require(dir, Component::denoiser, Component::denoiser);
    ldm::Backbone bb;
    bb.autoencoder = load_autoencoder(dir);
    bb.denoiser = ldm::Denoiser::create(0);
    const auto h = nn::load_checkpoint(checkpoint_stem(dir, Component::denoiser), bb.denoiser.parameters());
    bb.denoiser.freeze();
    const auto& s = h.at("schedule");
    bb.schedule = ldm::NoiseSchedule::linear(s.at("steps").get<std::size_t>(), s.at("beta_start").get<double>(),
                                             s.at("beta_end").get<double>());
    bb.sampler = ldm::SamplerConfig::uniform(bb.schedule.steps, h.at("sampler_steps").get<std::size_t>());
    return bb;
}

sut::Sut load_sut(const std::string& dir, sut::TaskKind task) {
    switch (task) {
        case sut::TaskKind::multiclass: {
            require(dir, Component::multiclass, Component::multiclass);
            auto net = sut::Classifier::create(data::kShapeClasses, 0);
            nn::load_checkpoint(checkpoint_stem(dir, Component::multiclass), net.parameters());
            sut::Sut s(task, net);
            s.freeze();
            return s;
        }
        case sut::TaskKind::binary: {
            require(dir, Component::binary, Component::binary);
            auto net = sut::Classifier::create(data::kAttributes, 0);
            nn::load_checkpoint(checkpoint_stem(dir, Component::binary), net.parameters());
            sut::Sut s(task, net);
            s.freeze();
            return s;
        }
        case sut::TaskKind::detection: {
            require(dir, Component::detector, Component::detector);
            auto det = sut::Detector::create(0);
            nn::load_checkpoint(checkpoint_stem(dir, Component::detector), det.parameters());
            sut::Sut s(det);
            s.freeze();
            return s;
        }
    }
    throw std::invalid_argument("unknown task");
}

sut::Classifier load_embedder(const std::string& dir) {
    require(dir, Component::embedder, Component::embedder);
    auto net = sut::Classifier::create(data::kShapeClasses + 1, 0);
    nn::load_checkpoint(checkpoint_stem(dir, Component::embedder), net.parameters());
    nn::freeze(net.parameters());
    return net;
}

nlohmann::json checkpoint_hashes(const std::string& dir) {
    nlohmann::json j = nlohmann::json::object();
    for (Component c : all_components()) {
        if (!present(dir, c)) continue;
        std::ifstream f(checkpoint_stem(dir, c) + ".json");
        const auto h = nlohmann::json::parse(f);
        j[component_name(c)] = h.value("weight_hash", std::uint64_t{0});
    }
    return j;
}

}  // namespace hynea::stack
