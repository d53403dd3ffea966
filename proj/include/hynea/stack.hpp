#pragma once

// Training, persistence and loading of the frozen components every
// generation run depends on.

#include "hynea/ldm.hpp"
#include "hynea/suts.hpp"

#include "json.hpp"

#include <functional>
#include <stdexcept>
#include <string>

namespace hynea::stack {

enum class Component { autoencoder, denoiser, multiclass, binary, detector, embedder };

const char* component_name(Component c);
Component parse_component(const std::string& name);
/// All components in dependency order.
const std::vector<Component>& all_components();

struct StackConfig {
    std::size_t shape_images = 6000;
    std::size_t attribute_images = 1500;
    std::uint64_t data_seed = 1;
    ldm::AutoencoderTrainConfig autoencoder;
    ldm::DenoiserTrainConfig denoiser{12000, 32, 2e-3, 11};
    sut::SutTrainConfig sut;
    std::size_t sampler_steps = 8;
};

nlohmann::json to_json(const StackConfig& c);
StackConfig stack_config_from_json(const nlohmann::json& j);

/// A checkpoint another component needs is absent.
class MissingPrerequisite : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// `<dir>/<name>`; the checkpoint itself is `<stem>.json` + `<stem>.hynt`.
std::string checkpoint_stem(const std::string& dir, Component c);
bool present(const std::string& dir, Component c);

struct TrainResult {
    Component component;
    std::vector<double> curve;
    std::vector<double> accuracy;  // heldout accuracy (SUTs) or {mse} (autoencoder)
    bool passed = true;
    std::uint64_t weight_hash = 0;
};

/// Trains one component, writes its checkpoint and `<name>_curve.csv` into dir.
TrainResult train_component(Component c, const StackConfig& cfg, const std::string& dir);

using Log = std::function<void(const std::string&)>;
/// Trains every missing component in dependency order.
void ensure_stack(const StackConfig& cfg, const std::string& dir, const Log& log = {});

ldm::Autoencoder load_autoencoder(const std::string& dir);
ldm::Backbone load_backbone(const std::string& dir);
sut::Sut load_sut(const std::string& dir, sut::TaskKind task);
sut::Classifier load_embedder(const std::string& dir);

/// Weight hashes of every present component, keyed by name.
nlohmann::json checkpoint_hashes(const std::string& dir);

}  // namespace hynea::stack
