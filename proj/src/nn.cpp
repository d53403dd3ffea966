#include "hynea/nn.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace hynea::nn {

namespace {

Tensor randn(Shape shape, Rng& rng, double stddev) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

Tensor leaf(Tensor t) {
    t.set_requires_grad(true);
    return t;
}

}  // namespace

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t k, Rng& rng)
    : weight(leaf(randn({out, in, k, k}, rng, std::sqrt(2.0 / static_cast<double>(in * k * k))))),
      bias(leaf(Tensor::zeros({out}))) {}

Conv2d Conv2d::zeros(std::size_t in, std::size_t out, std::size_t k) {
    Conv2d c;
    c.weight = leaf(Tensor::zeros({out, in, k, k}));
    c.bias = leaf(Tensor::zeros({out}));
    return c;
}

Tensor Conv2d::operator()(const Tensor& x) const {
    return conv2d(x, weight, Padding::same) + reshape(bias, {bias.size(), 1, 1});
}

void Conv2d::append(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

Conv2d Conv2d::copy() const {
    Conv2d c;
    c.weight = leaf(weight.detach());
    c.bias = leaf(bias.detach());
    return c;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(leaf(randn({out, in}, rng, gain * std::sqrt(1.0 / static_cast<double>(in))))),
      bias(leaf(Tensor::zeros({out}))) {}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

void Linear::append(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

Linear Linear::copy() const {
    Linear l;
    l.weight = leaf(weight.detach());
    l.bias = leaf(bias.detach());
    return l;
}

std::vector<Tensor> tensors_of(const NamedTensors& named) {
    std::vector<Tensor> out;
    out.reserve(named.size());
    for (const auto& [_, t] : named) out.push_back(t);
    return out;
}

void set_trainable(const NamedTensors& named, bool on) {
    for (auto [_, t] : named) t.set_requires_grad(on);
}

void freeze(const NamedTensors& named) {
    for (auto [_, t] : named) t.freeze();
}

std::uint64_t hash(const NamedTensors& named) {
    const auto ts = tensors_of(named);
    return hash_tensors(ts);
}

std::size_t parameter_count(const NamedTensors& named) {
    std::size_t n = 0;
    for (const auto& [_, t] : named) n += t.size();
    return n;
}

void save_checkpoint(const std::string& stem, nlohmann::json header, const NamedTensors& named) {
    std::ofstream bin(stem + ".hynt", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + stem + ".hynt");
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, t] : named) {
        write_hynt(bin, t);
        index.push_back({{"name", name}, {"shape", t.shape()}});
    }
    header["tensors"] = index;
    header["hash"] = std::to_string(hash(named));
    std::ofstream js(stem + ".json");
    if (!js) throw std::runtime_error("cannot write " + stem + ".json");
    js << header.dump(2) << '\n';
}

nlohmann::json load_checkpoint(const std::string& stem, const NamedTensors& named) {
    std::ifstream js(stem + ".json");
    if (!js) throw std::runtime_error("missing checkpoint header " + stem + ".json");
    nlohmann::json header = nlohmann::json::parse(js);
    std::ifstream bin(stem + ".hynt", std::ios::binary);
    if (!bin) throw std::runtime_error("missing checkpoint data " + stem + ".hynt");
    std::map<std::string, Tensor> loaded;
    for (const auto& entry : header.at("tensors")) loaded.emplace(entry.at("name").get<std::string>(), read_hynt(bin));
    for (auto [name, t] : named) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw std::runtime_error("checkpoint " + stem + " lacks tensor " + name);
        if (it->second.shape() != t.shape()) {
            throw ShapeError("checkpoint tensor " + name + " has shape " + to_string(it->second.shape()) +
                             ", expected " + to_string(t.shape()));
        }
        auto dst = t.mutable_data();
        std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
    }
    return header;
}

}  // namespace hynea::nn
