#pragma once

#include "hynea/rng.hpp"
#include "hynea/tensor.hpp"

#include "json.hpp"

#include <string>
#include <utility>
#include <vector>

namespace hynea::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Conv2d {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t k, Rng& rng);
    static Conv2d zeros(std::size_t in, std::size_t out, std::size_t k);

    Tensor operator()(const Tensor& x) const;
    void append(NamedTensors& out, const std::string& prefix) const;
    Conv2d copy() const;
};

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

    Tensor operator()(const Tensor& x) const;
    void append(NamedTensors& out, const std::string& prefix) const;
    Linear copy() const;
};

std::vector<Tensor> tensors_of(const NamedTensors& named);
void set_trainable(const NamedTensors& named, bool on);
void freeze(const NamedTensors& named);
std::uint64_t hash(const NamedTensors& named);
std::size_t parameter_count(const NamedTensors& named);

/// Writes `<stem>.json` (header plus tensor index) and `<stem>.hynt`
/// (one HYNT record per tensor, in index order).
void save_checkpoint(const std::string& stem, nlohmann::json header, const NamedTensors& named);
/// Loads tensors into `named` by name; returns the header.
nlohmann::json load_checkpoint(const std::string& stem, const NamedTensors& named);

}  // namespace hynea::nn
