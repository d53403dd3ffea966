#include "hynea/ldm.hpp"

#include "hynea/optim.hpp"
#include "hynea/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hynea::ldm {

Shape latent_shape(std::size_t batch) { return {batch, kLatentChannels, kLatentSize, kLatentSize}; }

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 2) throw std::invalid_argument("noise schedule needs at least two steps");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("noise schedule needs 0 < beta_start < beta_end < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.assign(steps + 1, 0.0);
    s.alpha_bar.assign(steps + 1, 1.0);
    for (std::size_t t = 1; t <= steps; ++t) {
        s.beta[t] = beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
    }
    return s;
}

double NoiseSchedule::abar(std::size_t t) const {
    if (t > steps) throw std::out_of_range("timestep " + std::to_string(t) + " beyond schedule");
    return alpha_bar[t];
}

Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& noise, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.steps) throw std::out_of_range("forward_diffuse: t must lie in [1, T]");
    if (z0.shape() != noise.shape()) throw ShapeError("forward_diffuse: noise shape differs from latent");
    const double a = sched.alpha_bar[t];
    return z0 * std::sqrt(a) + noise * std::sqrt(1.0 - a);
}

SamplerConfig SamplerConfig::uniform(std::size_t train_steps, std::size_t inference_steps) {
    if (inference_steps < 2 || inference_steps > train_steps) {
        throw std::invalid_argument("sampler needs 2 <= S <= T");
    }
    SamplerConfig c;
    for (std::size_t i = 0; i < inference_steps; ++i) {
        c.timesteps.push_back(train_steps * (inference_steps - i) / inference_steps);
    }
    return c;
}

void SamplerConfig::validate(const NoiseSchedule& sched) const {
    if (timesteps.size() < 2) throw std::invalid_argument("sampler needs at least two steps");
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        if (timesteps[i] < 1 || timesteps[i] > sched.steps) throw std::invalid_argument("sampler timestep out of range");
        if (i > 0 && timesteps[i] >= timesteps[i - 1]) {
            throw std::invalid_argument("sampler timesteps must be strictly decreasing");
        }
    }
}

// ---------------------------------------------------------------------------

Autoencoder Autoencoder::create(std::uint64_t seed) {
    Rng rng(split_seed(seed, 0xae));
    Autoencoder a;
    a.enc1 = nn::Conv2d(1, 16, 3, rng);
    a.enc2 = nn::Conv2d(16, 16, 3, rng);
    a.enc3 = nn::Conv2d(16, kLatentChannels, 3, rng);
    a.dec1 = nn::Conv2d(kLatentChannels, 16, 3, rng);
    a.dec2 = nn::Conv2d(16, 16, 3, rng);
    a.dec3 = nn::Conv2d(16, 8, 3, rng);
    a.dec4 = nn::Conv2d(8, 1, 3, rng);
    return a;
}

Tensor Autoencoder::encode(const Tensor& x) const {
    Tensor h = avg_pool2(silu(enc1(x)));
    h = avg_pool2(silu(enc2(h)));
    return enc3(h) * (1.0 / latent_scale);
}

Tensor Autoencoder::decode(const Tensor& z) const {
    Tensor h = upsample2(silu(dec1(z * latent_scale)));
    h = upsample2(silu(dec2(h)));
    h = silu(dec3(h));
    return sigmoid(dec4(h));
}

nn::NamedTensors Autoencoder::parameters() const {
    nn::NamedTensors out;
    enc1.append(out, "enc1");
    enc2.append(out, "enc2");
    enc3.append(out, "enc3");
    dec1.append(out, "dec1");
    dec2.append(out, "dec2");
    dec3.append(out, "dec3");
    dec4.append(out, "dec4");
    return out;
}

void Autoencoder::freeze() {
    nn::freeze(parameters());
    frozen = true;
}

// ---------------------------------------------------------------------------

Tensor ResBlock::operator()(const Tensor& h, const Tensor& emb) const {
    const std::size_t n = emb.dim(0);
    Tensor shift = reshape(proj(emb), {n, conv1.bias.size(), 1, 1});
    return h + conv2(silu(conv1(silu(h)) + shift));
}

void ResBlock::append(nn::NamedTensors& out, const std::string& prefix) const {
    conv1.append(out, prefix + ".conv1");
    conv2.append(out, prefix + ".conv2");
    proj.append(out, prefix + ".proj");
}

ResBlock ResBlock::copy() const { return ResBlock{conv1.copy(), conv2.copy(), proj.copy()}; }

Tensor timestep_features(std::span<const std::size_t> t) {
    constexpr std::size_t half = Denoiser::kTimeFeatures / 2;
    std::vector<double> v(t.size() * Denoiser::kTimeFeatures);
    for (std::size_t n = 0; n < t.size(); ++n) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(t[n]) * freq;
            v[n * Denoiser::kTimeFeatures + i] = std::sin(arg);
            v[n * Denoiser::kTimeFeatures + half + i] = std::cos(arg);
        }
    }
    return Tensor({t.size(), Denoiser::kTimeFeatures}, std::move(v));
}

Denoiser Denoiser::create(std::uint64_t seed) {
    Rng rng(split_seed(seed, 0xde));
    Denoiser d;
    d.time1 = nn::Linear(kTimeFeatures, kEmbed, rng);
    d.time2 = nn::Linear(kEmbed, kEmbed, rng);
    std::vector<double> table(kConditions * kEmbed);
    for (auto& x : table) x = rng.normal();
    d.class_table = Tensor({kConditions, kEmbed}, std::move(table));
    d.class_table.set_requires_grad(true);
    d.conv_in = nn::Conv2d(kLatentChannels, kWidth, 3, rng);
    for (auto& b : d.blocks) {
        b.conv1 = nn::Conv2d(kWidth, kWidth, 3, rng);
        b.conv2 = nn::Conv2d(kWidth, kWidth, 3, rng);
        for (auto& w : b.conv2.weight.mutable_data()) w *= 0.2;
        b.proj = nn::Linear(kEmbed, kWidth, rng);
    }
    d.conv_out = nn::Conv2d(kWidth, kLatentChannels, 3, rng);
    return d;
}

Tensor Denoiser::embedding(std::span<const std::size_t> t, std::span<const std::size_t> cond) const {
    if (t.size() != cond.size()) throw ShapeError("embedding: timestep and condition counts differ");
    for (std::size_t c : cond) {
        if (c >= kConditions) throw std::out_of_range("condition index out of range");
    }
    Tensor temb = time2(silu(time1(timestep_features(t))));
    return silu(temb + index_select(class_table, 0, cond));
}

Tensor Denoiser::head(const Tensor& h) const { return conv_out(silu(h)); }

Tensor Denoiser::forward(const Tensor& z, std::span<const std::size_t> t, std::span<const std::size_t> cond) const {
    if (z.rank() != 4 || z.dim(1) != kLatentChannels || z.dim(2) != kLatentSize || z.dim(3) != kLatentSize) {
        throw ShapeError("denoiser expects [N,4,8,8], got " + to_string(z.shape()));
    }
    if (z.dim(0) != t.size()) throw ShapeError("denoiser: batch and timestep counts differ");
    const Tensor emb = embedding(t, cond);
    Tensor h = conv_in(z);
    for (const auto& b : blocks) h = b(h, emb);
    return head(h);
}

nn::NamedTensors Denoiser::parameters() const {
    nn::NamedTensors out;
    time1.append(out, "time1");
    time2.append(out, "time2");
    out.emplace_back("class_table", class_table);
    conv_in.append(out, "conv_in");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].append(out, "block" + std::to_string(i));
    conv_out.append(out, "conv_out");
    return out;
}

void Denoiser::freeze() {
    nn::freeze(parameters());
    frozen = true;
}

// ---------------------------------------------------------------------------

Tensor ddim_step(const Tensor& z, const Tensor& eps, double abar_t, double abar_prev) {
    const double st = std::sqrt(abar_t), sp = std::sqrt(abar_prev);
    const double a = sp / st;
    const double b = std::sqrt(1.0 - abar_prev) - sp * std::sqrt(1.0 - abar_t) / st;
    return z * a + eps * b;
}

Tensor ddim_sample(const Tensor& z_T, const EpsFn& eps, const NoiseSchedule& sched, const SamplerConfig& sampler,
                   bool checkpointed) {
    sampler.validate(sched);
    if (z_T.rank() != 4 || z_T.dim(1) != kLatentChannels || z_T.dim(2) != kLatentSize || z_T.dim(3) != kLatentSize) {
        throw ShapeError("ddim_sample expects a latent [N,4,8,8], got " + to_string(z_T.shape()));
    }
    Tensor z = z_T;
    const auto& ts = sampler.timesteps;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::size_t t = ts[i];
        const double abar_t = sched.abar(t);
        const double abar_prev = i + 1 < ts.size() ? sched.abar(ts[i + 1]) : 1.0;
        auto step = [eps, t, abar_t, abar_prev](std::span<const Tensor> in) {
            return ddim_step(in[0], eps(in[0], t), abar_t, abar_prev);
        };
        if (checkpointed) {
            z = checkpoint(step, {z});
        } else {
            const Tensor in[] = {z};
            z = step(in);
        }
    }
    return z;
}

Tensor render(const Tensor& z0, const Autoencoder& ae) { return clamp(ae.decode(z0), 0.0, 1.0); }

EpsFn Backbone::plain_eps(std::size_t cond) const {
    return [this, cond](const Tensor& z, std::size_t t) {
        const std::vector<std::size_t> ts(z.dim(0), t), cs(z.dim(0), cond);
        return denoiser.forward(z, ts, cs);
    };
}

Tensor Backbone::sample(const Tensor& z_T, std::size_t cond, bool checkpointed) const {
    return ddim_sample(z_T, plain_eps(cond), schedule, sampler, checkpointed);
}

std::uint64_t Backbone::weight_hash() const {
    nn::NamedTensors all = autoencoder.parameters();
    for (auto& p : denoiser.parameters()) all.push_back(p);
    return nn::hash(all);
}

// ---------------------------------------------------------------------------

namespace {

Tensor batch_of(const std::vector<Tensor>& items, std::span<const std::size_t> idx) {
    const Shape& s = items.front().shape();
    Shape out{idx.size()};
    out.insert(out.end(), s.begin(), s.end());
    std::vector<double> v;
    v.reserve(numel(out));
    for (std::size_t i : idx) v.insert(v.end(), items[i].data().begin(), items[i].data().end());
    return Tensor(out, std::move(v));
}

double mse_of(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

std::vector<std::size_t> draw_indices(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(k);
    for (auto& i : idx) i = rng.uniform_int(n);
    return idx;
}

void check_finite(double loss, std::size_t step, const char* what) {
    if (!std::isfinite(loss)) {
        throw DivergenceError(std::string(what) + " loss diverged at step " + std::to_string(step));
    }
}

}  // namespace

Autoencoder train_autoencoder(const std::vector<Tensor>& train, const std::vector<Tensor>& heldout,
                              const AutoencoderTrainConfig& cfg, TrainReport& report) {
    if (train.empty()) throw std::invalid_argument("autoencoder training set is empty");
    Autoencoder ae = Autoencoder::create(cfg.seed);
    auto params = nn::tensors_of(ae.parameters());
    AdamW opt(params, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    Rng rng(split_seed(cfg.seed, 0x7a));
    report = {};
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const auto idx = draw_indices(rng, train.size(), cfg.batch);
        const Tensor x = batch_of(train, idx);
        Tape tape;
        Tensor loss = mean(square(ae.decode(ae.encode(x)) - x));
        check_finite(loss.item(), step, "autoencoder");
        report.curve.push_back(loss.item());
        opt.zero_grad();
        tape.backward(loss);
        // Cosine decay to a tenth of the base rate.
        const double frac = static_cast<double>(step - 1) / static_cast<double>(cfg.steps);
        opt.step(cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(M_PI * frac))));
    }
    // Latent scale: population std of the raw latents over (a slice of) the training set.
    {
        NoGradGuard ng;
        double s = 0.0, s2 = 0.0;
        std::size_t count = 0;
        const std::size_t n = std::min<std::size_t>(train.size(), 512);
        for (std::size_t start = 0; start < n; start += 64) {
            std::vector<std::size_t> idx(std::min<std::size_t>(64, n - start));
            std::iota(idx.begin(), idx.end(), start);
            const Tensor z = ae.encode(batch_of(train, idx));
            for (double v : z.data()) {
                s += v;
                s2 += v * v;
                ++count;
            }
        }
        const double m = s / static_cast<double>(count);
        ae.latent_scale = std::sqrt(std::max(s2 / static_cast<double>(count) - m * m, 1e-12));
    }
    ae.freeze();
    {
        NoGradGuard ng;
        double total = 0.0;
        std::size_t pixels = 0;
        for (std::size_t start = 0; start < heldout.size(); start += 64) {
            std::vector<std::size_t> idx(std::min<std::size_t>(64, heldout.size() - start));
            std::iota(idx.begin(), idx.end(), start);
            const Tensor x = batch_of(heldout, idx);
            total += mse_of(render(ae.encode(x), ae), x) * static_cast<double>(x.size());
            pixels += x.size();
        }
        report.heldout_mse = pixels ? total / static_cast<double>(pixels) : 0.0;
    }
    report.converged = report.heldout_mse < cfg.mse_threshold;
    return ae;
}

Denoiser train_denoiser(const Autoencoder& ae, const std::vector<Tensor>& images,
                        const std::vector<std::size_t>& conditions, const NoiseSchedule& sched,
                        const DenoiserTrainConfig& cfg, TrainReport& report) {
    if (!ae.frozen) throw std::logic_error("train_denoiser requires a frozen autoencoder");
    if (images.empty() || images.size() != conditions.size()) {
        throw std::invalid_argument("denoiser training needs one condition per image");
    }
    std::vector<Tensor> latents;
    latents.reserve(images.size());
    {
        NoGradGuard ng;
        for (std::size_t start = 0; start < images.size(); start += 64) {
            std::vector<std::size_t> idx(std::min<std::size_t>(64, images.size() - start));
            std::iota(idx.begin(), idx.end(), start);
            const Tensor z = ae.encode(batch_of(images, idx));
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const auto row = z.data().subspan(k * kLatentDim, kLatentDim);
                latents.emplace_back(Shape{kLatentChannels, kLatentSize, kLatentSize},
                                     std::vector<double>(row.begin(), row.end()));
            }
        }
    }
    Denoiser den = Denoiser::create(cfg.seed);
    auto params = nn::tensors_of(den.parameters());
    AdamW opt(params, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    Rng rng(split_seed(cfg.seed, 0x7d));
    report = {};
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const auto idx = draw_indices(rng, latents.size(), cfg.batch);
        std::vector<std::size_t> ts(cfg.batch), cs(cfg.batch);
        std::vector<double> zt(cfg.batch * kLatentDim), noise(cfg.batch * kLatentDim);
        for (std::size_t k = 0; k < cfg.batch; ++k) {
            ts[k] = 1 + rng.uniform_int(sched.steps);
            cs[k] = conditions[idx[k]];
            const double a = sched.alpha_bar[ts[k]];
            const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
            const auto z0 = latents[idx[k]].data();
            for (std::size_t j = 0; j < kLatentDim; ++j) {
                const double e = rng.normal();
                noise[k * kLatentDim + j] = e;
                zt[k * kLatentDim + j] = sa * z0[j] + sn * e;
            }
        }
        const Tensor z_t(latent_shape(cfg.batch), std::move(zt));
        const Tensor target(latent_shape(cfg.batch), std::move(noise));
        Tape tape;
        Tensor loss = mean(square(den.forward(z_t, ts, cs) - target));
        check_finite(loss.item(), step, "denoiser");
        report.curve.push_back(loss.item());
        opt.zero_grad();
        tape.backward(loss);
        const double frac = static_cast<double>(step - 1) / static_cast<double>(cfg.steps);
        opt.step(cfg.lr * (0.05 + 0.475 * (1.0 + std::cos(M_PI * frac))));
    }
    den.freeze();
    const std::size_t w = std::min<std::size_t>(100, report.curve.size() / 2);
    if (w > 0) {
        const double first = std::accumulate(report.curve.begin(), report.curve.begin() + static_cast<long>(w), 0.0);
        const double last = std::accumulate(report.curve.end() - static_cast<long>(w), report.curve.end(), 0.0);
        report.converged = last < first;
    }
    return den;
}

}  // namespace hynea::ldm
