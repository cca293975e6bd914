#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxgan/tensor.hpp"
#include "voxgan/volume.hpp"

// DCGAN-style 3-d generator and critic. The generator projects a flat latent
// vector to a 4^3 grid and doubles the spatial extent per stage through
// 4x4x4 stride-2 transposed convolutions (batch norm + relu on hidden
// stages, tanh mapped to [0,1] at the output). The critic mirrors it with
// stride-2 convolutions and leaky relu, no normalization, and emits one raw
// score per sample.

namespace voxgan {

enum class OutputMode : std::uint8_t { indicator = 0, gray = 1 };

struct ArchSpec {
    std::size_t latent_dim = 64;
    std::size_t base_channels = 32;
    std::size_t output_size = 32;  // power of two, >= 16
    OutputMode output_mode = OutputMode::indicator;
    float critic_slope = 0.2f;

    void validate() const;

    // Upsampling stages after the initial 1 -> 4 projection.
    std::size_t up_stages() const {
        std::size_t n = 0, s = output_size;
        while (s > 4) {
            s /= 2;
            ++n;
        }
        return n;
    }

    // Generator stage output channels: projection, hidden stages, final 1.
    std::vector<std::size_t> generator_channels() const {
        const std::size_t n = up_stages();
        std::vector<std::size_t> c;
        for (std::size_t i = 0; i < n; ++i)
            c.push_back(base_channels << (n - 1 - i));
        c.push_back(1);
        return c;
    }

    // Critic stage output channels, final scalar stage excluded.
    std::vector<std::size_t> critic_channels() const {
        const std::size_t n = up_stages();
        std::vector<std::size_t> c;
        for (std::size_t i = 0; i < n; ++i) c.push_back(base_channels << i);
        return c;
    }
};

struct ParamTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
    bool trainable = true;
};

struct GeneratorParams {
    ArchSpec spec;
    std::vector<ParamTensor> tensors;
};

struct CriticParams {
    ArchSpec spec;
    std::vector<ParamTensor> tensors;
};

// Kernels ~ N(0, 0.02), biases 0, batch-norm scale 1 / shift 0, running
// mean 0 / var 1. Deterministic per seed.
std::pair<GeneratorParams, CriticParams> init_params(const ArchSpec& spec,
                                                     std::uint64_t seed);

std::size_t parameter_count(const std::vector<ParamTensor>& tensors);

// I.i.d. standard normal draws, row-major [n, latent_dim].
std::vector<float> sample_latent(std::size_t n, std::size_t latent_dim,
                                 std::uint64_t seed);

// Checkpoint conversion; load validates names and shapes.
void append_param_entries(Checkpoint& ckpt, const std::vector<ParamTensor>& tensors);
void load_param_entries(const Checkpoint& ckpt, std::vector<ParamTensor>& tensors);

enum class BnMode { train, eval };

// Graph-embedded parameter handles, aligned with the params tensor list.
template <typename T>
struct EmbeddedParams {
    std::vector<Tensor<T>> handles;
};

template <typename T>
EmbeddedParams<T> embed_params(Graph<T>& g, const std::vector<ParamTensor>& tensors,
                               bool requires_grad) {
    EmbeddedParams<T> out;
    out.handles.reserve(tensors.size());
    for (const auto& p : tensors) {
        std::vector<T> vals(p.values.begin(), p.values.end());
        out.handles.push_back(
            g.leaf(p.shape, std::move(vals), requires_grad && p.trainable));
    }
    return out;
}

namespace detail {

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.9f;  // kept fraction of the running value

template <typename T>
Tensor<T> batch_norm(Graph<T>& g, Tensor<T> h, Tensor<T> gamma, Tensor<T> beta,
                     Tensor<T> rmean, Tensor<T> rvar, BnMode mode,
                     ParamTensor* update_rmean, ParamTensor* update_rvar) {
    const Shape hs = h.shape();
    if (mode == BnMode::eval) {
        auto inv = g.div(g.full({hs[1]}, T(1)),
                         g.sqrt(g.affine_scale(rvar, T(1), T(kBnEps))));
        auto hc = g.sub(h, g.channel_broadcast(rmean, hs));
        auto hhat = g.mul(hc, g.channel_broadcast(inv, hs));
        return g.add(g.mul(hhat, g.channel_broadcast(gamma, hs)),
                     g.channel_broadcast(beta, hs));
    }
    const T inv_count = T(1) / static_cast<T>(shape_numel(hs) / hs[1]);
    auto mu = g.affine_scale(g.channel_sum(h), inv_count, T(0));
    auto hc = g.sub(h, g.channel_broadcast(mu, hs));
    auto var = g.affine_scale(g.channel_sum(g.square(hc)), inv_count, T(0));
    auto inv = g.div(g.full({hs[1]}, T(1)),
                     g.sqrt(g.affine_scale(var, T(1), T(kBnEps))));
    auto hhat = g.mul(hc, g.channel_broadcast(inv, hs));
    if (update_rmean != nullptr && update_rvar != nullptr) {
        const auto& mv = mu.values();
        const auto& vv = var.values();
        for (std::size_t c = 0; c < mv.size(); ++c) {
            update_rmean->values[c] = kBnMomentum * update_rmean->values[c] +
                                      (1.0f - kBnMomentum) * static_cast<float>(mv[c]);
            update_rvar->values[c] = kBnMomentum * update_rvar->values[c] +
                                     (1.0f - kBnMomentum) * static_cast<float>(vv[c]);
        }
    }
    return g.add(g.mul(hhat, g.channel_broadcast(gamma, hs)),
                 g.channel_broadcast(beta, hs));
}

}  // namespace detail

// Forward pass of the generator over embedded parameters. In train mode the
// batch statistics drive normalization; running stats are refreshed when
// `update` points at the live parameter struct.
template <typename T>
Tensor<T> generator_forward(Graph<T>& g, const GeneratorParams& params,
                            const EmbeddedParams<T>& emb, Tensor<T> z, BnMode mode,
                            GeneratorParams* update = nullptr) {
    const ArchSpec& spec = params.spec;
    const Shape zs = z.shape();
    if (zs.size() != 2 || zs[1] != spec.latent_dim)
        throw dimension_error("generator_forward: latent must be [N," +
                              std::to_string(spec.latent_dim) + "], got " +
                              shape_str(zs));
    for (T v : z.values())
        if (!std::isfinite(static_cast<double>(v)))
            throw std::invalid_argument("generator_forward: latent contains a"
                                        " non-finite value");

    const std::size_t stages = spec.up_stages() + 1;
    auto h = g.reshape(z, {zs[0], spec.latent_dim, 1, 1, 1});
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < stages; ++i) {
        const bool projection = i == 0;
        const bool final_stage = i + 1 == stages;
        auto kernel = emb.handles[cursor++];
        auto bias = emb.handles[cursor++];
        h = g.conv_transpose3d(h, kernel, projection ? 1 : 2, projection ? 0 : 1);
        h = g.add(h, g.channel_broadcast(bias, h.shape()));
        if (!final_stage) {
            auto gamma = emb.handles[cursor++];
            auto beta = emb.handles[cursor++];
            auto rmean = emb.handles[cursor++];
            auto rvar = emb.handles[cursor++];
            ParamTensor* urm = nullptr;
            ParamTensor* urv = nullptr;
            if (update != nullptr && mode == BnMode::train) {
                // rmean/rvar follow kernel, bias, gamma, beta in the layout
                urm = &update->tensors[cursor - 2];
                urv = &update->tensors[cursor - 1];
            }
            h = detail::batch_norm(g, h, gamma, beta, rmean, rvar, mode, urm, urv);
            h = g.relu(h);
        } else {
            h = g.affine_scale(g.tanh(h), T(0.5), T(0.5));
        }
    }
    return h;
}

// Critic forward: [N,1,S,S,S] -> [N] raw scores.
template <typename T>
Tensor<T> critic_forward(Graph<T>& g, const CriticParams& params,
                         const EmbeddedParams<T>& emb, Tensor<T> x) {
    const ArchSpec& spec = params.spec;
    const Shape xs = x.shape();
    const std::size_t s = spec.output_size;
    if (xs.size() != 5 || xs[1] != 1 || xs[2] != s || xs[3] != s || xs[4] != s)
        throw dimension_error("critic_forward: expected [N,1," + std::to_string(s) +
                              "^3], got " + shape_str(xs));

    const std::size_t down = spec.up_stages();
    auto h = x;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < down; ++i) {
        auto kernel = emb.handles[cursor++];
        auto bias = emb.handles[cursor++];
        h = g.conv3d(h, kernel, 2, 1);
        h = g.add(h, g.channel_broadcast(bias, h.shape()));
        h = g.leaky_relu(h, T(spec.critic_slope));
    }
    auto kernel = emb.handles[cursor++];
    auto bias = emb.handles[cursor++];
    h = g.conv3d(h, kernel, 1, 0);
    h = g.add(h, g.channel_broadcast(bias, h.shape()));
    return g.reshape(h, {xs[0]});
}

// Eval-mode sampling: deterministic volume for a given z.
template <typename T>
Tensor<T> generate(Graph<T>& g, const GeneratorParams& params, Tensor<T> z) {
    auto emb = embed_params(g, params.tensors, false);
    return generator_forward(g, params, emb, z, BnMode::eval);
}

template <typename T>
Tensor<T> criticize(Graph<T>& g, const CriticParams& params, Tensor<T> x) {
    auto emb = embed_params(g, params.tensors, false);
    return critic_forward(g, params, emb, x);
}

// One generated sample [1,1,S,S,S] copied out as a gray volume.
Volume volume_from_sample(const std::vector<float>& values, std::size_t size);

}  // namespace voxgan
