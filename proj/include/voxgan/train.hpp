#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "voxgan/arch.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/tensor.hpp"
#include "voxgan/volume.hpp"

// Wasserstein training with a single-sided gradient penalty: the critic
// minimizes mean(D(G(z))) - mean(D(x_real)) + gp_weight * penalty, the
// generator minimizes -mean(D(G(z))), alternating critic_iters_per_gen
// critic updates per generator update (Adam on both).

namespace voxgan {

struct TrainingConfig {
    std::size_t batch_size = 8;
    std::size_t critic_iters_per_gen = 5;
    float gp_weight = 10.0f;
    float learning_rate = 1e-4f;
    float adam_beta1 = 0.0f;
    float adam_beta2 = 0.9f;
    std::size_t total_gen_steps = 0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // generator steps; 0 disables
    std::string checkpoint_path;       // refreshed on periodic checkpoints

    void validate() const;
};

struct TrainingLogRow {
    std::size_t step = 0;  // 1-based generator step
    double critic_loss = 0;
    double gen_loss = 0;
    double gp = 0;
    double seconds = 0;  // wall time of this step
};

struct TrainingLog {
    std::vector<TrainingLogRow> rows;
    bool aborted = false;
    std::string diagnostic;
};

// Headerless CSV: step,critic_loss,gen_loss,gp,seconds.
void write_training_log_csv(const std::string& path, const TrainingLog& log);

struct AdamState {
    std::size_t t = 0;
    std::vector<std::vector<float>> m;  // aligned with the param tensor list;
    std::vector<std::vector<float>> v;  // empty slots for non-trainable tensors
};

AdamState make_adam_state(const std::vector<ParamTensor>& tensors);

void adam_step(std::vector<ParamTensor>& tensors, const EmbeddedParams<float>& emb,
               AdamState& state, float lr, float beta1, float beta2);

// Full optimizer state; checkpoints restore it bit-exactly.
struct TrainerState {
    GeneratorParams gen;
    CriticParams critic;
    AdamState adam_gen;
    AdamState adam_critic;
    Rng rng{0};
    std::size_t step = 0;  // completed generator steps
};

TrainerState make_trainer_state(const ArchSpec& spec, std::uint64_t seed);
Checkpoint state_to_checkpoint(const TrainerState& state);
TrainerState state_from_checkpoint(const Checkpoint& ckpt);

// Axis-aligned cubic patches on a regular stride grid, subsampled without
// replacement to max_count (0 keeps all).
std::vector<Volume> extract_patches(const Volume& v, std::size_t size,
                                    std::size_t stride, std::uint64_t seed,
                                    std::size_t max_count);

// Runs (cfg.total_gen_steps - state.step) generator updates on `state`.
TrainingLog train_steps(const std::vector<Volume>& dataset, TrainerState& state,
                        const TrainingConfig& cfg);

// Fresh-state convenience wrapper.
std::tuple<GeneratorParams, CriticParams, TrainingLog> train(
    const std::vector<Volume>& dataset, const ArchSpec& spec,
    const TrainingConfig& cfg);

// ---- loss graphs ---------------------------------------------------------

// Single-sided penalty mean(max(0, ||grad D(x_hat)||_2 - 1)^2) for an
// arbitrary differentiable critic function (scores per sample).
template <typename T>
Tensor<T> gradient_penalty_term(Graph<T>& g,
                                const std::function<Tensor<T>(Tensor<T>)>& critic_fn,
                                Shape xhat_shape, std::vector<T> xhat_values) {
    auto xhat = g.leaf(std::move(xhat_shape), std::move(xhat_values),
                       /*requires_grad=*/true);
    auto scores = critic_fn(xhat);
    auto grad = g.grad_of_output_wrt_input(g.sum(scores), xhat, /*create_graph=*/true);
    auto norms = g.l2_norm_per_sample(grad);
    auto hinge = g.max_with_zero(g.affine_scale(norms, T(1), T(-1)));
    return g.mean(g.square(hinge));
}

template <typename T>
struct CriticStep {
    Tensor<T> loss;
    Tensor<T> gp;  // penalty term before weighting; zero constant when skipped
    EmbeddedParams<T> critic_emb;
};

// real and z are constants of the step; the generator is frozen so gradients
// reach only the critic. Interpolation draws one epsilon per sample.
template <typename T>
CriticStep<T> build_critic_step(Graph<T>& g, const CriticParams& critic,
                                bool critic_requires_grad,
                                const GeneratorParams& gen, Tensor<T> real_batch,
                                Tensor<T> z_batch, T gp_weight, Rng& eps_rng) {
    const Shape rs = real_batch.shape();
    const Shape zs = z_batch.shape();
    if (rs.empty() || zs.empty() || rs[0] != zs[0])
        throw std::invalid_argument("critic step: real and latent batch sizes differ");

    auto critic_emb = embed_params(g, critic.tensors, critic_requires_grad);
    auto gen_emb = embed_params(g, gen.tensors, false);
    auto fake = generator_forward(g, gen, gen_emb, z_batch, BnMode::train);

    auto scores_fake = critic_forward(g, critic, critic_emb, fake);
    auto scores_real = critic_forward(g, critic, critic_emb, real_batch);
    auto wdist = g.sub(g.mean(scores_fake), g.mean(scores_real));

    CriticStep<T> step{wdist, g.scalar_const(T(0)), std::move(critic_emb)};
    if (gp_weight != T(0)) {
        const std::size_t n = rs[0];
        const std::size_t inner = shape_numel(rs) / n;
        const auto& rv = real_batch.values();
        const auto& fv = fake.values();
        std::vector<T> xhat(rv.size());
        for (std::size_t i = 0; i < n; ++i) {
            const T eps = static_cast<T>(eps_rng.uniform());
            for (std::size_t j = 0; j < inner; ++j) {
                const std::size_t at = i * inner + j;
                xhat[at] = eps * rv[at] + (T(1) - eps) * fv[at];
            }
        }
        auto& emb = step.critic_emb;
        step.gp = gradient_penalty_term<T>(
            g,
            [&g, &critic, &emb](Tensor<T> x) {
                return critic_forward(g, critic, emb, x);
            },
            rs, std::move(xhat));
        step.loss = g.add(step.loss, g.affine_scale(step.gp, gp_weight, T(0)));
    }
    return step;
}

// mean(D(G(z))) - mean(D(x_real)) + gp_weight * penalty.
template <typename T>
Tensor<T> critic_loss(Graph<T>& g, const CriticParams& critic,
                      const GeneratorParams& gen, Tensor<T> real_batch,
                      Tensor<T> z_batch, T gp_weight, Rng& eps_rng) {
    return build_critic_step(g, critic, true, gen, real_batch, z_batch, gp_weight,
                             eps_rng)
        .loss;
}

template <typename T>
struct GeneratorStep {
    Tensor<T> loss;
    EmbeddedParams<T> gen_emb;
};

template <typename T>
GeneratorStep<T> build_generator_step(Graph<T>& g, const CriticParams& critic,
                                      const GeneratorParams& gen, Tensor<T> z_batch,
                                      GeneratorParams* running_update) {
    auto gen_emb = embed_params(g, gen.tensors, true);
    auto critic_emb = embed_params(g, critic.tensors, false);
    auto fake =
        generator_forward(g, gen, gen_emb, z_batch, BnMode::train, running_update);
    auto scores = critic_forward(g, critic, critic_emb, fake);
    auto loss = g.affine_scale(g.mean(scores), T(-1), T(0));
    return {loss, std::move(gen_emb)};
}

// -mean(D(G(z))).
template <typename T>
Tensor<T> generator_loss(Graph<T>& g, const CriticParams& critic,
                         const GeneratorParams& gen, Tensor<T> z_batch) {
    return build_generator_step(g, critic, gen, z_batch, nullptr).loss;
}

}  // namespace voxgan
