#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxgan/arch.hpp"
#include "voxgan/tensor.hpp"
#include "voxgan/volume.hpp"

// Conditioning by latent-vector optimization: momentum SGD on z minimizing
// L_total = L_content + lambda * L_perceptual. Binary problems drive the
// gradient through masked cross-entropy and stop at unit accuracy of the
// 0.5-thresholded volume; continuous problems use masked mean-squared error
// and stop below content_tol.

namespace voxgan {

enum class ConditionMode : std::uint8_t { binary = 0, continuous = 1 };
enum class PerceptualForm : std::uint8_t { critic_score = 0, log_sigmoid = 1 };

struct ConditioningProblem {
    Volume y;   // conditioning data in the generator's [0,1] range
    Mask mask;  // at least one voxel
    ConditionMode mode = ConditionMode::binary;
    float perceptual_weight = 0.01f;
    float content_tol = 1e-3f;  // continuous stopping rule
    std::size_t max_iters = 5000;
    float lr = 0.05f;
    float momentum = 0.9f;
    std::size_t restarts = 5;  // total attempts
    std::uint64_t seed = 0;
    PerceptualForm perceptual_form = PerceptualForm::critic_score;
    std::vector<float> initial_z;  // first attempt override; empty draws per seed

    void validate(const ArchSpec& spec) const;
};

struct ConditionedRealization {
    std::vector<float> z_final;
    Volume volume;       // gray output at z_final
    Volume thresholded;  // binary mode only
    double content_loss = 0;
    double perceptual_loss = 0;
    double accuracy = 0;  // binary mode only
    std::size_t iterations = 0;
    std::size_t attempts = 0;
    bool converged = false;
};

// --- plain volume helpers --------------------------------------------------

// Indicator at the 0.5 level: voxel >= 0.5 maps to 1.
Volume threshold_volume(const Volume& gray, float level = 0.5f);

// Values of v at mask voxels, zero elsewhere (the mask's slicer companion).
Volume apply_mask(const Volume& v, const Mask& mask);

// (TP + TN) / (P + N) over mask voxels of two indicator volumes.
double accuracy(const Volume& thresholded, const Volume& y, const Mask& mask);

// One-voxel-thick center cross-sections orthogonal to each listed axis.
Mask make_plane_mask(std::array<std::size_t, 3> dims, const std::vector<Axis>& axes);

// Vertical column of nz voxels at (ix, iy); center column when omitted.
Mask make_well_mask(std::array<std::size_t, 3> dims, std::size_t ix, std::size_t iy);
Mask make_well_mask(std::array<std::size_t, 3> dims);

// --- loss graphs -------------------------------------------------------------

namespace detail {

template <typename T>
void check_cond_operand(const Tensor<T>& gen_out, const Volume& y, const Mask& mask,
                        const char* who) {
    const Shape& s = gen_out.shape();
    if (s.size() != 5 || s[0] != 1 || s[1] != 1)
        throw dimension_error(std::string(who) +
                              ": generator output must be [1,1,D,H,W], got " +
                              shape_str(s));
    if (y.dims != mask.dims || s[2] != y.dims[2] || s[3] != y.dims[1] ||
        s[4] != y.dims[0])
        throw dimension_error(std::string(who) +
                              ": conditioning data, mask, and output disagree");
    if (mask.count() == 0)
        throw std::invalid_argument(std::string(who) + ": empty mask");
}

template <typename T>
Tensor<T> volume_const(Graph<T>& g, const Volume& v, const Shape& like) {
    std::vector<T> vals(v.data.begin(), v.data.end());
    return g.constant(like, std::move(vals));
}

template <typename T>
Tensor<T> mask_const(Graph<T>& g, const Mask& m, const Shape& like) {
    std::vector<T> vals(m.data.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<T>(m.data[i]);
    return g.constant(like, std::move(vals));
}

}  // namespace detail

// Mean over masked voxels of (G(z) - y)^2; unmasked voxels contribute zero.
template <typename T>
Tensor<T> content_loss_mse(Graph<T>& g, Tensor<T> gen_out, const Volume& y,
                           const Mask& mask) {
    detail::check_cond_operand(gen_out, y, mask, "content_loss_mse");
    const Shape like = gen_out.shape();
    auto diff = g.sub(gen_out, detail::volume_const(g, y, like));
    auto masked = g.mul(diff, detail::mask_const(g, mask, like));
    const T inv = T(1) / static_cast<T>(mask.count());
    return g.affine_scale(g.sum(g.square(masked)), inv, T(0));
}

// Mean over masked voxels of -[y log p + (1-y) log(1-p)], p clamped to
// [1e-6, 1-1e-6].
template <typename T>
Tensor<T> content_loss_bce(Graph<T>& g, Tensor<T> gen_out, const Volume& y,
                           const Mask& mask) {
    detail::check_cond_operand(gen_out, y, mask, "content_loss_bce");
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        if (mask.data[i] != 0 && y.data[i] != 0.0f && y.data[i] != 1.0f)
            throw std::invalid_argument(
                "content_loss_bce: conditioning data must be binary at mask voxels");
    const Shape like = gen_out.shape();
    const T lo = T(1e-6), hi = T(1) - T(1e-6);
    auto p = g.clamp(gen_out, lo, hi);
    auto yt = detail::volume_const(g, y, like);
    auto pos = g.mul(yt, g.log(p));
    auto neg = g.mul(g.affine_scale(yt, T(-1), T(1)),
                     g.log(g.affine_scale(p, T(-1), T(1))));
    auto masked = g.mul(detail::mask_const(g, mask, like), g.add(pos, neg));
    const T scale = T(-1) / static_cast<T>(mask.count());
    return g.affine_scale(g.sum(masked), scale, T(0));
}

// critic_score form: -mean(D(x)); log_sigmoid form: mean(log(1 - sigmoid(D(x)))).
template <typename T>
Tensor<T> perceptual_loss(Graph<T>& g, const CriticParams& critic, Tensor<T> gen_out,
                          PerceptualForm form) {
    auto emb = embed_params(g, critic.tensors, false);
    auto scores = critic_forward(g, critic, emb, gen_out);
    if (form == PerceptualForm::critic_score)
        return g.affine_scale(g.mean(scores), T(-1), T(0));
    auto one_minus = g.affine_scale(g.sigmoid(scores), T(-1), T(1));
    return g.mean(g.log(g.clamp_min(one_minus, T(1e-12))));
}

// Mode-appropriate content term plus weighted perceptual term; a zero weight
// returns the content loss itself.
template <typename T>
Tensor<T> total_loss(Graph<T>& g, const ConditioningProblem& problem, Tensor<T> z,
                     const GeneratorParams& gen, const CriticParams& critic) {
    auto emb = embed_params(g, gen.tensors, false);
    auto out = generator_forward(g, gen, emb, z, BnMode::eval);
    auto content = problem.mode == ConditionMode::binary
                       ? content_loss_bce(g, out, problem.y, problem.mask)
                       : content_loss_mse(g, out, problem.y, problem.mask);
    if (problem.perceptual_weight == 0.0f) return content;
    auto perc = perceptual_loss(g, critic, out, problem.perceptual_form);
    return g.add(content,
                 g.affine_scale(perc, T(problem.perceptual_weight), T(0)));
}

ConditionedRealization condition(const ConditioningProblem& problem,
                                 const GeneratorParams& gen,
                                 const CriticParams& critic);

}  // namespace voxgan
