#include "voxgan/condition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "voxgan/rng.hpp"

namespace voxgan {

void ConditioningProblem::validate(const ArchSpec& spec) const {
    const std::size_t s = spec.output_size;
    if (y.dims != std::array<std::size_t, 3>{s, s, s} || mask.dims != y.dims)
        throw dimension_error(
            "ConditioningProblem: data and mask dims must equal output_size^3");
    if (mask.count() == 0)
        throw std::invalid_argument("ConditioningProblem: mask has no voxels");
    if (!(perceptual_weight >= 0.0f))
        throw std::invalid_argument("ConditioningProblem: perceptual_weight must be >= 0");
    if (!(content_tol > 0.0f))
        throw std::invalid_argument("ConditioningProblem: content_tol must be positive");
    if (!(lr > 0.0f))
        throw std::invalid_argument("ConditioningProblem: lr must be positive");
    if (!(momentum >= 0.0f && momentum < 1.0f))
        throw std::invalid_argument("ConditioningProblem: momentum must lie in [0, 1)");
    if (restarts == 0)
        throw std::invalid_argument("ConditioningProblem: restarts must be >= 1");
    if (mode == ConditionMode::binary) {
        for (std::size_t i = 0; i < mask.data.size(); ++i)
            if (mask.data[i] != 0 && y.data[i] != 0.0f && y.data[i] != 1.0f)
                throw std::invalid_argument(
                    "ConditioningProblem: binary mode requires indicator data at mask");
    }
    if (!initial_z.empty() && initial_z.size() != spec.latent_dim)
        throw dimension_error("ConditioningProblem: initial_z length must equal latent_dim");
}

Volume threshold_volume(const Volume& gray, float level) {
    Volume out(gray.dims, VoxelType::binary_u8);
    for (std::size_t i = 0; i < gray.data.size(); ++i)
        out.data[i] = gray.data[i] >= level ? 1.0f : 0.0f;
    return out;
}

Volume apply_mask(const Volume& v, const Mask& mask) {
    if (v.dims != mask.dims)
        throw dimension_error("apply_mask: volume and mask dims differ");
    Volume out(v.dims, v.dtype);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        out.data[i] = mask.data[i] != 0 ? v.data[i] : 0.0f;
    return out;
}

double accuracy(const Volume& thresholded, const Volume& y, const Mask& mask) {
    if (thresholded.dims != y.dims || y.dims != mask.dims)
        throw dimension_error("accuracy: operand dims differ");
    const std::size_t total = mask.count();
    if (total == 0) throw std::invalid_argument("accuracy: empty mask");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        if (mask.data[i] == 0) continue;
        const float a = thresholded.data[i];
        const float b = y.data[i];
        if ((a != 0.0f && a != 1.0f) || (b != 0.0f && b != 1.0f))
            throw std::invalid_argument("accuracy: operands must be binary at mask");
        hits += a == b ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

Mask make_plane_mask(std::array<std::size_t, 3> dims, const std::vector<Axis>& axes) {
    if (axes.empty())
        throw std::invalid_argument("make_plane_mask: axes set must not be empty");
    Mask m(dims);
    for (Axis axis : axes) {
        const auto a = static_cast<std::size_t>(axis);
        const std::size_t mid = dims[a] / 2;
        for (std::size_t z = 0; z < dims[2]; ++z)
            for (std::size_t y = 0; y < dims[1]; ++y)
                for (std::size_t x = 0; x < dims[0]; ++x) {
                    const std::size_t coord[3] = {x, y, z};
                    if (coord[a] == mid) m.data[m.index(x, y, z)] = 1;
                }
    }
    return m;
}

Mask make_well_mask(std::array<std::size_t, 3> dims, std::size_t ix, std::size_t iy) {
    if (ix >= dims[0] || iy >= dims[1])
        throw std::invalid_argument("make_well_mask: column outside volume");
    Mask m(dims);
    for (std::size_t z = 0; z < dims[2]; ++z) m.data[m.index(ix, iy, z)] = 1;
    return m;
}

Mask make_well_mask(std::array<std::size_t, 3> dims) {
    return make_well_mask(dims, dims[0] / 2, dims[1] / 2);
}

namespace {

struct Attempt {
    std::vector<float> z;
    Volume volume;
    Volume thresholded;
    double content = 0, perceptual = 0, acc = 0;
    std::size_t iterations = 0;
    bool converged = false;
    bool aborted = false;
};

bool better(const Attempt& a, const Attempt& b) {
    // converged first, then accuracy, then content loss
    if (a.converged != b.converged) return a.converged;
    if (a.acc != b.acc) return a.acc > b.acc;
    return a.content < b.content;
}

}  // namespace

ConditionedRealization condition(const ConditioningProblem& problem,
                                 const GeneratorParams& gen,
                                 const CriticParams& critic) {
    problem.validate(gen.spec);
    const std::size_t latent = gen.spec.latent_dim;
    const std::size_t s = gen.spec.output_size;
    Rng rng(problem.seed ^ 0x9E3779B97F4A7C15ULL);

    Attempt best;
    best.content = std::numeric_limits<double>::infinity();
    best.acc = -1.0;
    std::size_t attempts_used = 0;

    for (std::size_t attempt = 0; attempt < problem.restarts; ++attempt) {
        ++attempts_used;
        std::vector<float> z(latent);
        if (attempt == 0 && !problem.initial_z.empty())
            z = problem.initial_z;
        else
            for (auto& v : z) v = static_cast<float>(rng.normal());
        std::vector<float> velocity(latent, 0.0f);

        Attempt cur;
        for (std::size_t iter = 0;; ++iter) {
            bool finite = true;
            for (float v : z) finite = finite && std::isfinite(v);
            if (!finite) {
                cur.aborted = true;
                break;
            }

            Graph<float> g;
            auto zt = g.leaf({1, latent}, z, true);
            auto emb = embed_params(g, gen.tensors, false);
            auto out = generator_forward(g, gen, emb, zt, BnMode::eval);

            auto content = problem.mode == ConditionMode::binary
                               ? content_loss_bce(g, out, problem.y, problem.mask)
                               : content_loss_mse(g, out, problem.y, problem.mask);
            cur.content = static_cast<double>(content.scalar());
            cur.z = z;
            cur.iterations = iter;

            // Stopping rules are evaluated before each update so an exact
            // initial guess converges in zero iterations.
            if (problem.mode == ConditionMode::binary) {
                Volume vol({s, s, s}, VoxelType::gray_f32);
                vol.data = out.values();
                cur.volume = std::move(vol);
                cur.thresholded = threshold_volume(cur.volume);
                cur.acc = accuracy(cur.thresholded, problem.y, problem.mask);
                if (cur.acc == 1.0) {
                    cur.converged = true;
                    break;
                }
            } else {
                Volume vol({s, s, s}, VoxelType::gray_f32);
                vol.data = out.values();
                cur.volume = std::move(vol);
                if (cur.content < static_cast<double>(problem.content_tol)) {
                    cur.converged = true;
                    break;
                }
            }
            if (iter == problem.max_iters) break;

            auto loss = content;
            if (problem.perceptual_weight != 0.0f) {
                auto perc = perceptual_loss(g, critic, out, problem.perceptual_form);
                loss = g.add(content, g.affine_scale(perc, problem.perceptual_weight,
                                                     0.0f));
            }
            if (!std::isfinite(loss.scalar())) {
                cur.aborted = true;
                break;
            }
            g.backward(loss);
            const std::vector<float>* grad = zt.grad();
            if (grad == nullptr) break;  // no gradient path; nothing to do
            bool grad_finite = true;
            for (float v : *grad) grad_finite = grad_finite && std::isfinite(v);
            if (!grad_finite) {
                cur.aborted = true;
                break;
            }
            for (std::size_t i = 0; i < latent; ++i) {
                velocity[i] = problem.momentum * velocity[i] + (*grad)[i];
                z[i] -= problem.lr * velocity[i];
            }
        }

        if (!cur.aborted && better(cur, best)) best = std::move(cur);
        if (best.converged) break;
    }

    ConditionedRealization result;
    result.attempts = attempts_used;
    result.converged = best.converged;
    result.iterations = best.iterations;
    result.content_loss = best.content;
    result.accuracy = best.acc < 0 ? 0.0 : best.acc;
    result.z_final = best.z;
    result.volume = std::move(best.volume);
    result.thresholded = std::move(best.thresholded);

    if (!result.z_final.empty()) {
        // Report the perceptual term of the final state.
        Graph<float> g;
        auto zt = g.constant({1, latent}, result.z_final);
        auto out = generate(g, gen, zt);
        result.perceptual_loss = static_cast<double>(
            perceptual_loss(g, critic, out, problem.perceptual_form).scalar());
    }
    return result;
}

}  // namespace voxgan
