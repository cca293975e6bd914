#include "voxgan/arch.hpp"

#include <stdexcept>

#include "voxgan/rng.hpp"

namespace voxgan {

namespace {

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

ParamTensor make_tensor(std::string name, Shape shape, float fill, bool trainable) {
    ParamTensor p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.values.assign(shape_numel(p.shape), fill);
    p.trainable = trainable;
    return p;
}

ParamTensor make_kernel(std::string name, Shape shape, Rng& rng) {
    ParamTensor p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.values.resize(shape_numel(p.shape));
    for (auto& v : p.values) v = static_cast<float>(rng.normal() * 0.02);
    return p;
}

}  // namespace

void ArchSpec::validate() const {
    if (latent_dim == 0) throw std::invalid_argument("ArchSpec: latent_dim must be >= 1");
    if (base_channels == 0)
        throw std::invalid_argument("ArchSpec: base_channels must be >= 1");
    if (!is_pow2(output_size))
        throw std::invalid_argument("ArchSpec: output_size must be a power of two");
    if (output_size < 16)
        throw std::invalid_argument("ArchSpec: output_size must be >= 16");
    if (!(critic_slope > 0.0f && critic_slope < 1.0f))
        throw std::invalid_argument("ArchSpec: critic_slope must lie in (0, 1)");
}

std::pair<GeneratorParams, CriticParams> init_params(const ArchSpec& spec,
                                                     std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);

    GeneratorParams gen;
    gen.spec = spec;
    const auto gch = spec.generator_channels();
    std::size_t cin = spec.latent_dim;
    for (std::size_t i = 0; i < gch.size(); ++i) {
        const std::string tag = "g.stage" + std::to_string(i) + ".";
        const std::size_t cout = gch[i];
        gen.tensors.push_back(make_kernel(tag + "kernel", {cin, cout, 4, 4, 4}, rng));
        gen.tensors.push_back(make_tensor(tag + "bias", {cout}, 0.0f, true));
        if (i + 1 < gch.size()) {
            gen.tensors.push_back(make_tensor(tag + "bn_gamma", {cout}, 1.0f, true));
            gen.tensors.push_back(make_tensor(tag + "bn_beta", {cout}, 0.0f, true));
            gen.tensors.push_back(make_tensor(tag + "bn_rmean", {cout}, 0.0f, false));
            gen.tensors.push_back(make_tensor(tag + "bn_rvar", {cout}, 1.0f, false));
        }
        cin = cout;
    }

    CriticParams critic;
    critic.spec = spec;
    const auto dch = spec.critic_channels();
    cin = 1;
    for (std::size_t i = 0; i < dch.size(); ++i) {
        const std::string tag = "d.stage" + std::to_string(i) + ".";
        critic.tensors.push_back(make_kernel(tag + "kernel", {dch[i], cin, 4, 4, 4}, rng));
        critic.tensors.push_back(make_tensor(tag + "bias", {dch[i]}, 0.0f, true));
        cin = dch[i];
    }
    const std::string tag = "d.stage" + std::to_string(dch.size()) + ".";
    critic.tensors.push_back(make_kernel(tag + "kernel", {1, cin, 4, 4, 4}, rng));
    critic.tensors.push_back(make_tensor(tag + "bias", {1}, 0.0f, true));

    return {std::move(gen), std::move(critic)};
}

std::size_t parameter_count(const std::vector<ParamTensor>& tensors) {
    std::size_t n = 0;
    for (const auto& p : tensors) n += p.values.size();
    return n;
}

std::vector<float> sample_latent(std::size_t n, std::size_t latent_dim,
                                 std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("sample_latent: n must be >= 1");
    if (latent_dim == 0)
        throw std::invalid_argument("sample_latent: latent_dim must be >= 1");
    Rng rng(seed);
    std::vector<float> z(n * latent_dim);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    return z;
}

void append_param_entries(Checkpoint& ckpt, const std::vector<ParamTensor>& tensors) {
    for (const auto& p : tensors) {
        CheckpointEntry e;
        e.name = p.name;
        for (std::size_t d : p.shape) e.dims.push_back(static_cast<std::uint32_t>(d));
        e.values = p.values;
        ckpt.entries.push_back(std::move(e));
    }
}

void load_param_entries(const Checkpoint& ckpt, std::vector<ParamTensor>& tensors) {
    for (auto& p : tensors) {
        const CheckpointEntry* e = ckpt.find(p.name);
        if (e == nullptr)
            throw std::invalid_argument("checkpoint is missing tensor '" + p.name + "'");
        Shape got(e->dims.begin(), e->dims.end());
        if (got != p.shape)
            throw dimension_error("checkpoint tensor '" + p.name + "' has shape " +
                                  shape_str(got) + ", expected " + shape_str(p.shape));
        p.values = e->values;
    }
}

Volume volume_from_sample(const std::vector<float>& values, std::size_t size) {
    if (values.size() != size * size * size)
        throw dimension_error("volume_from_sample: value count does not match size^3");
    Volume v({size, size, size}, VoxelType::gray_f32);
    // Tensor [1,1,D,H,W] with W fastest maps onto x-fastest voxels directly
    // (W->x, H->y, D->z).
    v.data = values;
    return v;
}

}  // namespace voxgan
