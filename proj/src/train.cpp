#include "voxgan/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace voxgan {

namespace {

std::array<float, 4> u64_to_f32x4(std::uint64_t v) {
    return {static_cast<float>(v & 0xFFFF), static_cast<float>((v >> 16) & 0xFFFF),
            static_cast<float>((v >> 32) & 0xFFFF),
            static_cast<float>((v >> 48) & 0xFFFF)};
}

std::uint64_t f32x4_to_u64(const std::vector<float>& v) {
    std::uint64_t out = 0;
    for (int i = 3; i >= 0; --i)
        out = (out << 16) | static_cast<std::uint64_t>(v[static_cast<std::size_t>(i)]);
    return out;
}

bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void fill_batch(const std::vector<Volume>& dataset, const std::vector<std::size_t>& idx,
                std::vector<float>& out) {
    const std::size_t voxels = dataset[0].numel();
    out.resize(idx.size() * voxels);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& v = dataset[idx[b]].data;
        std::copy(v.begin(), v.end(), out.begin() + b * voxels);
    }
}

}  // namespace

void TrainingConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainingConfig: batch_size must be >= 1");
    if (critic_iters_per_gen == 0)
        throw std::invalid_argument("TrainingConfig: critic_iters_per_gen must be >= 1");
    if (!(gp_weight >= 0.0f))
        throw std::invalid_argument("TrainingConfig: gp_weight must be >= 0");
    if (!(learning_rate > 0.0f))
        throw std::invalid_argument("TrainingConfig: learning_rate must be positive");
    if (!(adam_beta1 >= 0.0f && adam_beta1 < 1.0f) ||
        !(adam_beta2 >= 0.0f && adam_beta2 < 1.0f))
        throw std::invalid_argument("TrainingConfig: adam betas must lie in [0, 1)");
}

void write_training_log_csv(const std::string& path, const TrainingLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open log for writing: " + path);
    for (const auto& r : log.rows)
        out << r.step << ',' << r.critic_loss << ',' << r.gen_loss << ',' << r.gp << ','
            << r.seconds << '\n';
}

AdamState make_adam_state(const std::vector<ParamTensor>& tensors) {
    AdamState st;
    st.m.resize(tensors.size());
    st.v.resize(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (!tensors[i].trainable) continue;
        st.m[i].assign(tensors[i].values.size(), 0.0f);
        st.v[i].assign(tensors[i].values.size(), 0.0f);
    }
    return st;
}

void adam_step(std::vector<ParamTensor>& tensors, const EmbeddedParams<float>& emb,
               AdamState& state, float lr, float beta1, float beta2) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1),
                                      static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2),
                                      static_cast<double>(state.t));
    constexpr float eps = 1e-8f;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (!tensors[i].trainable) continue;
        const std::vector<float>* grad = emb.handles[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& p = tensors[i].values;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const float gj = grad != nullptr ? (*grad)[j] : 0.0f;
            m[j] = beta1 * m[j] + (1.0f - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0f - beta2) * gj * gj;
            const float mhat = static_cast<float>(m[j] / bc1);
            const float vhat = static_cast<float>(v[j] / bc2);
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

TrainerState make_trainer_state(const ArchSpec& spec, std::uint64_t seed) {
    TrainerState st;
    auto [gen, critic] = init_params(spec, seed);
    st.gen = std::move(gen);
    st.critic = std::move(critic);
    st.adam_gen = make_adam_state(st.gen.tensors);
    st.adam_critic = make_adam_state(st.critic.tensors);
    st.rng = Rng(seed ^ 0x5851F42D4C957F2DULL);
    st.step = 0;
    return st;
}

Checkpoint state_to_checkpoint(const TrainerState& state) {
    Checkpoint ckpt;
    append_param_entries(ckpt, state.gen.tensors);
    append_param_entries(ckpt, state.critic.tensors);

    auto append_adam = [&ckpt](const char* prefix, const std::vector<ParamTensor>& ts,
                               const AdamState& st) {
        for (std::size_t i = 0; i < ts.size(); ++i) {
            if (!ts[i].trainable) continue;
            CheckpointEntry m{std::string(prefix) + ts[i].name + ".m",
                              {static_cast<std::uint32_t>(st.m[i].size())}, st.m[i]};
            CheckpointEntry v{std::string(prefix) + ts[i].name + ".v",
                              {static_cast<std::uint32_t>(st.v[i].size())}, st.v[i]};
            ckpt.entries.push_back(std::move(m));
            ckpt.entries.push_back(std::move(v));
        }
    };
    append_adam("adam.", state.gen.tensors, state.adam_gen);
    append_adam("adam.", state.critic.tensors, state.adam_critic);

    const ArchSpec& s = state.gen.spec;
    ckpt.entries.push_back(
        {"__meta.arch",
         {5},
         {static_cast<float>(s.latent_dim), static_cast<float>(s.base_channels),
          static_cast<float>(s.output_size),
          static_cast<float>(static_cast<int>(s.output_mode)), s.critic_slope}});
    ckpt.entries.push_back(
        {"__meta.train",
         {3},
         {static_cast<float>(state.step), static_cast<float>(state.adam_gen.t),
          static_cast<float>(state.adam_critic.t)}});
    const auto seed4 = u64_to_f32x4(state.rng.seed());
    const auto ctr4 = u64_to_f32x4(state.rng.counter());
    ckpt.entries.push_back(
        {"__meta.rng", {8}, {seed4[0], seed4[1], seed4[2], seed4[3], ctr4[0], ctr4[1],
                             ctr4[2], ctr4[3]}});
    return ckpt;
}

TrainerState state_from_checkpoint(const Checkpoint& ckpt) {
    const CheckpointEntry* arch = ckpt.find("__meta.arch");
    if (arch == nullptr || arch->values.size() != 5)
        throw std::invalid_argument("checkpoint lacks a valid __meta.arch entry");
    ArchSpec spec;
    spec.latent_dim = static_cast<std::size_t>(arch->values[0]);
    spec.base_channels = static_cast<std::size_t>(arch->values[1]);
    spec.output_size = static_cast<std::size_t>(arch->values[2]);
    spec.output_mode = arch->values[3] == 0.0f ? OutputMode::indicator : OutputMode::gray;
    spec.critic_slope = arch->values[4];
    spec.validate();

    TrainerState st = make_trainer_state(spec, 0);
    load_param_entries(ckpt, st.gen.tensors);
    load_param_entries(ckpt, st.critic.tensors);

    auto load_adam = [&ckpt](const char* prefix, const std::vector<ParamTensor>& ts,
                             AdamState& adam) {
        for (std::size_t i = 0; i < ts.size(); ++i) {
            if (!ts[i].trainable) continue;
            const CheckpointEntry* m = ckpt.find(std::string(prefix) + ts[i].name + ".m");
            const CheckpointEntry* v = ckpt.find(std::string(prefix) + ts[i].name + ".v");
            if (m == nullptr || v == nullptr) continue;  // sampling-only checkpoint
            if (m->values.size() != adam.m[i].size() ||
                v->values.size() != adam.v[i].size())
                throw dimension_error("checkpoint adam state size mismatch for '" +
                                      ts[i].name + "'");
            adam.m[i] = m->values;
            adam.v[i] = v->values;
        }
    };
    load_adam("adam.", st.gen.tensors, st.adam_gen);
    load_adam("adam.", st.critic.tensors, st.adam_critic);

    if (const CheckpointEntry* tr = ckpt.find("__meta.train");
        tr != nullptr && tr->values.size() == 3) {
        st.step = static_cast<std::size_t>(tr->values[0]);
        st.adam_gen.t = static_cast<std::size_t>(tr->values[1]);
        st.adam_critic.t = static_cast<std::size_t>(tr->values[2]);
    }
    if (const CheckpointEntry* rg = ckpt.find("__meta.rng");
        rg != nullptr && rg->values.size() == 8) {
        const std::vector<float> seed4(rg->values.begin(), rg->values.begin() + 4);
        const std::vector<float> ctr4(rg->values.begin() + 4, rg->values.end());
        st.rng = Rng(f32x4_to_u64(seed4), f32x4_to_u64(ctr4));
    }
    return st;
}

std::vector<Volume> extract_patches(const Volume& v, std::size_t size,
                                    std::size_t stride, std::uint64_t seed,
                                    std::size_t max_count) {
    if (size == 0 || stride == 0)
        throw std::invalid_argument("extract_patches: size and stride must be >= 1");
    for (std::size_t d : v.dims)
        if (size > d)
            throw std::invalid_argument(
                "extract_patches: patch size exceeds volume dimension");

    std::vector<std::array<std::size_t, 3>> origins;
    for (std::size_t z = 0; z + size <= v.dims[2]; z += stride)
        for (std::size_t y = 0; y + size <= v.dims[1]; y += stride)
            for (std::size_t x = 0; x + size <= v.dims[0]; x += stride)
                origins.push_back({x, y, z});

    if (max_count != 0 && origins.size() > max_count) {
        // Partial Fisher-Yates keeps the draw order deterministic per seed.
        Rng rng(seed);
        for (std::size_t i = 0; i < max_count; ++i) {
            const std::size_t j = i + rng.below(origins.size() - i);
            std::swap(origins[i], origins[j]);
        }
        origins.resize(max_count);
    }

    std::vector<Volume> patches;
    patches.reserve(origins.size());
    for (const auto& o : origins) {
        Volume p({size, size, size}, v.dtype);
        for (std::size_t z = 0; z < size; ++z)
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x)
                    p.at(x, y, z) = v.at(o[0] + x, o[1] + y, o[2] + z);
        patches.push_back(std::move(p));
    }
    return patches;
}

TrainingLog train_steps(const std::vector<Volume>& dataset, TrainerState& state,
                        const TrainingConfig& cfg) {
    cfg.validate();
    if (dataset.empty())
        throw std::invalid_argument("train: dataset must not be empty");
    const std::size_t s = state.gen.spec.output_size;
    for (const auto& p : dataset)
        if (p.dims != std::array<std::size_t, 3>{s, s, s})
            throw std::invalid_argument("train: patch dims must equal output_size^3");

    TrainingLog log;
    const std::size_t voxels = s * s * s;
    const std::size_t batch = cfg.batch_size;
    std::vector<float> real_host;
    std::vector<std::size_t> idx(batch);

    auto abort_with = [&log](std::size_t step, const std::string& why) {
        log.aborted = true;
        log.diagnostic = "step " + std::to_string(step) + ": " + why;
        return log;
    };

    while (state.step < cfg.total_gen_steps) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t step = state.step + 1;
        double critic_loss_val = 0, gp_val = 0;

        for (std::size_t ci = 0; ci < cfg.critic_iters_per_gen; ++ci) {
            for (auto& i : idx) i = state.rng.below(dataset.size());
            fill_batch(dataset, idx, real_host);
            std::vector<float> z(batch * state.gen.spec.latent_dim);
            for (auto& w : z) w = static_cast<float>(state.rng.normal());

            Graph<float> g;
            auto real = g.constant({batch, 1, s, s, s}, real_host);
            auto zt = g.constant({batch, state.gen.spec.latent_dim}, std::move(z));
            auto step_graph = build_critic_step<float>(g, state.critic, true, state.gen,
                                                       real, zt, cfg.gp_weight,
                                                       state.rng);
            critic_loss_val = step_graph.loss.scalar();
            gp_val = step_graph.gp.scalar();
            if (!std::isfinite(critic_loss_val))
                return abort_with(step, "non-finite critic loss");
            g.backward(step_graph.loss);
            adam_step(state.critic.tensors, step_graph.critic_emb, state.adam_critic,
                      cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        }

        std::vector<float> z(batch * state.gen.spec.latent_dim);
        for (auto& w : z) w = static_cast<float>(state.rng.normal());
        double gen_loss_val = 0;
        {
            Graph<float> g;
            auto zt = g.constant({batch, state.gen.spec.latent_dim}, std::move(z));
            auto gs = build_generator_step<float>(g, state.critic, state.gen, zt,
                                                  &state.gen);
            gen_loss_val = gs.loss.scalar();
            if (!std::isfinite(gen_loss_val))
                return abort_with(step, "non-finite generator loss");
            g.backward(gs.loss);
            adam_step(state.gen.tensors, gs.gen_emb, state.adam_gen, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2);
        }

        for (const auto& p : state.gen.tensors)
            if (!all_finite(p.values))
                return abort_with(step, "non-finite generator parameter " + p.name);
        for (const auto& p : state.critic.tensors)
            if (!all_finite(p.values))
                return abort_with(step, "non-finite critic parameter " + p.name);

        state.step = step;
        const auto t1 = std::chrono::steady_clock::now();
        log.rows.push_back({step, critic_loss_val, gen_loss_val, gp_val,
                            std::chrono::duration<double>(t1 - t0).count()});

        if (cfg.checkpoint_every != 0 && !cfg.checkpoint_path.empty() &&
            step % cfg.checkpoint_every == 0)
            write_checkpoint(cfg.checkpoint_path, state_to_checkpoint(state));
    }
    return log;
}

std::tuple<GeneratorParams, CriticParams, TrainingLog> train(
    const std::vector<Volume>& dataset, const ArchSpec& spec,
    const TrainingConfig& cfg) {
    TrainerState state = make_trainer_state(spec, cfg.seed);
    TrainingLog log = train_steps(dataset, state, cfg);
    return {std::move(state.gen), std::move(state.critic), std::move(log)};
}

}  // namespace voxgan
