#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "voxgan/synthetic.hpp"
#include "voxgan/train.hpp"

using namespace voxgan;

namespace {

ArchSpec tiny_spec() {
    ArchSpec s;
    s.latent_dim = 8;
    s.base_channels = 2;
    s.output_size = 16;
    return s;
}

std::vector<Volume> tiny_dataset() {
    ChannelSpec cs;
    cs.dims = {32, 32, 32};
    cs.channel_count = 4;
    cs.channel_radius = 3.0;
    cs.sinuosity_amplitude = 2.0;
    cs.seed = 2;
    Volume ti = make_channels(cs);
    return extract_patches(ti, 16, 8, 1, 8);
}

TrainingConfig tiny_cfg(std::size_t steps) {
    TrainingConfig cfg;
    cfg.batch_size = 2;
    cfg.critic_iters_per_gen = 2;
    cfg.total_gen_steps = steps;
    cfg.seed = 5;
    return cfg;
}

bool params_equal(const std::vector<ParamTensor>& a, const std::vector<ParamTensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].values != b[i].values) return false;
    return true;
}

}  // namespace

TEST_CASE("extract_patches: identity, tiling, and slice oracle") {
    ChannelSpec cs;
    cs.dims = {32, 32, 32};
    cs.channel_count = 4;
    cs.channel_radius = 3.0;
    cs.seed = 7;
    Volume v = make_channels(cs);

    auto one = extract_patches(v, 32, 1, 0, 0);
    REQUIRE(one.size() == 1);
    CHECK(one[0].data == v.data);

    ChannelSpec cs64;
    cs64.seed = 7;
    Volume big = make_channels(cs64);
    auto eight = extract_patches(big, 32, 32, 0, 0);
    CHECK(eight.size() == 8);

    // first patch equals a direct index slice
    for (std::size_t z = 0; z < 32; ++z)
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x)
                if (eight[0].at(x, y, z) != big.at(x, y, z)) {
                    FAIL("patch content mismatch");
                }

    // last patch equals the far corner slice
    for (std::size_t z = 0; z < 32; ++z)
        for (std::size_t x = 0; x < 32; ++x)
            if (eight[7].at(x, 5, z) != big.at(32 + x, 37, 32 + z)) {
                FAIL("far corner patch mismatch");
            }

    // subsampling is deterministic and honors max_count
    auto sub1 = extract_patches(big, 16, 8, 123, 5);
    auto sub2 = extract_patches(big, 16, 8, 123, 5);
    REQUIRE(sub1.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(sub1[i].data == sub2[i].data);

    CHECK_THROWS_AS(extract_patches(v, 64, 1, 0, 0), std::invalid_argument);
}

TEST_CASE("config validation") {
    TrainingConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainingConfig{};
    cfg.critic_iters_per_gen = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainingConfig{};
    cfg.adam_beta2 = 1.0f;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero steps returns the initialization unchanged") {
    const ArchSpec spec = tiny_spec();
    auto dataset = tiny_dataset();
    auto cfg = tiny_cfg(0);
    auto [gen, critic, log] = train(dataset, spec, cfg);
    auto [gen0, critic0] = init_params(spec, cfg.seed);
    CHECK(params_equal(gen.tensors, gen0.tensors));
    CHECK(params_equal(critic.tensors, critic0.tensors));
    CHECK(log.rows.empty());
    CHECK_FALSE(log.aborted);
}

TEST_CASE("training is deterministic and logs one row per generator step") {
    const ArchSpec spec = tiny_spec();
    auto dataset = tiny_dataset();
    auto cfg = tiny_cfg(3);

    auto [gen1, critic1, log1] = train(dataset, spec, cfg);
    auto [gen2, critic2, log2] = train(dataset, spec, cfg);
    CHECK(params_equal(gen1.tensors, gen2.tensors));
    CHECK(params_equal(critic1.tensors, critic2.tensors));
    REQUIRE(log1.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(log1.rows[i].step == i + 1);
        CHECK(log1.rows[i].critic_loss == log2.rows[i].critic_loss);
        CHECK(log1.rows[i].gen_loss == log2.rows[i].gen_loss);
        CHECK(log1.rows[i].gp >= 0.0);
    }

    // patch dims must match the architecture
    std::vector<Volume> bad{Volume({8, 8, 8}, VoxelType::binary_u8)};
    CHECK_THROWS_AS(train(bad, spec, cfg), std::invalid_argument);
}

TEST_CASE("resume from checkpoint reproduces an uninterrupted run bit-exactly") {
    const ArchSpec spec = tiny_spec();
    auto dataset = tiny_dataset();

    TrainerState full = make_trainer_state(spec, 5);
    auto log_full = train_steps(dataset, full, tiny_cfg(4));
    REQUIRE(log_full.rows.size() == 4);

    TrainerState part = make_trainer_state(spec, 5);
    auto log_a = train_steps(dataset, part, tiny_cfg(2));
    Checkpoint ckpt = state_to_checkpoint(part);
    TrainerState resumed = state_from_checkpoint(ckpt);
    CHECK(resumed.step == 2);
    auto log_b = train_steps(dataset, resumed, tiny_cfg(4));

    CHECK(params_equal(full.gen.tensors, resumed.gen.tensors));
    CHECK(params_equal(full.critic.tensors, resumed.critic.tensors));
    REQUIRE(log_b.rows.size() == 2);
    CHECK(log_full.rows[2].critic_loss == log_b.rows[0].critic_loss);
    CHECK(log_full.rows[2].gen_loss == log_b.rows[0].gen_loss);
    CHECK(log_full.rows[3].critic_loss == log_b.rows[1].critic_loss);
    CHECK(log_full.rows[3].gen_loss == log_b.rows[1].gen_loss);
}

TEST_CASE("divergent training aborts with a diagnostic record") {
    const ArchSpec spec = tiny_spec();
    auto dataset = tiny_dataset();
    auto cfg = tiny_cfg(3);
    cfg.learning_rate = 1e20f;
    TrainerState st = make_trainer_state(spec, 5);
    auto log = train_steps(dataset, st, cfg);
    CHECK(log.aborted);
    CHECK_FALSE(log.diagnostic.empty());
}

TEST_CASE("training log csv has exactly one line per step") {
    TrainingLog log;
    log.rows.push_back({1, -0.5, 0.25, 0.01, 0.125});
    log.rows.push_back({2, -0.25, 0.125, 0.0, 0.25});
    const auto path =
        (std::filesystem::temp_directory_path() / "trainlog.csv").string();
    write_training_log_csv(path, log);
    std::ifstream in(path);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}
