#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_fixtures.hpp"
#include "voxgan/ensemble.hpp"
#include "voxgan/rng.hpp"

using namespace voxgan;

namespace {

ArchSpec tiny_spec() {
    ArchSpec s;
    s.latent_dim = 32;
    s.base_channels = 2;
    s.output_size = 16;
    return s;
}

ConditioningProblem well_problem(const GeneratorParams& gen) {
    Graph<float> g;
    auto z = g.constant({1, gen.spec.latent_dim},
                        sample_latent(1, gen.spec.latent_dim, 99));
    Volume ref = volume_from_sample(generate(g, gen, z).values(),
                                    gen.spec.output_size);
    ConditioningProblem p;
    p.mask = make_well_mask(ref.dims);
    p.y = apply_mask(threshold_volume(ref), p.mask);
    p.mode = ConditionMode::binary;
    p.perceptual_weight = 0.0f;
    p.max_iters = 400;
    p.restarts = 3;
    return p;
}

ConditionedRealization fake_member(const Volume& gray, bool converged) {
    ConditionedRealization r;
    r.volume = gray;
    r.thresholded = threshold_volume(gray);
    r.converged = converged;
    return r;
}

}  // namespace

TEST_CASE("stats: single member has zero std; duplicates keep the volume") {
    Rng rng(3);
    Volume v({4, 4, 4}, VoxelType::gray_f32);
    for (auto& f : v.data) f = static_cast<float>(rng.uniform());

    auto one = ensemble_stats_of({fake_member(v, true)}, ConditionMode::continuous,
                                 v.dims);
    CHECK(one.count == 1);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        CHECK(one.std.data[i] == 0.0f);
        CHECK(one.mean.data[i] == v.data[i]);
    }

    auto two = ensemble_stats_of({fake_member(v, true), fake_member(v, true)},
                                 ConditionMode::continuous, v.dims);
    CHECK(two.count == 2);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        CHECK(two.std.data[i] == 0.0f);
        CHECK(two.mean.data[i] == v.data[i]);
    }

    // non-converged members are excluded
    Volume other({4, 4, 4}, VoxelType::gray_f32, 0.25f);
    auto three = ensemble_stats_of(
        {fake_member(v, true), fake_member(other, false)},
        ConditionMode::continuous, v.dims);
    CHECK(three.count == 1);

    CHECK_THROWS_AS(
        ensemble_stats_of({fake_member(v, false)}, ConditionMode::continuous, v.dims),
        ensemble_error);
}

TEST_CASE("binary stats satisfy the indicator identity std = sqrt(mean(1-mean))") {
    Rng rng(7);
    std::vector<ConditionedRealization> members;
    for (int i = 0; i < 16; ++i) {
        Volume v({6, 6, 6}, VoxelType::gray_f32);
        for (auto& f : v.data) f = rng.uniform() < 0.4 ? 0.9f : 0.1f;
        members.push_back(fake_member(v, true));
    }
    auto st = ensemble_stats_of(members, ConditionMode::binary, {6, 6, 6});
    CHECK(st.count == 16);
    for (std::size_t i = 0; i < st.mean.data.size(); ++i) {
        const double p = st.mean.data[i];
        CHECK(std::fabs(st.std.data[i] - std::sqrt(p * (1.0 - p))) < 1e-6);
        CHECK(st.std.data[i] >= 0.0f);
    }
}

TEST_CASE("run_ensemble: convergence records, mask invariants, order independence") {
    const ArchSpec spec = tiny_spec();
    auto [gen0, critic] = init_params(spec, 23);
    GeneratorParams gen = fixtures::designed_generator(spec, 23);
    ConditioningProblem p = well_problem(gen);

    EnsembleResult a = run_ensemble(p, gen, critic, 6, 1000, 1);
    EnsembleResult b = run_ensemble(p, gen, critic, 6, 1000, 2);

    REQUIRE(a.members.size() == 6);
    CHECK(a.seeds == b.seeds);
    CHECK(a.stats.count == b.stats.count);
    CHECK(a.stats.mean.data == b.stats.mean.data);  // worker count cannot matter
    CHECK(a.stats.std.data == b.stats.std.data);
    CHECK(a.stats.count >= 4);

    // converged members match the data at the mask; ensemble std there is 0
    for (std::size_t i = 0; i < p.mask.data.size(); ++i) {
        if (p.mask.data[i] == 0) continue;
        CHECK(a.stats.std.data[i] == 0.0f);
        CHECK(a.stats.mean.data[i] == p.y.data[i]);
    }

    // profile: distance-0 bucket has zero std; buckets partition the volume
    auto rows = conditioning_influence_profile(a.stats, p.mask);
    REQUIRE(!rows.empty());
    CHECK(rows[0].distance == 0);
    CHECK(rows[0].mean_std == 0.0);
    CHECK(rows[0].voxel_count == p.mask.count());
    std::size_t total = 0;
    for (const auto& r : rows) total += r.voxel_count;
    CHECK(total == p.mask.numel());

    // csv writers emit one line per row / member
    const auto dir = std::filesystem::temp_directory_path();
    const auto pcsv = (dir / "profile.csv").string();
    const auto rcsv = (dir / "report.csv").string();
    write_influence_csv(pcsv, rows);
    write_ensemble_report_csv(rcsv, a);
    auto count_lines = [](const std::string& path) {
        std::ifstream in(path);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++n;
        return n;
    };
    CHECK(count_lines(pcsv) == rows.size());
    CHECK(count_lines(rcsv) == 6);
}

TEST_CASE("profile rejects continuous stats and empty masks") {
    EnsembleStats st;
    st.mode = ConditionMode::continuous;
    st.std = Volume({4, 4, 4}, VoxelType::gray_f32);
    st.mean = st.std;
    Mask m({4, 4, 4});
    m.data[0] = 1;
    CHECK_THROWS_AS(conditioning_influence_profile(st, m), std::invalid_argument);
    st.mode = ConditionMode::binary;
    Mask empty({4, 4, 4});
    CHECK_THROWS_AS(conditioning_influence_profile(st, empty), std::invalid_argument);
}

TEST_CASE("chebyshev distances: corner source") {
    EnsembleStats st;
    st.mode = ConditionMode::binary;
    st.std = Volume({4, 4, 4}, VoxelType::gray_f32, 1.0f);
    st.mean = st.std;
    Mask m({4, 4, 4});
    m.data[m.index(0, 0, 0)] = 1;
    auto rows = conditioning_influence_profile(st, m);
    // distances 0..3; bucket sizes are the chebyshev shells from a corner
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].voxel_count == 1);
    CHECK(rows[1].voxel_count == 7);     // 2^3 - 1
    CHECK(rows[2].voxel_count == 19);    // 3^3 - 2^3
    CHECK(rows[3].voxel_count == 37);    // 4^3 - 3^3
}

TEST_CASE("zero converged members raises ensemble_error with diagnostics") {
    const ArchSpec spec = tiny_spec();
    auto [gen0, critic] = init_params(spec, 23);
    GeneratorParams gen = fixtures::designed_generator(spec, 23);
    ConditioningProblem p = well_problem(gen);
    p.y = apply_mask(Volume({16, 16, 16}, VoxelType::binary_u8, 1.0f), p.mask);
    p.max_iters = 0;  // no updates: essentially certain to fail all attempts
    p.restarts = 1;
    CHECK_THROWS_AS(run_ensemble(p, gen, critic, 3, 50, 1), ensemble_error);
}
