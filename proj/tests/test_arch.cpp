#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "voxgan/arch.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/tensor.hpp"

using namespace voxgan;

namespace {

ArchSpec tiny_spec(std::size_t base = 2, std::size_t size = 16) {
    ArchSpec s;
    s.latent_dim = 6;
    s.base_channels = base;
    s.output_size = size;
    return s;
}

bool same_params(const std::vector<ParamTensor>& a, const std::vector<ParamTensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || a[i].shape != b[i].shape ||
            a[i].values != b[i].values)
            return false;
    return true;
}

}  // namespace

TEST_CASE("spec validation") {
    ArchSpec s = tiny_spec();
    CHECK_NOTHROW(s.validate());
    s.output_size = 20;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.output_size = 8;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = tiny_spec();
    s.latent_dim = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("stage plan: 32 gives three upsampling stages after the projection") {
    ArchSpec s = tiny_spec(2, 32);
    CHECK(s.up_stages() == 3);
    CHECK(s.generator_channels() == std::vector<std::size_t>{8, 4, 2, 1});
    CHECK(s.critic_channels() == std::vector<std::size_t>{2, 4, 8});
    CHECK(tiny_spec(2, 16).up_stages() == 2);
}

TEST_CASE("init is deterministic per seed") {
    const ArchSpec s = tiny_spec();
    auto [g1, d1] = init_params(s, 42);
    auto [g2, d2] = init_params(s, 42);
    CHECK(same_params(g1.tensors, g2.tensors));
    CHECK(same_params(d1.tensors, d2.tensors));
    auto [g3, d3] = init_params(s, 43);
    CHECK_FALSE(same_params(g1.tensors, g3.tensors));
}

TEST_CASE("parameter count equals the closed-form stage formula") {
    for (std::size_t base : {2u, 3u}) {
        for (std::size_t size : {16u, 32u}) {
            ArchSpec s = tiny_spec(base, size);
            auto [gen, critic] = init_params(s, 7);

            const std::size_t n = s.up_stages();
            const std::size_t k = 64;
            std::size_t expect_g = 0;
            std::size_t cin = s.latent_dim;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t cout = s.base_channels << (n - 1 - i);
                expect_g += cin * cout * k + cout + 4 * cout;
                cin = cout;
            }
            expect_g += cin * 1 * k + 1;
            CHECK(parameter_count(gen.tensors) == expect_g);

            std::size_t expect_d = 0;
            cin = 1;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t cout = s.base_channels << i;
                expect_d += cout * cin * k + cout;
                cin = cout;
            }
            expect_d += cin * k + 1;
            CHECK(parameter_count(critic.tensors) == expect_d);
        }
    }
}

TEST_CASE("generate produces [N,1,S,S,S] in [0,1], deterministic") {
    const ArchSpec s = tiny_spec(2, 32);
    auto [gen, critic] = init_params(s, 1);

    auto run = [&] {
        Graph<float> g;
        auto zv = sample_latent(2, s.latent_dim, 9);
        auto z = g.constant({2, s.latent_dim}, zv);
        return generate(g, gen, z).values();
    };
    auto v1 = run();
    auto v2 = run();
    CHECK(v1 == v2);

    Graph<float> g;
    auto zv = sample_latent(2, s.latent_dim, 9);
    auto z = g.constant({2, s.latent_dim}, zv);
    auto out = generate(g, gen, z);
    CHECK(out.shape() == Shape{2, 1, 32, 32, 32});
    for (float v : out.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    // wrong latent width
    auto zbad = g.constant({2, s.latent_dim + 1},
                           std::vector<float>(2 * (s.latent_dim + 1), 0.1f));
    CHECK_THROWS_AS(generate(g, gen, zbad), dimension_error);
    // non-finite z
    std::vector<float> nanz(2 * s.latent_dim, 0.0f);
    nanz[3] = std::numeric_limits<float>::quiet_NaN();
    auto znan = g.constant({2, s.latent_dim}, nanz);
    CHECK_THROWS_AS(generate(g, gen, znan), std::invalid_argument);
}

TEST_CASE("generated output responds to z") {
    const ArchSpec s = tiny_spec(2, 16);
    auto [gen, critic] = init_params(s, 3);
    Graph<float> g;
    auto z = g.leaf({1, s.latent_dim}, sample_latent(1, s.latent_dim, 5), true);
    auto emb = embed_params(g, gen.tensors, false);
    auto out = generator_forward(g, gen, emb, z, BnMode::eval);
    g.backward(g.mean(out));
    REQUIRE(z.grad() != nullptr);
    double norm = 0;
    for (float v : *z.grad()) norm += static_cast<double>(v) * v;
    CHECK(norm > 0.0);
}

TEST_CASE("criticize: per-sample scores, sensitivity, shape checks") {
    const ArchSpec s = tiny_spec(2, 16);
    auto [gen, critic] = init_params(s, 11);

    Graph<float> g;
    Rng rng(21);
    std::vector<float> xv(3 * 16 * 16 * 16);
    for (auto& v : xv) v = static_cast<float>(rng.uniform());
    auto x = g.constant({3, 1, 16, 16, 16}, xv);
    auto scores = criticize(g, critic, x);
    CHECK(scores.shape() == Shape{3});

    CriticParams bumped = critic;
    for (auto& v : bumped.tensors[0].values) v *= 2.0f;
    auto scores2 = criticize(g, bumped, x);
    bool changed = false;
    for (std::size_t i = 0; i < 3; ++i)
        changed = changed || scores.values()[i] != scores2.values()[i];
    CHECK(changed);

    auto xbad = g.constant({1, 1, 8, 8, 8}, std::vector<float>(512, 0.0f));
    CHECK_THROWS_AS(criticize(g, critic, xbad), dimension_error);
}

TEST_CASE("critic score gradient wrt input matches finite differences") {
    const ArchSpec s = tiny_spec(2, 16);
    auto [gen, critic_f] = init_params(s, 13);

    Rng rng(17);
    std::vector<double> x0(16 * 16 * 16);
    for (auto& v : x0) v = rng.uniform();

    // analytic gradient in double
    Graph<double> g;
    auto x = g.leaf({1, 1, 16, 16, 16}, x0, true);
    auto emb = embed_params<double>(g, critic_f.tensors, false);
    auto score = g.sum(critic_forward(g, critic_f, emb, x));
    g.backward(score);
    REQUIRE(x.grad() != nullptr);
    const auto analytic = *x.grad();

    auto eval = [&](const std::vector<double>& xv) {
        Graph<double> gg;
        auto xx = gg.constant({1, 1, 16, 16, 16}, xv);
        auto ee = embed_params<double>(gg, critic_f.tensors, false);
        return gg.sum(critic_forward(gg, critic_f, ee, xx)).scalar();
    };

    Rng pick(23);
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t i = pick.below(x0.size());
        const double h = 1e-5;
        auto xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        const double numeric = (eval(xp) - eval(xm)) / (2 * h);
        CHECK(fd::rel_err(analytic[i], numeric) < 1e-4);
    }
}

TEST_CASE("sample_latent: moments and determinism") {
    const std::size_t n = 100000, dim = 4;
    auto z = sample_latent(n, dim, 12345);
    for (std::size_t c = 0; c < dim; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < n; ++i) mean += z[i * dim + c];
        mean /= static_cast<double>(n);
        CHECK(mean > -0.02);
        CHECK(mean < 0.02);
        double var = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = z[i * dim + c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        CHECK(var > 0.97);
        CHECK(var < 1.03);
    }
    CHECK(z == sample_latent(n, dim, 12345));
    CHECK(z != sample_latent(n, dim, 12346));
}

TEST_CASE("checkpoint round-trip restores generator and critic bit-exactly") {
    const ArchSpec s = tiny_spec(2, 16);
    auto [gen, critic] = init_params(s, 31);

    Checkpoint ckpt;
    append_param_entries(ckpt, gen.tensors);
    append_param_entries(ckpt, critic.tensors);

    auto [gen2, critic2] = init_params(s, 99);
    load_param_entries(ckpt, gen2.tensors);
    load_param_entries(ckpt, critic2.tensors);
    CHECK(same_params(gen.tensors, gen2.tensors));
    CHECK(same_params(critic.tensors, critic2.tensors));
}
