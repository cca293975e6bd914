#include "voxgan/ensemble.hpp"

#include <atomic>
#include <cmath>
#include <deque>
#include <fstream>
#include <thread>

#include "voxgan/parallel.hpp"

namespace voxgan {

EnsembleResult run_ensemble(const ConditioningProblem& base,
                            const GeneratorParams& gen, const CriticParams& critic,
                            std::size_t n, std::uint64_t seed_base,
                            std::size_t workers) {
    if (n == 0) throw std::invalid_argument("run_ensemble: n must be >= 1");
    base.validate(gen.spec);

    EnsembleResult result;
    result.seeds.resize(n);
    result.members.resize(n);
    for (std::size_t i = 0; i < n; ++i) result.seeds[i] = seed_base + i;

    auto run_one = [&](std::size_t i) {
        ConditioningProblem p = base;
        p.seed = result.seeds[i];
        p.initial_z.clear();  // every member draws its own start
        result.members[i] = condition(p, gen, critic);
    };

    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        const std::size_t pool = std::min(workers, n);
        std::vector<std::thread> threads;
        threads.reserve(pool);
        for (std::size_t w = 0; w < pool; ++w)
            threads.emplace_back([&] {
                set_intra_op_threads(1);
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                    run_one(i);
            });
        for (auto& t : threads) t.join();
    }

    const auto dims = std::array<std::size_t, 3>{gen.spec.output_size,
                                                 gen.spec.output_size,
                                                 gen.spec.output_size};
    try {
        result.stats = ensemble_stats_of(result.members, base.mode, dims);
    } catch (const ensemble_error&) {
        std::string diag = "run_ensemble: zero converged members;";
        for (std::size_t i = 0; i < n; ++i)
            diag += " seed " + std::to_string(result.seeds[i]) + ": iters " +
                    std::to_string(result.members[i].iterations) + " content " +
                    std::to_string(result.members[i].content_loss) + ";";
        throw ensemble_error(diag);
    }
    return result;
}

EnsembleStats ensemble_stats_of(const std::vector<ConditionedRealization>& members,
                                ConditionMode mode,
                                std::array<std::size_t, 3> dims) {
    const std::size_t voxels = dims[0] * dims[1] * dims[2];
    std::vector<double> sum(voxels, 0.0);
    std::size_t converged = 0;
    for (const auto& m : members) {
        if (!m.converged) continue;
        const Volume& v = mode == ConditionMode::binary ? m.thresholded : m.volume;
        for (std::size_t j = 0; j < voxels; ++j) sum[j] += v.data[j];
        ++converged;
    }
    if (converged == 0) throw ensemble_error("ensemble has zero converged members");

    EnsembleStats st;
    st.mode = mode;
    st.count = converged;
    st.mean = Volume(dims, VoxelType::gray_f32);
    st.std = Volume(dims, VoxelType::gray_f32);
    const double inv = 1.0 / static_cast<double>(converged);
    for (std::size_t j = 0; j < voxels; ++j)
        st.mean.data[j] = static_cast<float>(sum[j] * inv);

    std::vector<double> sq(voxels, 0.0);
    for (const auto& m : members) {
        if (!m.converged) continue;
        const Volume& v = mode == ConditionMode::binary ? m.thresholded : m.volume;
        for (std::size_t j = 0; j < voxels; ++j) {
            const double d = static_cast<double>(v.data[j]) -
                             static_cast<double>(st.mean.data[j]);
            sq[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < voxels; ++j)
        st.std.data[j] = static_cast<float>(std::sqrt(sq[j] * inv));

    // 2-voxel border vs interior mean of the mean map.
    double border_sum = 0, interior_sum = 0;
    std::size_t border_n = 0, interior_n = 0;
    for (std::size_t z = 0; z < dims[2]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t x = 0; x < dims[0]; ++x) {
                const bool border = x < 2 || y < 2 || z < 2 || x >= dims[0] - 2 ||
                                    y >= dims[1] - 2 || z >= dims[2] - 2;
                const double v = st.mean.at(x, y, z);
                if (border) {
                    border_sum += v;
                    ++border_n;
                } else {
                    interior_sum += v;
                    ++interior_n;
                }
            }
    st.border_mean = border_n ? border_sum / static_cast<double>(border_n) : 0.0;
    st.interior_mean =
        interior_n ? interior_sum / static_cast<double>(interior_n) : 0.0;
    return st;
}

std::vector<InfluenceRow> conditioning_influence_profile(const EnsembleStats& stats,
                                                         const Mask& mask) {
    if (stats.mode != ConditionMode::binary)
        throw std::invalid_argument(
            "conditioning_influence_profile: binary-mode stats required");
    if (stats.std.dims != mask.dims)
        throw dimension_error("conditioning_influence_profile: dims mismatch");
    if (mask.count() == 0)
        throw std::invalid_argument("conditioning_influence_profile: empty mask");

    const auto& dims = mask.dims;
    const std::size_t voxels = mask.numel();
    constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
    std::vector<std::size_t> dist(voxels, kUnset);

    // Multi-source BFS over the 26-neighborhood computes the Chebyshev
    // distance transform exactly.
    std::deque<std::size_t> frontier;
    for (std::size_t i = 0; i < voxels; ++i)
        if (mask.data[i] != 0) {
            dist[i] = 0;
            frontier.push_back(i);
        }
    while (!frontier.empty()) {
        const std::size_t at = frontier.front();
        frontier.pop_front();
        const std::size_t x = at % dims[0];
        const std::size_t y = (at / dims[0]) % dims[1];
        const std::size_t z = at / (dims[0] * dims[1]);
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    const long nx = static_cast<long>(x) + dx;
                    const long ny = static_cast<long>(y) + dy;
                    const long nz = static_cast<long>(z) + dz;
                    if (nx < 0 || ny < 0 || nz < 0 ||
                        nx >= static_cast<long>(dims[0]) ||
                        ny >= static_cast<long>(dims[1]) ||
                        nz >= static_cast<long>(dims[2]))
                        continue;
                    const std::size_t ni =
                        static_cast<std::size_t>(nx) +
                        dims[0] * (static_cast<std::size_t>(ny) +
                                   dims[1] * static_cast<std::size_t>(nz));
                    if (dist[ni] != kUnset) continue;
                    dist[ni] = dist[at] + 1;
                    frontier.push_back(ni);
                }
    }

    std::size_t max_d = 0;
    for (std::size_t d : dist) max_d = std::max(max_d, d);
    std::vector<InfluenceRow> rows(max_d + 1);
    for (std::size_t i = 0; i <= max_d; ++i) rows[i].distance = i;
    for (std::size_t i = 0; i < voxels; ++i) {
        rows[dist[i]].mean_std += stats.std.data[i];
        rows[dist[i]].voxel_count += 1;
    }
    for (auto& r : rows)
        if (r.voxel_count != 0) r.mean_std /= static_cast<double>(r.voxel_count);
    return rows;
}

void write_influence_csv(const std::string& path,
                         const std::vector<InfluenceRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& r : rows)
        out << r.distance << ',' << r.mean_std << ',' << r.voxel_count << '\n';
}

void write_ensemble_report_csv(const std::string& path, const EnsembleResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t i = 0; i < result.members.size(); ++i) {
        const auto& m = result.members[i];
        out << result.seeds[i] << ',' << (m.converged ? 1 : 0) << ',' << m.iterations
            << ',' << m.content_loss << ',' << m.perceptual_loss << ',' << m.accuracy
            << '\n';
    }
}

}  // namespace voxgan
