#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxgan/condition.hpp"
#include "voxgan/volume.hpp"

// Ensembles of independent conditioning runs with per-voxel mean and
// standard-deviation maps (population formulas over converged members).

namespace voxgan {

struct EnsembleStats {
    ConditionMode mode = ConditionMode::binary;
    std::size_t count = 0;  // converged members
    Volume mean;            // gray
    Volume std;             // gray
    // Boundary-artifact report: mean-map average inside a 2-voxel border of
    // the faces versus the interior.
    double border_mean = 0;
    double interior_mean = 0;
};

struct EnsembleResult {
    std::vector<std::uint64_t> seeds;
    std::vector<ConditionedRealization> members;
    EnsembleStats stats;
};

// Population mean/std maps over the converged members, accumulated in member
// order (binary mode aggregates the thresholded volumes, continuous the raw
// ones). Throws ensemble_error when no member converged.
EnsembleStats ensemble_stats_of(const std::vector<ConditionedRealization>& members,
                                ConditionMode mode,
                                std::array<std::size_t, 3> dims);

// Runs n independent jobs with seeds seed_base .. seed_base+n-1 on a pool of
// `workers` threads. Accumulation happens in seed order, so the stats are
// bit-identical for any worker count. Throws ensemble_error when no member
// converges.
EnsembleResult run_ensemble(const ConditioningProblem& base,
                            const GeneratorParams& gen, const CriticParams& critic,
                            std::size_t n, std::uint64_t seed_base,
                            std::size_t workers);

struct InfluenceRow {
    std::size_t distance = 0;  // Chebyshev distance to the nearest mask voxel
    double mean_std = 0;
    std::size_t voxel_count = 0;
};

// Mean ensemble std bucketed by Chebyshev distance from the mask; rows
// partition the volume. Binary-mode stats only.
std::vector<InfluenceRow> conditioning_influence_profile(const EnsembleStats& stats,
                                                         const Mask& mask);

// Headerless CSV writers: distance,mean_std,voxel_count and
// seed,converged,iterations,content_loss,perceptual_loss,accuracy.
void write_influence_csv(const std::string& path,
                         const std::vector<InfluenceRow>& rows);
void write_ensemble_report_csv(const std::string& path, const EnsembleResult& result);

}  // namespace voxgan
