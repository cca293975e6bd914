#pragma once

#include <array>
#include <cstdint>

#include "voxgan/volume.hpp"

// Deterministic desk-scale training images: sinuous binary channels in a
// matrix, and a smoothed granular (sphere-pack) gray volume.

namespace voxgan {

struct ChannelSpec {
    std::array<std::size_t, 3> dims{64, 64, 64};
    std::size_t channel_count = 12;
    double channel_radius = 4.0;
    double sinuosity_amplitude = 4.0;
    double sinuosity_wavelength = 32.0;
    Axis principal_axis = Axis::x;
    std::uint64_t seed = 0;
};

struct GranularSpec {
    std::array<std::size_t, 3> dims{64, 64, 64};
    std::size_t sphere_count = 200;
    double radius_min = 4.0;
    double radius_max = 8.0;
    double smoothing_width = 1.5;  // gaussian sigma, voxels
    std::uint64_t seed = 0;
};

// Binary volume of sinuous tubes (1) in matrix (0); deterministic per seed.
// Throws std::invalid_argument when the geometry cannot fit or the resulting
// channel volume fraction falls outside (0.05, 0.6).
Volume make_channels(const ChannelSpec& spec);

// Gray volume: union of spheres, gaussian-smoothed, rescaled to [0,1].
Volume make_granular(const GranularSpec& spec);

}  // namespace voxgan
