#include "voxgan/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "voxgan/rng.hpp"

namespace voxgan {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

// Axis permutation: principal axis u plus cross-section axes (a, b).
struct Frame {
    std::size_t u, a, b;
};

Frame frame_for(Axis principal) {
    switch (principal) {
        case Axis::x: return {0, 1, 2};
        case Axis::y: return {1, 0, 2};
        default: return {2, 0, 1};
    }
}

}  // namespace

Volume make_channels(const ChannelSpec& spec) {
    for (std::size_t d : spec.dims)
        if (d == 0) throw std::invalid_argument("make_channels: dims must be positive");
    if (spec.channel_radius <= 0)
        throw std::invalid_argument("make_channels: channel_radius must be positive");
    if (spec.sinuosity_amplitude < 0 || spec.sinuosity_wavelength <= 0)
        throw std::invalid_argument("make_channels: invalid sinuosity parameters");

    Volume v(spec.dims, VoxelType::binary_u8, 0.0f);
    if (spec.channel_count == 0) return v;

    const Frame f = frame_for(spec.principal_axis);
    const double margin = spec.sinuosity_amplitude + spec.channel_radius;
    const double lo_a = margin, hi_a = static_cast<double>(spec.dims[f.a] - 1) - margin;
    const double lo_b = margin, hi_b = static_cast<double>(spec.dims[f.b] - 1) - margin;
    if (hi_a < lo_a || hi_b < lo_b)
        throw std::invalid_argument(
            "make_channels: amplitude + radius does not fit inside dims");

    Rng rng(spec.seed);
    const double r2 = spec.channel_radius * spec.channel_radius;
    const std::size_t nu = spec.dims[f.u], na = spec.dims[f.a], nb = spec.dims[f.b];

    for (std::size_t ch = 0; ch < spec.channel_count; ++ch) {
        const double a0 = lo_a + (hi_a - lo_a) * rng.uniform();
        const double b0 = lo_b + (hi_b - lo_b) * rng.uniform();
        const double phase_a = kTau * rng.uniform();
        const double phase_b = kTau * rng.uniform();
        // Slightly different period on the second axis keeps tubes from
        // tracing closed ellipses.
        const double wl_b = spec.sinuosity_wavelength * 0.7853981633974483;

        for (std::size_t iu = 0; iu < nu; ++iu) {
            const double ca =
                a0 + spec.sinuosity_amplitude *
                         std::sin(kTau * static_cast<double>(iu) /
                                      spec.sinuosity_wavelength +
                                  phase_a);
            const double cb =
                b0 + spec.sinuosity_amplitude *
                         std::sin(kTau * static_cast<double>(iu) / wl_b + phase_b);
            const auto a_min = static_cast<std::size_t>(
                std::max(0.0, std::floor(ca - spec.channel_radius)));
            const auto a_max = static_cast<std::size_t>(std::min(
                static_cast<double>(na - 1), std::ceil(ca + spec.channel_radius)));
            const auto b_min = static_cast<std::size_t>(
                std::max(0.0, std::floor(cb - spec.channel_radius)));
            const auto b_max = static_cast<std::size_t>(std::min(
                static_cast<double>(nb - 1), std::ceil(cb + spec.channel_radius)));
            for (std::size_t ia = a_min; ia <= a_max; ++ia)
                for (std::size_t ib = b_min; ib <= b_max; ++ib) {
                    const double da = static_cast<double>(ia) - ca;
                    const double db = static_cast<double>(ib) - cb;
                    if (da * da + db * db > r2) continue;
                    std::size_t xyz[3];
                    xyz[f.u] = iu;
                    xyz[f.a] = ia;
                    xyz[f.b] = ib;
                    v.at(xyz[0], xyz[1], xyz[2]) = 1.0f;
                }
        }
    }

    return v;
}

Volume make_granular(const GranularSpec& spec) {
    for (std::size_t d : spec.dims)
        if (d == 0) throw std::invalid_argument("make_granular: dims must be positive");
    if (spec.radius_min <= 0 || spec.radius_max < spec.radius_min)
        throw std::invalid_argument("make_granular: invalid radius range");
    if (spec.smoothing_width < 0)
        throw std::invalid_argument("make_granular: smoothing_width must be >= 0");

    Volume v(spec.dims, VoxelType::gray_f32, 0.0f);
    if (spec.sphere_count == 0) return v;

    Rng rng(spec.seed);
    const std::size_t nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
    for (std::size_t s = 0; s < spec.sphere_count; ++s) {
        const double cx = rng.uniform() * static_cast<double>(nx - 1);
        const double cy = rng.uniform() * static_cast<double>(ny - 1);
        const double cz = rng.uniform() * static_cast<double>(nz - 1);
        const double r =
            spec.radius_min + (spec.radius_max - spec.radius_min) * rng.uniform();
        const double r2 = r * r;
        const auto clampi = [](double lo, double val, double hi) {
            return static_cast<std::size_t>(std::max(lo, std::min(val, hi)));
        };
        const std::size_t x0 = clampi(0, std::floor(cx - r), static_cast<double>(nx - 1));
        const std::size_t x1 = clampi(0, std::ceil(cx + r), static_cast<double>(nx - 1));
        const std::size_t y0 = clampi(0, std::floor(cy - r), static_cast<double>(ny - 1));
        const std::size_t y1 = clampi(0, std::ceil(cy + r), static_cast<double>(ny - 1));
        const std::size_t z0 = clampi(0, std::floor(cz - r), static_cast<double>(nz - 1));
        const std::size_t z1 = clampi(0, std::ceil(cz + r), static_cast<double>(nz - 1));
        for (std::size_t z = z0; z <= z1; ++z)
            for (std::size_t y = y0; y <= y1; ++y)
                for (std::size_t x = x0; x <= x1; ++x) {
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    const double dz = static_cast<double>(z) - cz;
                    if (dx * dx + dy * dy + dz * dz <= r2) v.at(x, y, z) = 1.0f;
                }
    }

    if (spec.smoothing_width > 0) {
        // Separable truncated gaussian with mirrored boundaries.
        const int half = static_cast<int>(std::ceil(3.0 * spec.smoothing_width));
        std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
        double ksum = 0;
        for (int i = -half; i <= half; ++i) {
            const double w = std::exp(-0.5 * (i / spec.smoothing_width) *
                                      (i / spec.smoothing_width));
            kernel[static_cast<std::size_t>(i + half)] = w;
            ksum += w;
        }
        for (double& w : kernel) w /= ksum;

        std::vector<double> buf_a(v.data.begin(), v.data.end());
        std::vector<double> buf_b(buf_a.size());
        const std::size_t n[3] = {nx, ny, nz};
        const std::size_t stride[3] = {1, nx, nx * ny};
        for (int axis = 0; axis < 3; ++axis) {
            const std::size_t len = n[axis], st = stride[axis];
            for (std::size_t base = 0; base < buf_a.size(); ++base) {
                const std::size_t along =
                    (base / st) % len;  // coordinate on the filtered axis
                const std::size_t origin = base - along * st;
                double acc = 0;
                for (int i = -half; i <= half; ++i) {
                    long pos = static_cast<long>(along) + i;
                    if (pos < 0) pos = -pos;  // mirror
                    if (pos >= static_cast<long>(len))
                        pos = 2 * static_cast<long>(len) - 2 - pos;
                    pos = std::clamp(pos, 0L, static_cast<long>(len) - 1);
                    acc += kernel[static_cast<std::size_t>(i + half)] *
                           buf_a[origin + static_cast<std::size_t>(pos) * st];
                }
                buf_b[base] = acc;
            }
            std::swap(buf_a, buf_b);
        }

        double lo = buf_a[0], hi = buf_a[0];
        for (double w : buf_a) {
            lo = std::min(lo, w);
            hi = std::max(hi, w);
        }
        if (hi > lo) {
            for (std::size_t i = 0; i < v.data.size(); ++i)
                v.data[i] = static_cast<float>((buf_a[i] - lo) / (hi - lo));
        } else {
            for (std::size_t i = 0; i < v.data.size(); ++i)
                v.data[i] = static_cast<float>(buf_a[i]);
        }
    }
    return v;
}

}  // namespace voxgan
