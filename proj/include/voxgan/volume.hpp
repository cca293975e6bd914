#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "voxgan/errors.hpp"

// Voxel volumes plus bit-exact GVOX/GCKP persistence and PGM slice export.
//
// GVOX (little-endian, 24-byte header):
//   magic "GVOX" | version u8=1 | dtype u8 (0=binary_u8, 1=gray_f32) |
//   reserved u16=0 | nx,ny,nz u32 | reserved u32=0 | payload x-fastest
//   (binary: one u8 per voxel in {0,1}; gray: one IEEE-754 f32 in [0,1])
//
// GCKP (little-endian):
//   magic "GCKP" | version u8=1 | count u32 | per entry:
//   name_len u16 | name UTF-8 | rank u8 | rank x u32 dims |
//   payload f32 row-major

namespace voxgan {

enum class VoxelType : std::uint8_t { binary_u8 = 0, gray_f32 = 1 };

struct Volume {
    std::array<std::size_t, 3> dims{0, 0, 0};  // nx, ny, nz
    VoxelType dtype = VoxelType::gray_f32;
    std::vector<float> data;  // x-fastest; binary volumes hold exactly 0 or 1

    Volume() = default;
    Volume(std::array<std::size_t, 3> d, VoxelType t, float fill = 0.0f)
        : dims(d), dtype(t), data(d[0] * d[1] * d[2], fill) {}

    std::size_t numel() const { return dims[0] * dims[1] * dims[2]; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + dims[0] * (y + dims[1] * z);
    }
    float at(std::size_t x, std::size_t y, std::size_t z) const {
        return data[index(x, y, z)];
    }
    float& at(std::size_t x, std::size_t y, std::size_t z) {
        return data[index(x, y, z)];
    }
};

// Binary indicator marking conditioning-data locations.
struct Mask {
    std::array<std::size_t, 3> dims{0, 0, 0};
    std::vector<std::uint8_t> data;

    Mask() = default;
    explicit Mask(std::array<std::size_t, 3> d)
        : dims(d), data(d[0] * d[1] * d[2], 0) {}

    std::size_t numel() const { return dims[0] * dims[1] * dims[2]; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + dims[0] * (y + dims[1] * z);
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
};

struct CheckpointEntry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

struct Checkpoint {
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

Volume read_gvox(const std::string& path);
// Gray values outside [0,1] are clamped on write; returns how many were.
std::size_t write_gvox(const std::string& path, const Volume& v);

Checkpoint read_checkpoint(const std::string& path);
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);

enum class Axis { x = 0, y = 1, z = 2 };

// Binary PGM (P5), maxval 255; gray maps by round(v*255), binary to {0,255}.
void export_slice(const Volume& v, Axis axis, std::size_t index,
                  const std::string& path);

// Mask <-> binary volume conversions (masks travel as GVOX binary files).
Mask mask_from_volume(const Volume& v);
Volume mask_to_volume(const Mask& m);

}  // namespace voxgan
