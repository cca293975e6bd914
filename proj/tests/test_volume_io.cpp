#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "voxgan/errors.hpp"
#include "voxgan/hash.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/volume.hpp"

using namespace voxgan;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("gvox: 2x2x2 binary ones is a 24-byte header plus 8-byte payload") {
    Volume v({2, 2, 2}, VoxelType::binary_u8, 1.0f);
    const auto path = tmp_path("ones.gvox");
    CHECK(write_gvox(path, v) == 0);

    auto bytes = slurp(path);
    REQUIRE(bytes.size() == 32);
    CHECK(bytes[0] == 'G');
    CHECK(bytes[1] == 'V');
    CHECK(bytes[2] == 'O');
    CHECK(bytes[3] == 'X');
    CHECK(bytes[4] == 1);  // version
    CHECK(bytes[5] == 0);  // dtype binary_u8
    for (std::size_t i = 24; i < 32; ++i) CHECK(bytes[i] == 1);

    Volume back = read_gvox(path);
    CHECK(back.dims == v.dims);
    CHECK(back.dtype == VoxelType::binary_u8);
    CHECK(back.data == v.data);
}

TEST_CASE("gvox: gray 0.5 serializes as IEEE-754 single LE") {
    Volume v({1, 1, 1}, VoxelType::gray_f32, 0.5f);
    const auto path = tmp_path("half.gvox");
    write_gvox(path, v);
    auto bytes = slurp(path);
    REQUIRE(bytes.size() == 28);
    CHECK(bytes[24] == 0x00);
    CHECK(bytes[25] == 0x00);
    CHECK(bytes[26] == 0x00);
    CHECK(bytes[27] == 0x3F);
}

TEST_CASE("gvox: random volumes round-trip byte-for-byte") {
    Rng rng(5);
    for (int it = 0; it < 4; ++it) {
        Volume v({16, 16, 16}, VoxelType::gray_f32);
        for (auto& f : v.data) f = static_cast<float>(rng.uniform());
        const auto a = tmp_path("rt_a.gvox");
        const auto b = tmp_path("rt_b.gvox");
        write_gvox(a, v);
        Volume back = read_gvox(a);
        CHECK(back.data == v.data);
        write_gvox(b, back);
        CHECK(hash_file(a) == hash_file(b));

        Volume bin({8, 8, 8}, VoxelType::binary_u8);
        for (auto& f : bin.data) f = rng.uniform() < 0.5 ? 0.0f : 1.0f;
        write_gvox(a, bin);
        Volume bin_back = read_gvox(a);
        CHECK(bin_back.data == bin.data);
        write_gvox(b, bin_back);
        CHECK(hash_file(a) == hash_file(b));
    }
}

TEST_CASE("gvox: out-of-range gray values are clamped and counted on write") {
    Volume v({2, 1, 1}, VoxelType::gray_f32);
    v.data = {1.25f, -0.5f};
    const auto path = tmp_path("clamp.gvox");
    CHECK(write_gvox(path, v) == 2);
    Volume back = read_gvox(path);
    CHECK(back.data[0] == 1.0f);
    CHECK(back.data[1] == 0.0f);
}

TEST_CASE("gvox: format errors carry byte offsets") {
    const auto path = tmp_path("bad.gvox");

    Volume v({2, 2, 2}, VoxelType::binary_u8, 1.0f);
    write_gvox(path, v);
    auto good = slurp(path);

    auto bad = good;
    bad[0] = 'X';
    spit(path, bad);
    CHECK_THROWS_AS(read_gvox(path), format_error);
    try {
        read_gvox(path);
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 0);
    }

    bad = good;
    bad[5] = 9;  // unknown dtype
    spit(path, bad);
    try {
        read_gvox(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 5);
    }

    bad = good;
    bad.resize(27);  // truncated payload
    spit(path, bad);
    try {
        read_gvox(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 27);
    }

    bad = good;
    bad[26] = 2;  // non-indicator binary voxel
    spit(path, bad);
    try {
        read_gvox(path);
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(e.byte_offset() == 26);
    }
}

TEST_CASE("gckp: empty checkpoint is header-only and round-trips") {
    Checkpoint ckpt;
    const auto path = tmp_path("empty.gckp");
    write_checkpoint(path, ckpt);
    CHECK(slurp(path).size() == 9);
    Checkpoint back = read_checkpoint(path);
    CHECK(back.entries.empty());
}

TEST_CASE("gckp: payload is little-endian singles in row-major order") {
    Checkpoint ckpt;
    ckpt.entries.push_back({"w", {2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}});
    const auto path = tmp_path("one.gckp");
    write_checkpoint(path, ckpt);

    auto bytes = slurp(path);
    // header 9 + name_len 2 + name 1 + rank 1 + dims 8 = 21; payload follows
    REQUIRE(bytes.size() == 21 + 16);
    const unsigned char expect[16] = {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40,
                                      0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x80, 0x40};
    for (int i = 0; i < 16; ++i) CHECK(bytes[21 + static_cast<std::size_t>(i)] == expect[i]);

    Checkpoint back = read_checkpoint(path);
    REQUIRE(back.entries.size() == 1);
    CHECK(back.entries[0].name == "w");
    CHECK(back.entries[0].dims == std::vector<std::uint32_t>{2, 2});
    CHECK(back.entries[0].values == ckpt.entries[0].values);
}

TEST_CASE("gckp: multi-tensor checkpoints round-trip bit-exactly") {
    Rng rng(77);
    Checkpoint ckpt;
    for (int i = 0; i < 8; ++i) {
        CheckpointEntry e;
        e.name = "param." + std::to_string(i);
        e.dims = {static_cast<std::uint32_t>(1 + rng.below(4)),
                  static_cast<std::uint32_t>(1 + rng.below(6)),
                  static_cast<std::uint32_t>(1 + rng.below(6))};
        std::size_t n = e.dims[0] * e.dims[1] * e.dims[2];
        for (std::size_t j = 0; j < n; ++j)
            e.values.push_back(static_cast<float>(rng.normal()));
        ckpt.entries.push_back(std::move(e));
    }
    const auto a = tmp_path("multi_a.gckp");
    const auto b = tmp_path("multi_b.gckp");
    write_checkpoint(a, ckpt);
    write_checkpoint(b, read_checkpoint(a));
    CHECK(hash_file(a) == hash_file(b));
}

TEST_CASE("gckp: name collisions and length mismatches are format errors") {
    Checkpoint dup;
    dup.entries.push_back({"w", {1}, {1.0f}});
    dup.entries.push_back({"w", {1}, {2.0f}});
    CHECK_THROWS_AS(write_checkpoint(tmp_path("dup.gckp"), dup), format_error);

    Checkpoint bad;
    bad.entries.push_back({"w", {3}, {1.0f}});
    CHECK_THROWS_AS(write_checkpoint(tmp_path("mismatch.gckp"), bad), format_error);
}

TEST_CASE("pgm: binary ones slice is all 255, gray 0.5 maps to 128") {
    Volume v({3, 3, 3}, VoxelType::binary_u8, 1.0f);
    const auto path = tmp_path("slice.pgm");
    export_slice(v, Axis::z, 1, path);
    auto bytes = slurp(path);
    const std::string header = "P5\n3 3\n255\n";
    REQUIRE(bytes.size() == header.size() + 9);
    for (std::size_t i = 0; i < header.size(); ++i)
        CHECK(bytes[i] == static_cast<unsigned char>(header[i]));
    for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 255);

    Volume gray({1, 1, 1}, VoxelType::gray_f32, 0.5f);
    export_slice(gray, Axis::x, 0, gray.dims[0] ? path : path);
    auto gb = slurp(path);
    CHECK(gb.back() == 128);  // round-half-up
}

TEST_CASE("pgm: slice bytes equal an independent mapping over a random volume") {
    Rng rng(31);
    Volume v({5, 4, 3}, VoxelType::gray_f32);
    for (auto& f : v.data) f = static_cast<float>(rng.uniform());
    const auto path = tmp_path("map.pgm");
    export_slice(v, Axis::y, 2, path);
    auto bytes = slurp(path);
    const std::string header = "P5\n5 3\n255\n";
    REQUIRE(bytes.size() == header.size() + 15);
    std::size_t at = header.size();
    for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t x = 0; x < 5; ++x) {
            const long expect = std::lround(static_cast<double>(v.at(x, 2, z)) * 255.0);
            CHECK(bytes[at++] == static_cast<unsigned char>(expect));
        }
}

TEST_CASE("export_slice rejects out-of-range index") {
    Volume v({2, 2, 2}, VoxelType::gray_f32, 0.0f);
    CHECK_THROWS_AS(export_slice(v, Axis::z, 2, tmp_path("oob.pgm")),
                    std::invalid_argument);
}
