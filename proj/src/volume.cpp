#include "voxgan/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace voxgan {

namespace {

constexpr std::size_t kMaxDim = 4096;
constexpr std::size_t kMaxTensorElems = std::size_t{1} << 30;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class Reader {
  public:
    Reader(const std::string& path, const char* what) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw std::runtime_error(std::string(what) + ": cannot open " + path);
        bytes_.assign(std::istreambuf_iterator<char>(in),
                      std::istreambuf_iterator<char>());
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) {
        if (remaining() < n)
            throw format_error(std::string(what) + ": truncated payload in " + path_,
                               pos_);
    }

    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i)
            v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_++]))
                 << (8 * i);
        return v;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++]))
                 << (8 * i);
        return v;
    }

    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    void expect_magic(const char* magic, const char* what) {
        const std::size_t at = pos_;
        if (remaining() < 4 || std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
            throw format_error(std::string(what) + ": bad magic in " + path_, at);
        pos_ += 4;
    }

  private:
    std::string path_;
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace

Volume read_gvox(const std::string& path) {
    Reader r(path, "gvox");
    r.expect_magic("GVOX", "gvox");
    const std::size_t version_at = r.offset();
    const std::uint8_t version = r.u8("gvox");
    if (version != 1)
        throw format_error("gvox: unsupported version " + std::to_string(version),
                           version_at);
    const std::size_t dtype_at = r.offset();
    const std::uint8_t dtype = r.u8("gvox");
    if (dtype > 1)
        throw format_error("gvox: unknown dtype code " + std::to_string(dtype),
                           dtype_at);
    const std::size_t res16_at = r.offset();
    if (r.u16("gvox") != 0) throw format_error("gvox: nonzero reserved field", res16_at);

    Volume v;
    v.dtype = static_cast<VoxelType>(dtype);
    for (int a = 0; a < 3; ++a) {
        const std::size_t at = r.offset();
        const std::uint32_t d = r.u32("gvox");
        if (d == 0 || d > kMaxDim)
            throw format_error("gvox: dimension " + std::to_string(d) +
                                   " out of range [1, 4096]",
                               at);
        v.dims[static_cast<std::size_t>(a)] = d;
    }
    const std::size_t res32_at = r.offset();
    if (r.u32("gvox") != 0) throw format_error("gvox: nonzero reserved field", res32_at);

    const std::size_t n = v.numel();
    v.data.resize(n);
    if (v.dtype == VoxelType::binary_u8) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t at = r.offset();
            const std::uint8_t b = r.u8("gvox");
            if (b > 1)
                throw format_error("gvox: binary voxel value " + std::to_string(b), at);
            v.data[i] = static_cast<float>(b);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t at = r.offset();
            const float f = r.f32("gvox");
            if (!(f >= 0.0f && f <= 1.0f))
                throw format_error("gvox: gray voxel outside [0,1]", at);
            v.data[i] = f;
        }
    }
    if (r.remaining() != 0)
        throw format_error("gvox: trailing bytes after payload", r.offset());
    return v;
}

std::size_t write_gvox(const std::string& path, const Volume& v) {
    for (std::size_t d : v.dims)
        if (d == 0 || d > kMaxDim)
            throw std::invalid_argument("write_gvox: dimension " + std::to_string(d) +
                                        " out of range [1, 4096]");
    if (v.data.size() != v.numel())
        throw std::invalid_argument("write_gvox: data length does not match dims");

    std::string out;
    out.reserve(24 + v.numel() * (v.dtype == VoxelType::binary_u8 ? 1 : 4));
    out += "GVOX";
    out.push_back(1);
    out.push_back(static_cast<char>(v.dtype));
    put_u16(out, 0);
    for (std::size_t d : v.dims) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, 0);

    std::size_t clamped = 0;
    if (v.dtype == VoxelType::binary_u8) {
        for (float f : v.data) {
            if (f != 0.0f && f != 1.0f)
                throw std::invalid_argument(
                    "write_gvox: binary volume holds non-indicator value " +
                    std::to_string(f));
            out.push_back(f == 1.0f ? 1 : 0);
        }
    } else {
        for (float f : v.data) {
            float w = f;
            if (!(w >= 0.0f)) {
                w = 0.0f;  // also catches NaN
                ++clamped;
            } else if (w > 1.0f) {
                w = 1.0f;
                ++clamped;
            }
            put_f32(out, w);
        }
    }
    write_bytes(path, out);
    return clamped;
}

Checkpoint read_checkpoint(const std::string& path) {
    Reader r(path, "gckp");
    r.expect_magic("GCKP", "gckp");
    const std::size_t version_at = r.offset();
    const std::uint8_t version = r.u8("gckp");
    if (version != 1)
        throw format_error("gckp: unsupported version " + std::to_string(version),
                           version_at);
    const std::uint32_t count = r.u32("gckp");

    Checkpoint ckpt;
    std::set<std::string> seen;
    for (std::uint32_t e = 0; e < count; ++e) {
        CheckpointEntry entry;
        const std::uint16_t name_len = r.u16("gckp");
        const std::size_t name_at = r.offset();
        entry.name = r.str(name_len, "gckp");
        if (!seen.insert(entry.name).second)
            throw format_error("gckp: duplicate tensor name '" + entry.name + "'",
                               name_at);
        const std::size_t rank_at = r.offset();
        const std::uint8_t rank = r.u8("gckp");
        if (rank == 0 || rank > 8)
            throw format_error("gckp: rank " + std::to_string(rank) +
                                   " outside [1, 8]",
                               rank_at);
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const std::size_t at = r.offset();
            const std::uint32_t dim = r.u32("gckp");
            if (dim == 0) throw format_error("gckp: zero extent", at);
            n *= dim;
            if (n > kMaxTensorElems)
                throw format_error("gckp: tensor too large", at);
            entry.dims.push_back(dim);
        }
        r.need(4 * n, "gckp");
        entry.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) entry.values[i] = r.f32("gckp");
        ckpt.entries.push_back(std::move(entry));
    }
    if (r.remaining() != 0)
        throw format_error("gckp: trailing bytes after payload", r.offset());
    return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out += "GCKP";
    out.push_back(1);
    put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));

    std::set<std::string> seen;
    for (const auto& e : ckpt.entries) {
        if (!seen.insert(e.name).second)
            throw format_error("gckp: duplicate tensor name '" + e.name + "'",
                               out.size());
        if (e.name.size() > 0xFFFF)
            throw format_error("gckp: tensor name too long", out.size());
        if (e.dims.empty() || e.dims.size() > 8)
            throw format_error("gckp: rank outside [1, 8] for '" + e.name + "'",
                               out.size());
        std::size_t n = 1;
        for (std::uint32_t d : e.dims) {
            if (d == 0)
                throw format_error("gckp: zero extent in '" + e.name + "'", out.size());
            n *= d;
        }
        if (n != e.values.size())
            throw format_error("gckp: payload length mismatch for '" + e.name + "'",
                               out.size());
        put_u16(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.dims.size()));
        for (std::uint32_t d : e.dims) put_u32(out, d);
        for (float v : e.values) put_f32(out, v);
    }
    write_bytes(path, out);
}

void export_slice(const Volume& v, Axis axis, std::size_t index,
                  const std::string& path) {
    const auto a = static_cast<std::size_t>(axis);
    if (index >= v.dims[a])
        throw std::invalid_argument("export_slice: index " + std::to_string(index) +
                                    " out of range for axis extent " +
                                    std::to_string(v.dims[a]));

    // Image mapping: width runs along the faster remaining axis, height along
    // the slower one (z: x/y, y: x/z, x: y/z).
    std::size_t width, height;
    switch (axis) {
        case Axis::z: width = v.dims[0]; height = v.dims[1]; break;
        case Axis::y: width = v.dims[0]; height = v.dims[2]; break;
        default:      width = v.dims[1]; height = v.dims[2]; break;
    }

    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) +
                      "\n255\n";
    out.reserve(out.size() + width * height);
    for (std::size_t row = 0; row < height; ++row)
        for (std::size_t col = 0; col < width; ++col) {
            float f;
            switch (axis) {
                case Axis::z: f = v.at(col, row, index); break;
                case Axis::y: f = v.at(col, index, row); break;
                default:      f = v.at(index, col, row); break;
            }
            long byte = std::lround(static_cast<double>(f) * 255.0);
            byte = byte < 0 ? 0 : (byte > 255 ? 255 : byte);
            out.push_back(static_cast<char>(static_cast<unsigned char>(byte)));
        }
    write_bytes(path, out);
}

Mask mask_from_volume(const Volume& v) {
    if (v.dtype != VoxelType::binary_u8)
        throw std::invalid_argument("mask_from_volume: mask volume must be binary");
    Mask m(v.dims);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        m.data[i] = v.data[i] == 1.0f ? 1 : 0;
    return m;
}

Volume mask_to_volume(const Mask& m) {
    Volume v(m.dims, VoxelType::binary_u8);
    for (std::size_t i = 0; i < m.data.size(); ++i)
        v.data[i] = static_cast<float>(m.data[i]);
    return v;
}

}  // namespace voxgan
