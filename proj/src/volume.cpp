#include "dmvt/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace dmvt {

namespace {

constexpr char kMagic[6] = {'D', 'M', 'V', 'O', 'L', '1'};
// Generous per-axis cap; rejects corrupt headers before a huge allocation.
constexpr uint32_t kMaxExtent = 4096;

void put_u32(std::string &out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

uint32_t get_u32(const unsigned char *p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char *p) {
    uint32_t bits = get_u32(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

void put_f32(std::string &out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

}  // namespace

Volume Volume::filled(int64_t h, int64_t w, int64_t d, float value) {
    Volume v;
    v.h = h;
    v.w = w;
    v.d = d;
    v.voxels.assign(static_cast<size_t>(h * w * d), value);
    validate_volume(v, "filled volume");
    return v;
}

void validate_volume(const Volume &v, const std::string &context) {
    if (v.h <= 0 || v.w <= 0 || v.d <= 0 || v.h > kMaxExtent || v.w > kMaxExtent ||
        v.d > kMaxExtent) {
        throw FormatError(context + ": dimension overflow (" + std::to_string(v.h) + "x" +
                          std::to_string(v.w) + "x" + std::to_string(v.d) + ")");
    }
    if (static_cast<int64_t>(v.voxels.size()) != v.numel()) {
        throw FormatError(context + ": voxel count " + std::to_string(v.voxels.size()) +
                          " does not match dims");
    }
    for (float f : v.voxels) {
        if (!std::isfinite(f) || f < 0.0f || f > 1.0f) {
            throw FormatError(context + ": voxel out of range [0,1]");
        }
    }
}

Volume load_volume(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open volume file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on " + path);

    if (bytes.size() < 20) throw FormatError(path + ": truncated header");
    const auto *p = reinterpret_cast<const unsigned char *>(bytes.data());
    if (std::memcmp(p, kMagic, 6) != 0) throw FormatError(path + ": bad magic");
    if (p[6] != 0 || p[7] != 0) throw FormatError(path + ": nonzero reserved bytes");

    uint32_t h = get_u32(p + 8), w = get_u32(p + 12), d = get_u32(p + 16);
    if (h == 0 || w == 0 || d == 0 || h > kMaxExtent || w > kMaxExtent || d > kMaxExtent) {
        throw FormatError(path + ": dimension overflow (" + std::to_string(h) + "x" +
                          std::to_string(w) + "x" + std::to_string(d) + ")");
    }
    uint64_t n = static_cast<uint64_t>(h) * w * d;
    uint64_t expect = 20 + n * 4;
    if (bytes.size() < expect) {
        throw FormatError(path + ": truncated payload, expected " + std::to_string(expect) +
                          " bytes, got " + std::to_string(bytes.size()));
    }
    if (bytes.size() > expect) {
        throw FormatError(path + ": trailing bytes after payload");
    }

    Volume v;
    v.h = h;
    v.w = w;
    v.d = d;
    v.voxels.resize(n);
    for (uint64_t i = 0; i < n; ++i) v.voxels[i] = get_f32(p + 20 + i * 4);
    validate_volume(v, path);
    return v;
}

void save_volume(const Volume &v, const std::string &path) {
    validate_volume(v, "save " + path);
    std::string out;
    out.reserve(20 + v.voxels.size() * 4);
    out.append(kMagic, 6);
    out.push_back('\0');
    out.push_back('\0');
    put_u32(out, static_cast<uint32_t>(v.h));
    put_u32(out, static_cast<uint32_t>(v.w));
    put_u32(out, static_cast<uint32_t>(v.d));
    for (float f : v.voxels) put_f32(out, f);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("write failure on " + path);
}

}  // namespace dmvt
