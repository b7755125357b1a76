#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmvt/errors.hpp"

namespace dmvt {

// Dense 3D scalar image, row-major [H][W][D], voxels finite and in [0, 1].
// Stored as float to match the on-disk payload bit for bit.
struct Volume {
    int64_t h = 0, w = 0, d = 0;
    std::vector<float> voxels;

    int64_t numel() const { return h * w * d; }

    float &at(int64_t i, int64_t j, int64_t k) {
        return voxels[static_cast<size_t>((i * w + j) * d + k)];
    }
    float at(int64_t i, int64_t j, int64_t k) const {
        return voxels[static_cast<size_t>((i * w + j) * d + k)];
    }

    static Volume filled(int64_t h, int64_t w, int64_t d, float value);
};

// DMVOL1 container: "DMVOL1" + 2 reserved zero bytes, then H, W, D as u32
// little-endian, then H*W*D float32 little-endian voxels.
Volume load_volume(const std::string &path);
void save_volume(const Volume &v, const std::string &path);

// Shared validity check (finite, in [0,1], extents positive); throws FormatError.
void validate_volume(const Volume &v, const std::string &context);

}  // namespace dmvt
