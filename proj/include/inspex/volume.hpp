#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace inspex {

/// Grid dimensions of a 3-D voxel volume.
struct GridShape {
    int nx = 0, ny = 0, nz = 0;

    int64_t numel() const {
        return static_cast<int64_t>(nx) * ny * nz;
    }
    bool operator==(const GridShape&) const = default;
};

/// 3-D scalar image in Hounsfield units. Voxels are float32, stored x-fastest
/// (index = i + nx*(j + ny*k)); spacing is mm per axis, origin in mm, and
/// `direction` is a row-major 3x3 axis-orientation matrix.
///
/// Instances are treated as immutable after construction: all operations
/// return new volumes.
class Volume {
public:
    Volume() = default;
    Volume(GridShape shape, float fill = 0.0f);
    Volume(GridShape shape, std::vector<float> voxels);

    const GridShape& shape() const { return shape_; }
    int nx() const { return shape_.nx; }
    int ny() const { return shape_.ny; }
    int nz() const { return shape_.nz; }
    int64_t numel() const { return shape_.numel(); }

    float& at(int i, int j, int k) { return data_[index(i, j, k)]; }
    float at(int i, int j, int k) const { return data_[index(i, j, k)]; }
    int64_t index(int i, int j, int k) const {
        return i + static_cast<int64_t>(shape_.nx) * (j + static_cast<int64_t>(shape_.ny) * k);
    }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    std::array<double, 3> spacing = {1.0, 1.0, 1.0};
    std::array<double, 3> origin = {0.0, 0.0, 0.0};
    std::array<double, 9> direction = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    /// Trilinear sample at a continuous index-space coordinate, clamped to
    /// the grid (edge extension).
    float sample_linear(double x, double y, double z) const;
    /// Nearest-neighbour sample, clamped to the grid.
    float sample_nearest(double x, double y, double z) const;

    /// Throws DataError if any voxel is non-finite.
    void validate_finite(const std::string& context) const;

private:
    GridShape shape_;
    std::vector<float> data_;
};

/// Boolean field on the same grid as an associated Volume.
class BinaryMask {
public:
    BinaryMask() = default;
    explicit BinaryMask(GridShape shape, uint8_t fill = 0);

    const GridShape& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }

    uint8_t& at(int i, int j, int k) { return bits_[index(i, j, k)]; }
    uint8_t at(int i, int j, int k) const { return bits_[index(i, j, k)]; }
    int64_t index(int i, int j, int k) const {
        return i + static_cast<int64_t>(shape_.nx) * (j + static_cast<int64_t>(shape_.ny) * k);
    }

    std::vector<uint8_t>& data() { return bits_; }
    const std::vector<uint8_t>& data() const { return bits_; }

    int64_t count() const;

    /// Carries a non-fatal message (e.g. "no lung component found").
    std::string warning;

private:
    GridShape shape_;
    std::vector<uint8_t> bits_;
};

/// Volume mapped affinely into [-1, 1]; remembers the HU window it came from
/// so the mapping can be inverted exactly.
class NormalizedVolume {
public:
    NormalizedVolume() = default;
    NormalizedVolume(Volume values, double window_lo, double window_hi)
        : values_(std::move(values)), lo_(window_lo), hi_(window_hi) {}

    const Volume& values() const { return values_; }
    Volume& values() { return values_; }
    double window_lo() const { return lo_; }
    double window_hi() const { return hi_; }

private:
    Volume values_;
    double lo_ = -1024.0;
    double hi_ = 3072.0;
};

enum class Interp { Linear, Nearest };

enum class MaskMode {
    FillBackground, // set voxels outside the mask to a background HU
    LiteralMultiply // multiply voxels by the 0/1 mask
};

/// Clamp every voxel into [lo, hi]. Idempotent; metadata unchanged.
Volume clip_hu(const Volume& v, double lo, double hi);

/// Affine map x -> 2(x-lo)/(hi-lo) - 1. The input must already lie in
/// [lo, hi] (clip first); a voxel outside the window is a precondition error.
NormalizedVolume normalize(const Volume& v, double lo, double hi);

/// Exact affine inverse of normalize, using the recorded window.
Volume denormalize(const NormalizedVolume& n);

/// Replace voxels outside the mask. FillBackground writes `background`
/// (default -1024 HU, air); LiteralMultiply multiplies by the mask instead,
/// which maps masked-out voxels to 0 HU.
Volume apply_mask(const Volume& v, const BinaryMask& m, double background = -1024.0,
                  MaskMode mode = MaskMode::FillBackground);

/// Resample by a positive per-axis scale factor. Output index i samples
/// input coordinate i/factor. Linear for images, nearest for masks.
Volume resample(const Volume& v, std::array<double, 3> factor, Interp interp);
BinaryMask resample_mask(const BinaryMask& m, std::array<double, 3> factor);

/// Separable Gaussian blur with kernel radius ceil(3*sigma), reflected
/// borders. sigma <= 0 returns the input unchanged.
Volume gaussian_blur(const Volume& v, double sigma);
void gaussian_blur_buffer(const float* src, float* dst, GridShape shape, double sigma);

} // namespace inspex
