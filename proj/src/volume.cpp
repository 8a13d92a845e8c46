#include "inspex/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "inspex/errors.hpp"

namespace inspex {

namespace {

void require_valid_shape(const GridShape& s, const char* op) {
    if (s.nx <= 0 || s.ny <= 0 || s.nz <= 0) {
        throw UsageError(std::string(op) + ": degenerate shape " + std::to_string(s.nx) + "x" +
                         std::to_string(s.ny) + "x" + std::to_string(s.nz));
    }
}

void require_same_shape(const GridShape& a, const GridShape& b, const char* op) {
    if (!(a == b)) {
        throw UsageError(std::string(op) + ": shape mismatch (" + std::to_string(a.nx) + "x" +
                         std::to_string(a.ny) + "x" + std::to_string(a.nz) + " vs " +
                         std::to_string(b.nx) + "x" + std::to_string(b.ny) + "x" +
                         std::to_string(b.nz) + ")");
    }
}

} // namespace

Volume::Volume(GridShape shape, float fill) : shape_(shape) {
    require_valid_shape(shape, "Volume");
    data_.assign(static_cast<size_t>(shape.numel()), fill);
}

Volume::Volume(GridShape shape, std::vector<float> voxels) : shape_(shape), data_(std::move(voxels)) {
    require_valid_shape(shape, "Volume");
    if (static_cast<int64_t>(data_.size()) != shape.numel()) {
        throw UsageError("Volume: buffer length " + std::to_string(data_.size()) +
                         " does not match shape product " + std::to_string(shape.numel()));
    }
}

float Volume::sample_linear(double x, double y, double z) const {
    const double cx = std::clamp(x, 0.0, static_cast<double>(shape_.nx - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(shape_.ny - 1));
    const double cz = std::clamp(z, 0.0, static_cast<double>(shape_.nz - 1));
    const int i0 = std::min(static_cast<int>(cx), shape_.nx - 2 >= 0 ? shape_.nx - 2 : 0);
    const int j0 = std::min(static_cast<int>(cy), shape_.ny - 2 >= 0 ? shape_.ny - 2 : 0);
    const int k0 = std::min(static_cast<int>(cz), shape_.nz - 2 >= 0 ? shape_.nz - 2 : 0);
    const int i1 = std::min(i0 + 1, shape_.nx - 1);
    const int j1 = std::min(j0 + 1, shape_.ny - 1);
    const int k1 = std::min(k0 + 1, shape_.nz - 1);
    const double fx = cx - i0, fy = cy - j0, fz = cz - k0;

    const double c000 = at(i0, j0, k0), c100 = at(i1, j0, k0);
    const double c010 = at(i0, j1, k0), c110 = at(i1, j1, k0);
    const double c001 = at(i0, j0, k1), c101 = at(i1, j0, k1);
    const double c011 = at(i0, j1, k1), c111 = at(i1, j1, k1);

    const double c00 = c000 + (c100 - c000) * fx;
    const double c10 = c010 + (c110 - c010) * fx;
    const double c01 = c001 + (c101 - c001) * fx;
    const double c11 = c011 + (c111 - c011) * fx;
    const double c0 = c00 + (c10 - c00) * fy;
    const double c1 = c01 + (c11 - c01) * fy;
    return static_cast<float>(c0 + (c1 - c0) * fz);
}

float Volume::sample_nearest(double x, double y, double z) const {
    const int i = std::clamp(static_cast<int>(std::lround(x)), 0, shape_.nx - 1);
    const int j = std::clamp(static_cast<int>(std::lround(y)), 0, shape_.ny - 1);
    const int k = std::clamp(static_cast<int>(std::lround(z)), 0, shape_.nz - 1);
    return at(i, j, k);
}

void Volume::validate_finite(const std::string& context) const {
    for (float v : data_) {
        if (!std::isfinite(v)) {
            throw DataError(context + ": volume contains non-finite voxel values");
        }
    }
}

BinaryMask::BinaryMask(GridShape shape, uint8_t fill) : shape_(shape) {
    require_valid_shape(shape, "BinaryMask");
    bits_.assign(static_cast<size_t>(shape.numel()), fill ? uint8_t{1} : uint8_t{0});
}

int64_t BinaryMask::count() const {
    int64_t n = 0;
    for (uint8_t b : bits_) n += b ? 1 : 0;
    return n;
}

Volume clip_hu(const Volume& v, double lo, double hi) {
    if (!(lo < hi)) {
        throw UsageError("clip_hu: window lo must be below hi, got (" + std::to_string(lo) + ", " +
                         std::to_string(hi) + ")");
    }
    Volume out = v;
    const float flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
    for (float& x : out.data()) x = std::min(std::max(x, flo), fhi);
    return out;
}

NormalizedVolume normalize(const Volume& v, double lo, double hi) {
    if (!(lo < hi)) {
        throw UsageError("normalize: window lo must be below hi");
    }
    Volume out = v;
    const double scale = 2.0 / (hi - lo);
    for (float& x : out.data()) {
        if (x < lo || x > hi) {
            throw UsageError("normalize: voxel " + std::to_string(x) + " outside window [" +
                             std::to_string(lo) + ", " + std::to_string(hi) + "]; clip first");
        }
        x = static_cast<float>((x - lo) * scale - 1.0);
    }
    return NormalizedVolume(std::move(out), lo, hi);
}

Volume denormalize(const NormalizedVolume& n) {
    Volume out = n.values();
    const double lo = n.window_lo(), hi = n.window_hi();
    const double scale = (hi - lo) / 2.0;
    for (float& x : out.data()) {
        x = static_cast<float>((static_cast<double>(x) + 1.0) * scale + lo);
    }
    return out;
}

Volume apply_mask(const Volume& v, const BinaryMask& m, double background, MaskMode mode) {
    require_same_shape(v.shape(), m.shape(), "apply_mask");
    Volume out = v;
    const float bg = static_cast<float>(background);
    const auto& bits = m.data();
    auto& data = out.data();
    if (mode == MaskMode::FillBackground) {
        for (size_t idx = 0; idx < data.size(); ++idx) {
            if (!bits[idx]) data[idx] = bg;
        }
    } else {
        for (size_t idx = 0; idx < data.size(); ++idx) {
            data[idx] *= bits[idx] ? 1.0f : 0.0f;
        }
    }
    return out;
}

namespace {

GridShape scaled_shape(const GridShape& in, const std::array<double, 3>& factor) {
    for (double f : factor) {
        if (!(f > 0.0)) throw UsageError("resample: factors must be positive");
    }
    GridShape out;
    out.nx = static_cast<int>(std::floor(in.nx * factor[0] + 0.5));
    out.ny = static_cast<int>(std::floor(in.ny * factor[1] + 0.5));
    out.nz = static_cast<int>(std::floor(in.nz * factor[2] + 0.5));
    if (out.nx < 2 || out.ny < 2 || out.nz < 2) {
        throw UsageError("resample: output shape would drop below 2 voxels per axis");
    }
    return out;
}

} // namespace

Volume resample(const Volume& v, std::array<double, 3> factor, Interp interp) {
    if (factor[0] == 1.0 && factor[1] == 1.0 && factor[2] == 1.0) return v;
    const GridShape out_shape = scaled_shape(v.shape(), factor);
    Volume out(out_shape);
    out.origin = v.origin;
    out.direction = v.direction;
    for (int a = 0; a < 3; ++a) out.spacing[a] = v.spacing[a] / factor[a];
    for (int k = 0; k < out_shape.nz; ++k) {
        const double z = k / factor[2];
        for (int j = 0; j < out_shape.ny; ++j) {
            const double y = j / factor[1];
            for (int i = 0; i < out_shape.nx; ++i) {
                const double x = i / factor[0];
                out.at(i, j, k) = (interp == Interp::Linear) ? v.sample_linear(x, y, z)
                                                             : v.sample_nearest(x, y, z);
            }
        }
    }
    return out;
}

BinaryMask resample_mask(const BinaryMask& m, std::array<double, 3> factor) {
    Volume tmp(m.shape());
    for (size_t idx = 0; idx < tmp.data().size(); ++idx) {
        tmp.data()[idx] = m.data()[idx] ? 1.0f : 0.0f;
    }
    const Volume r = resample(tmp, factor, Interp::Nearest);
    BinaryMask out(r.shape());
    for (size_t idx = 0; idx < out.data().size(); ++idx) {
        out.data()[idx] = r.data()[idx] > 0.5f ? 1 : 0;
    }
    return out;
}

namespace {

std::vector<float> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<float> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i / sigma) * (i / sigma));
        k[static_cast<size_t>(i + radius)] = static_cast<float>(w);
        sum += w;
    }
    for (float& w : k) w = static_cast<float>(w / sum);
    return k;
}

inline int reflect_index(int i, int n) {
    // Mirror without repeating the edge sample; degenerates safely for n==1.
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

void blur_axis(const float* src, float* dst, GridShape s, const std::vector<float>& kernel, int axis) {
    const int radius = static_cast<int>(kernel.size() / 2);
    const int64_t nx = s.nx, ny = s.ny, nz = s.nz;
    const int n_axis = axis == 0 ? s.nx : axis == 1 ? s.ny : s.nz;
    const int64_t stride = axis == 0 ? 1 : axis == 1 ? nx : nx * ny;

    for (int64_t k = 0; k < nz; ++k) {
        for (int64_t j = 0; j < ny; ++j) {
            for (int64_t i = 0; i < nx; ++i) {
                const int pos = axis == 0 ? static_cast<int>(i) : axis == 1 ? static_cast<int>(j)
                                                                            : static_cast<int>(k);
                const int64_t base = i + nx * (j + ny * k) - pos * stride;
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    const int q = reflect_index(pos + t, n_axis);
                    acc += kernel[static_cast<size_t>(t + radius)] * src[base + q * stride];
                }
                dst[i + nx * (j + ny * k)] = static_cast<float>(acc);
            }
        }
    }
}

} // namespace

void gaussian_blur_buffer(const float* src, float* dst, GridShape shape, double sigma) {
    const size_t n = static_cast<size_t>(shape.numel());
    if (sigma <= 0.0) {
        std::copy(src, src + n, dst);
        return;
    }
    const std::vector<float> kernel = gaussian_kernel(sigma);
    std::vector<float> tmp(n);
    blur_axis(src, dst, shape, kernel, 0);
    blur_axis(dst, tmp.data(), shape, kernel, 1);
    blur_axis(tmp.data(), dst, shape, kernel, 2);
}

Volume gaussian_blur(const Volume& v, double sigma) {
    if (sigma <= 0.0) return v;
    Volume out = v;
    gaussian_blur_buffer(v.data().data(), out.data().data(), v.shape(), sigma);
    return out;
}

} // namespace inspex
