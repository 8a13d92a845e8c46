#include "inspex/field.hpp"

#include <algorithm>
#include <cmath>

#include "inspex/errors.hpp"

namespace inspex {

DisplacementField::DisplacementField(GridShape shape) : shape_(shape) {
    if (shape.nx <= 0 || shape.ny <= 0 || shape.nz <= 0) {
        throw UsageError("DisplacementField: degenerate shape");
    }
    data_.assign(static_cast<size_t>(3 * shape.numel()), 0.0f);
}

std::array<double, 3> DisplacementField::sample(double x, double y, double z) const {
    const double cx = std::clamp(x, 0.0, static_cast<double>(shape_.nx - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(shape_.ny - 1));
    const double cz = std::clamp(z, 0.0, static_cast<double>(shape_.nz - 1));
    const int i0 = std::min(static_cast<int>(cx), std::max(shape_.nx - 2, 0));
    const int j0 = std::min(static_cast<int>(cy), std::max(shape_.ny - 2, 0));
    const int k0 = std::min(static_cast<int>(cz), std::max(shape_.nz - 2, 0));
    const int i1 = std::min(i0 + 1, shape_.nx - 1);
    const int j1 = std::min(j0 + 1, shape_.ny - 1);
    const int k1 = std::min(k0 + 1, shape_.nz - 1);
    const double fx = cx - i0, fy = cy - j0, fz = cz - k0;

    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) {
        const double c000 = at(i0, j0, k0, c), c100 = at(i1, j0, k0, c);
        const double c010 = at(i0, j1, k0, c), c110 = at(i1, j1, k0, c);
        const double c001 = at(i0, j0, k1, c), c101 = at(i1, j0, k1, c);
        const double c011 = at(i0, j1, k1, c), c111 = at(i1, j1, k1, c);
        const double c00 = c000 + (c100 - c000) * fx;
        const double c10 = c010 + (c110 - c010) * fx;
        const double c01 = c001 + (c101 - c001) * fx;
        const double c11 = c011 + (c111 - c011) * fx;
        const double c0 = c00 + (c10 - c00) * fy;
        const double c1 = c01 + (c11 - c01) * fy;
        out[static_cast<size_t>(c)] = c0 + (c1 - c0) * fz;
    }
    return out;
}

double DisplacementField::mean_magnitude() const {
    if (shape_.numel() == 0) return 0.0;
    double acc = 0.0;
    const size_t n = static_cast<size_t>(shape_.numel());
    for (size_t idx = 0; idx < n; ++idx) {
        const double ux = data_[3 * idx], uy = data_[3 * idx + 1], uz = data_[3 * idx + 2];
        acc += std::sqrt(ux * ux + uy * uy + uz * uz);
    }
    return acc / static_cast<double>(n);
}

double DisplacementField::max_magnitude() const {
    double best = 0.0;
    const size_t n = static_cast<size_t>(shape_.numel());
    for (size_t idx = 0; idx < n; ++idx) {
        const double ux = data_[3 * idx], uy = data_[3 * idx + 1], uz = data_[3 * idx + 2];
        best = std::max(best, std::sqrt(ux * ux + uy * uy + uz * uz));
    }
    return best;
}

bool DisplacementField::has_nan() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return true;
    }
    return false;
}

namespace {

void require_same_shape(const GridShape& a, const GridShape& b, const char* op) {
    if (!(a == b)) {
        throw UsageError(std::string(op) + ": field/grid shape mismatch");
    }
}

} // namespace

Volume warp_volume(const Volume& v, const DisplacementField& field, Interp interp, double background) {
    require_same_shape(v.shape(), field.shape(), "warp_volume");
    Volume out(v.shape());
    out.spacing = v.spacing;
    out.origin = v.origin;
    out.direction = v.direction;
    const float bg = static_cast<float>(background);
    const GridShape s = v.shape();
    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                const int64_t idx = field.index(i, j, k);
                const double x = i + field.data()[3 * idx];
                const double y = j + field.data()[3 * idx + 1];
                const double z = k + field.data()[3 * idx + 2];
                if (x < 0.0 || y < 0.0 || z < 0.0 || x > s.nx - 1 || y > s.ny - 1 || z > s.nz - 1) {
                    out.at(i, j, k) = bg;
                } else {
                    out.at(i, j, k) = (interp == Interp::Linear) ? v.sample_linear(x, y, z)
                                                                 : v.sample_nearest(x, y, z);
                }
            }
        }
    }
    return out;
}

namespace {

BinaryMask warp_mask_impl(const BinaryMask& m, const DisplacementField& field, Interp interp) {
    Volume tmp(m.shape());
    for (size_t idx = 0; idx < tmp.data().size(); ++idx) {
        tmp.data()[idx] = m.data()[idx] ? 1.0f : 0.0f;
    }
    const Volume warped = warp_volume(tmp, field, interp, 0.0);
    BinaryMask out(m.shape());
    for (size_t idx = 0; idx < out.data().size(); ++idx) {
        out.data()[idx] = warped.data()[idx] > 0.5f ? 1 : 0;
    }
    return out;
}

} // namespace

BinaryMask warp_mask(const BinaryMask& m, const DisplacementField& field) {
    return warp_mask_impl(m, field, Interp::Nearest);
}

BinaryMask warp_mask_linear(const BinaryMask& m, const DisplacementField& field) {
    return warp_mask_impl(m, field, Interp::Linear);
}

DisplacementField compose_fields(const DisplacementField& outer, const DisplacementField& inner) {
    require_same_shape(outer.shape(), inner.shape(), "compose_fields");
    DisplacementField out(outer.shape());
    out.spacing = outer.spacing;
    const GridShape s = outer.shape();
    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                const int64_t idx = out.index(i, j, k);
                const double ox = outer.data()[3 * idx];
                const double oy = outer.data()[3 * idx + 1];
                const double oz = outer.data()[3 * idx + 2];
                const auto v = inner.sample(i + ox, j + oy, k + oz);
                out.data()[3 * idx] = static_cast<float>(v[0] + ox);
                out.data()[3 * idx + 1] = static_cast<float>(v[1] + oy);
                out.data()[3 * idx + 2] = static_cast<float>(v[2] + oz);
            }
        }
    }
    return out;
}

InvertResult invert_field(const DisplacementField& f, int iterations, double tolerance) {
    InvertResult res;
    res.field = DisplacementField(f.shape());
    res.field.spacing = f.spacing;
    const GridShape s = f.shape();
    for (int it = 0; it < iterations; ++it) {
        DisplacementField next(s);
        next.spacing = f.spacing;
        for (int k = 0; k < s.nz; ++k) {
            for (int j = 0; j < s.ny; ++j) {
                for (int i = 0; i < s.nx; ++i) {
                    const int64_t idx = f.index(i, j, k);
                    const double vx = res.field.data()[3 * idx];
                    const double vy = res.field.data()[3 * idx + 1];
                    const double vz = res.field.data()[3 * idx + 2];
                    const auto u = f.sample(i + vx, j + vy, k + vz);
                    next.data()[3 * idx] = static_cast<float>(-u[0]);
                    next.data()[3 * idx + 1] = static_cast<float>(-u[1]);
                    next.data()[3 * idx + 2] = static_cast<float>(-u[2]);
                }
            }
        }
        res.field = std::move(next);
    }
    // Residual of (id + f) o (id + v): should vanish for an exact inverse.
    res.residual = compose_fields(res.field, f).mean_magnitude();
    res.converged = res.residual <= tolerance;
    return res;
}

Volume jacobian_determinant(const DisplacementField& f) {
    const GridShape s = f.shape();
    Volume out(s);
    out.spacing = {f.spacing[0], f.spacing[1], f.spacing[2]};

    auto grad_axis = [&](int i, int j, int k, int c, int axis) -> double {
        int lo[3] = {i, j, k}, hi[3] = {i, j, k};
        const int n[3] = {s.nx, s.ny, s.nz};
        hi[axis] = std::min(hi[axis] + 1, n[axis] - 1);
        lo[axis] = std::max(lo[axis] - 1, 0);
        const double denom = hi[axis] - lo[axis];
        if (denom == 0.0) return 0.0;
        return (f.at(hi[0], hi[1], hi[2], c) - f.at(lo[0], lo[1], lo[2], c)) / denom;
    };

    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                double m[3][3];
                for (int c = 0; c < 3; ++c) {
                    for (int axis = 0; axis < 3; ++axis) {
                        m[c][axis] = grad_axis(i, j, k, c, axis) + (c == axis ? 1.0 : 0.0);
                    }
                }
                const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                                   m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                                   m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                out.at(i, j, k) = static_cast<float>(det);
            }
        }
    }
    return out;
}

DisplacementField smooth_field(const DisplacementField& f, double sigma) {
    if (sigma <= 0.0) return f;
    const GridShape s = f.shape();
    const size_t n = static_cast<size_t>(s.numel());
    DisplacementField out(s);
    out.spacing = f.spacing;
    std::vector<float> comp(n), blurred(n);
    for (int c = 0; c < 3; ++c) {
        for (size_t idx = 0; idx < n; ++idx) comp[idx] = f.data()[3 * idx + c];
        gaussian_blur_buffer(comp.data(), blurred.data(), s, sigma);
        for (size_t idx = 0; idx < n; ++idx) out.data()[3 * idx + c] = blurred[idx];
    }
    return out;
}

DisplacementField scale_field(const DisplacementField& f, std::array<double, 3> factor) {
    for (double x : factor) {
        if (!(x > 0.0)) throw UsageError("scale_field: factors must be positive");
    }
    GridShape out_shape;
    out_shape.nx = static_cast<int>(std::floor(f.shape().nx * factor[0] + 0.5));
    out_shape.ny = static_cast<int>(std::floor(f.shape().ny * factor[1] + 0.5));
    out_shape.nz = static_cast<int>(std::floor(f.shape().nz * factor[2] + 0.5));
    if (out_shape.nx < 2 || out_shape.ny < 2 || out_shape.nz < 2) {
        throw UsageError("scale_field: output shape would drop below 2 voxels per axis");
    }
    DisplacementField out(out_shape);
    for (int a = 0; a < 3; ++a) out.spacing[a] = f.spacing[a] / factor[a];
    for (int k = 0; k < out_shape.nz; ++k) {
        for (int j = 0; j < out_shape.ny; ++j) {
            for (int i = 0; i < out_shape.nx; ++i) {
                const auto v = f.sample(i / factor[0], j / factor[1], k / factor[2]);
                const int64_t idx = out.index(i, j, k);
                for (int c = 0; c < 3; ++c) {
                    out.data()[3 * idx + c] =
                        static_cast<float>(v[static_cast<size_t>(c)] * factor[static_cast<size_t>(c)]);
                }
            }
        }
    }
    return out;
}

DisplacementField exponentiate_field(const DisplacementField& v, int steps) {
    DisplacementField out = v;
    const float scale = 1.0f / static_cast<float>(1 << steps);
    for (float& x : out.data()) x *= scale;
    for (int i = 0; i < steps; ++i) {
        out = compose_fields(out, out);
    }
    return out;
}

DisplacementField add_fields(const DisplacementField& a, const DisplacementField& b) {
    require_same_shape(a.shape(), b.shape(), "add_fields");
    DisplacementField out = a;
    for (size_t idx = 0; idx < out.data().size(); ++idx) out.data()[idx] += b.data()[idx];
    return out;
}

} // namespace inspex
