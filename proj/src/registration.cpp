#include "inspex/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "inspex/errors.hpp"

namespace inspex {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<double, 9> mat_mul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> c{};
    for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a[static_cast<size_t>(3 * r + k)] * b[static_cast<size_t>(3 * k + col)];
            c[static_cast<size_t>(3 * r + col)] = acc;
        }
    }
    return c;
}

std::array<double, 3> mat_apply(const std::array<double, 9>& a, const std::array<double, 3>& x) {
    return {a[0] * x[0] + a[1] * x[1] + a[2] * x[2], a[3] * x[0] + a[4] * x[1] + a[5] * x[2],
            a[6] * x[0] + a[7] * x[1] + a[8] * x[2]};
}

} // namespace

std::array<double, 3> AffineTransform::apply(const std::array<double, 3>& x) const {
    const std::array<double, 3> d{x[0] - center[0], x[1] - center[1], x[2] - center[2]};
    const std::array<double, 3> r = mat_apply(matrix, d);
    return {r[0] + center[0] + translation[0], r[1] + center[1] + translation[1],
            r[2] + center[2] + translation[2]};
}

double AffineTransform::rigidity_error() const {
    // max |A^T A - I| entry plus |det - 1|
    double worst = 0.0;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                acc += matrix[static_cast<size_t>(3 * k + r)] * matrix[static_cast<size_t>(3 * k + c)];
            }
            worst = std::max(worst, std::abs(acc - (r == c ? 1.0 : 0.0)));
        }
    }
    const auto& m = matrix;
    const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                       m[2] * (m[3] * m[7] - m[4] * m[6]);
    return worst + std::abs(det - 1.0);
}

void RegistrationConfig::validate() const {
    if (cc_radius < 1) throw UsageError("RegistrationConfig: cc_radius must be >= 1");
    if (smooth_update_sigma < 0 || smooth_total_sigma < 0) {
        throw UsageError("RegistrationConfig: smoothing sigmas must be non-negative");
    }
    if (!(gradient_step > 0)) throw UsageError("RegistrationConfig: gradient_step must be positive");
    if (ss_steps < 0 || ss_steps > 12) throw UsageError("RegistrationConfig: ss_steps out of range");
    if (!(tolerance > 0)) throw UsageError("RegistrationConfig: tolerance must be positive");
    if (pyramid_levels < 1 || pyramid_levels > 5) {
        throw UsageError("RegistrationConfig: pyramid_levels out of range");
    }
}

Volume resample_affine(const Volume& v, const AffineTransform& t, Interp interp, double background) {
    Volume out(v.shape());
    out.spacing = v.spacing;
    out.origin = v.origin;
    out.direction = v.direction;
    const GridShape s = v.shape();
    const float bg = static_cast<float>(background);
    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                const auto p = t.apply({static_cast<double>(i), static_cast<double>(j),
                                        static_cast<double>(k)});
                if (p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] > s.nx - 1 || p[1] > s.ny - 1 ||
                    p[2] > s.nz - 1) {
                    out.at(i, j, k) = bg;
                } else {
                    out.at(i, j, k) = interp == Interp::Linear ? v.sample_linear(p[0], p[1], p[2])
                                                               : v.sample_nearest(p[0], p[1], p[2]);
                }
            }
        }
    }
    return out;
}

BinaryMask resample_affine_mask(const BinaryMask& m, const AffineTransform& t) {
    Volume tmp(m.shape());
    for (size_t i = 0; i < tmp.data().size(); ++i) tmp.data()[i] = m.data()[i] ? 1.0f : 0.0f;
    const Volume w = resample_affine(tmp, t, Interp::Nearest, 0.0);
    BinaryMask out(m.shape());
    for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = w.data()[i] > 0.5f ? 1 : 0;
    return out;
}

DisplacementField affine_to_field(const AffineTransform& t, GridShape shape) {
    DisplacementField f(shape);
    for (int k = 0; k < shape.nz; ++k) {
        for (int j = 0; j < shape.ny; ++j) {
            for (int i = 0; i < shape.nx; ++i) {
                const auto p = t.apply({static_cast<double>(i), static_cast<double>(j),
                                        static_cast<double>(k)});
                const int64_t idx = f.index(i, j, k);
                f.data()[static_cast<size_t>(3 * idx)] = static_cast<float>(p[0] - i);
                f.data()[static_cast<size_t>(3 * idx + 1)] = static_cast<float>(p[1] - j);
                f.data()[static_cast<size_t>(3 * idx + 2)] = static_cast<float>(p[2] - k);
            }
        }
    }
    return f;
}

DisplacementField compose_affine_after_field(const AffineTransform& t,
                                             const DisplacementField& deform) {
    const GridShape s = deform.shape();
    DisplacementField out(s);
    out.spacing = deform.spacing;
    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                const int64_t idx = out.index(i, j, k);
                const double x = i + deform.data()[static_cast<size_t>(3 * idx)];
                const double y = j + deform.data()[static_cast<size_t>(3 * idx + 1)];
                const double z = k + deform.data()[static_cast<size_t>(3 * idx + 2)];
                const auto p = t.apply({x, y, z});
                out.data()[static_cast<size_t>(3 * idx)] = static_cast<float>(p[0] - i);
                out.data()[static_cast<size_t>(3 * idx + 1)] = static_cast<float>(p[1] - j);
                out.data()[static_cast<size_t>(3 * idx + 2)] = static_cast<float>(p[2] - k);
            }
        }
    }
    return out;
}

// ---- similarity metrics ----

namespace {

// Sliding-window (box) sum along one axis, borders truncated.
void box_sum_axis(const std::vector<float>& src, std::vector<float>& dst, GridShape s, int radius,
                  int axis) {
    const int64_t nx = s.nx, ny = s.ny, nz = s.nz;
    const int n_axis = axis == 0 ? s.nx : axis == 1 ? s.ny : s.nz;
    const int64_t stride = axis == 0 ? 1 : axis == 1 ? nx : nx * ny;
    const int64_t n_lines[3][2] = {{ny, nz}, {nx, nz}, {nx, ny}};
    const int64_t stride_a = axis == 0 ? nx : 1;
    const int64_t stride_b = axis == 2 ? nx : nx * ny;

    std::vector<double> prefix(static_cast<size_t>(n_axis) + 1);
    for (int64_t b = 0; b < n_lines[axis][1]; ++b) {
        for (int64_t a = 0; a < n_lines[axis][0]; ++a) {
            const int64_t base = a * stride_a + b * stride_b;
            prefix[0] = 0.0;
            for (int t = 0; t < n_axis; ++t) {
                prefix[static_cast<size_t>(t + 1)] =
                    prefix[static_cast<size_t>(t)] + src[static_cast<size_t>(base + t * stride)];
            }
            for (int t = 0; t < n_axis; ++t) {
                const int lo = std::max(0, t - radius);
                const int hi = std::min(n_axis - 1, t + radius);
                dst[static_cast<size_t>(base + t * stride)] =
                    static_cast<float>(prefix[static_cast<size_t>(hi + 1)] - prefix[static_cast<size_t>(lo)]);
            }
        }
    }
}

void box_sum(const std::vector<float>& src, std::vector<float>& dst, GridShape s, int radius) {
    std::vector<float> tmp(src.size());
    box_sum_axis(src, dst, s, radius, 0);
    box_sum_axis(dst, tmp, s, radius, 1);
    box_sum_axis(tmp, dst, s, radius, 2);
}

std::vector<float> window_counts(GridShape s, int radius) {
    std::vector<float> ones(static_cast<size_t>(s.numel()), 1.0f);
    std::vector<float> cnt(ones.size());
    box_sum(ones, cnt, s, radius);
    return cnt;
}

struct SimilarityForces {
    double value = 0.0;
    // dS/dF(x) and dS/dM(x); empty when only the value was requested.
    std::vector<float> force_f, force_m;
};

SimilarityForces evaluate_similarity(const Volume& f, const Volume& m, Metric metric, int cc_radius,
                                     bool with_forces) {
    if (!(f.shape() == m.shape())) throw UsageError("similarity: shape mismatch");
    const GridShape s = f.shape();
    const size_t n = static_cast<size_t>(s.numel());
    SimilarityForces out;
    if (with_forces) {
        out.force_f.assign(n, 0.0f);
        out.force_m.assign(n, 0.0f);
    }

    if (metric == Metric::MSE) {
        double acc = 0.0;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(f.data()[i]) - m.data()[i];
            acc += d * d;
            if (with_forces) {
                out.force_m[i] = static_cast<float>(2.0 * d * inv_n);
                out.force_f[i] = static_cast<float>(-2.0 * d * inv_n);
            }
        }
        out.value = -acc * inv_n;
        return out;
    }

    // Local cross-correlation with demeaned window sums.
    std::vector<float> sf(n), sm(n), sff(n), smm(n), sfm(n), buf(n);
    box_sum(f.data(), sf, s, cc_radius);
    box_sum(m.data(), sm, s, cc_radius);
    for (size_t i = 0; i < n; ++i) buf[i] = f.data()[i] * f.data()[i];
    box_sum(buf, sff, s, cc_radius);
    for (size_t i = 0; i < n; ++i) buf[i] = m.data()[i] * m.data()[i];
    box_sum(buf, smm, s, cc_radius);
    for (size_t i = 0; i < n; ++i) buf[i] = f.data()[i] * m.data()[i];
    box_sum(buf, sfm, s, cc_radius);
    const std::vector<float> cnt = window_counts(s, cc_radius);

    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double w = cnt[i];
        const double a = sfm[i] - static_cast<double>(sf[i]) * sm[i] / w;
        const double b = sff[i] - static_cast<double>(sf[i]) * sf[i] / w;
        const double c = smm[i] - static_cast<double>(sm[i]) * sm[i] / w;
        const double bc = b * c;
        if (bc < 1e-6 || b < 1e-9 || c < 1e-9) continue;
        const double cc = a * a / bc;
        acc += cc;
        if (with_forces) {
            const double fbar = f.data()[i] - sf[i] / w;
            const double mbar = m.data()[i] - sm[i] / w;
            out.force_m[i] = static_cast<float>(2.0 * a / bc * (fbar - a / c * mbar));
            out.force_f[i] = static_cast<float>(2.0 * a / bc * (mbar - a / b * fbar));
        }
    }
    out.value = acc / static_cast<double>(n);
    return out;
}

// Central-difference spatial gradient packed as a 3-vector field.
DisplacementField image_gradient(const Volume& v) {
    const GridShape s = v.shape();
    DisplacementField g(s);
    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                const int64_t idx = g.index(i, j, k);
                const int i0 = std::max(i - 1, 0), i1 = std::min(i + 1, s.nx - 1);
                const int j0 = std::max(j - 1, 0), j1 = std::min(j + 1, s.ny - 1);
                const int k0 = std::max(k - 1, 0), k1 = std::min(k + 1, s.nz - 1);
                g.data()[static_cast<size_t>(3 * idx)] =
                    (v.at(i1, j, k) - v.at(i0, j, k)) / static_cast<float>(i1 - i0 == 0 ? 1 : i1 - i0);
                g.data()[static_cast<size_t>(3 * idx + 1)] =
                    (v.at(i, j1, k) - v.at(i, j0, k)) / static_cast<float>(j1 - j0 == 0 ? 1 : j1 - j0);
                g.data()[static_cast<size_t>(3 * idx + 2)] =
                    (v.at(i, j, k1) - v.at(i, j, k0)) / static_cast<float>(k1 - k0 == 0 ? 1 : k1 - k0);
            }
        }
    }
    return g;
}

} // namespace

double similarity(const Volume& a, const Volume& b, Metric metric, int cc_radius) {
    return evaluate_similarity(a, b, metric, cc_radius, false).value;
}

// ---- rigid / affine ----

namespace {

struct PyramidLevel {
    Volume fixed, moving;
    double factor = 1.0;
};

std::vector<PyramidLevel> build_pyramid(const Volume& fixed, const Volume& moving, int levels) {
    std::vector<PyramidLevel> out;
    for (int l = 0; l < levels; ++l) {
        const double factor = std::pow(0.5, levels - 1 - l);
        PyramidLevel lvl;
        lvl.factor = factor;
        if (factor == 1.0) {
            lvl.fixed = fixed;
            lvl.moving = moving;
        } else {
            const double sigma = 0.5 / factor;
            lvl.fixed = resample(gaussian_blur(fixed, sigma), {factor, factor, factor}, Interp::Linear);
            lvl.moving = resample(gaussian_blur(moving, sigma), {factor, factor, factor}, Interp::Linear);
        }
        const GridShape s = lvl.fixed.shape();
        if (s.nx < 8 || s.ny < 8 || s.nz < 8) continue; // too coarse to be useful
        out.push_back(std::move(lvl));
    }
    if (out.empty()) {
        PyramidLevel lvl;
        lvl.factor = 1.0;
        lvl.fixed = fixed;
        lvl.moving = moving;
        out.push_back(std::move(lvl));
    }
    return out;
}

std::array<double, 9> euler_matrix(double rx, double ry, double rz) {
    const double cx = std::cos(rx), sx = std::sin(rx);
    const double cy = std::cos(ry), sy = std::sin(ry);
    const double cz = std::cos(rz), sz = std::sin(rz);
    const std::array<double, 9> mx{1, 0, 0, 0, cx, -sx, 0, sx, cx};
    const std::array<double, 9> my{cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    const std::array<double, 9> mz{cz, -sz, 0, sz, cz, 0, 0, 0, 1};
    return mat_mul(mz, mat_mul(my, mx));
}

std::array<double, 9> euler_matrix_derivative(double rx, double ry, double rz, int which) {
    const double cx = std::cos(rx), sx = std::sin(rx);
    const double cy = std::cos(ry), sy = std::sin(ry);
    const double cz = std::cos(rz), sz = std::sin(rz);
    const std::array<double, 9> mx{1, 0, 0, 0, cx, -sx, 0, sx, cx};
    const std::array<double, 9> my{cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    const std::array<double, 9> mz{cz, -sz, 0, sz, cz, 0, 0, 0, 1};
    const std::array<double, 9> dmx{0, 0, 0, 0, -sx, -cx, 0, cx, -sx};
    const std::array<double, 9> dmy{-sy, 0, cy, 0, 0, 0, -cy, 0, -sy};
    const std::array<double, 9> dmz{-sz, -cz, 0, cz, -sz, 0, 0, 0, 0};
    switch (which) {
        case 0: return mat_mul(mz, mat_mul(my, dmx));
        case 1: return mat_mul(mz, mat_mul(dmy, mx));
        default: return mat_mul(dmz, mat_mul(my, mx));
    }
}

// Shared gradient-ascent driver with backtracking line search. Parameters are
// pre-scaled so a unit step moves far corners by about one voxel.
AffineResult optimize_affine_stage(const Volume& fixed_full, const Volume& moving_full,
                                   std::vector<double> params, bool rigid_kind,
                                   const RegistrationConfig& cfg, int iter_cap) {
    const Metric metric = cfg.affine_metric;
    AffineResult result;
    const GridShape full = fixed_full.shape();
    const std::array<double, 3> center_full{0.5 * (full.nx - 1), 0.5 * (full.ny - 1),
                                            0.5 * (full.nz - 1)};
    const double r_scale_full =
        0.5 * std::sqrt(static_cast<double>(full.nx) * full.nx + static_cast<double>(full.ny) * full.ny +
                        static_cast<double>(full.nz) * full.nz);

    // params layout: rigid = (rx,ry,rz,tx,ty,tz); affine = (A row-major 9, t 3).
    auto to_transform = [&](const std::vector<double>& p, double level_factor) {
        AffineTransform t;
        t.kind = rigid_kind ? AffineTransform::Kind::Rigid : AffineTransform::Kind::Affine;
        t.center = {center_full[0] * level_factor, center_full[1] * level_factor,
                    center_full[2] * level_factor};
        if (rigid_kind) {
            t.matrix = euler_matrix(p[0], p[1], p[2]);
            t.translation = {p[3] * level_factor, p[4] * level_factor, p[5] * level_factor};
        } else {
            for (int i = 0; i < 9; ++i) t.matrix[static_cast<size_t>(i)] = p[static_cast<size_t>(i)];
            t.translation = {p[9] * level_factor, p[10] * level_factor, p[11] * level_factor};
        }
        return t;
    };

    const auto pyramid = build_pyramid(fixed_full, moving_full, cfg.pyramid_levels);
    bool zero_gradient_everywhere = true;

    for (const PyramidLevel& lvl : pyramid) {
        result.warning.clear();
        const Volume& F = lvl.fixed;
        const Volume& M = lvl.moving;
        const DisplacementField grad_m = image_gradient(M);
        const GridShape s = F.shape();
        const double r_scale = r_scale_full * lvl.factor;

        auto eval_value = [&](const std::vector<double>& p) {
            const AffineTransform t = to_transform(p, lvl.factor);
            const Volume mw = resample_affine(M, t, Interp::Linear, cfg.background_hu);
            return evaluate_similarity(F, mw, metric, cfg.cc_radius, false).value;
        };

        auto eval_gradient = [&](const std::vector<double>& p, double& value) {
            const AffineTransform t = to_transform(p, lvl.factor);
            const Volume mw = resample_affine(M, t, Interp::Linear, cfg.background_hu);
            const SimilarityForces sim =
                evaluate_similarity(F, mw, metric, cfg.cc_radius, true);
            value = sim.value;

            std::vector<double> g(static_cast<size_t>(rigid_kind ? 6 : 12), 0.0);
            std::array<std::array<double, 9>, 3> dmats{};
            if (rigid_kind) {
                for (int a = 0; a < 3; ++a) dmats[static_cast<size_t>(a)] = euler_matrix_derivative(p[0], p[1], p[2], a);
            }
            for (int k = 0; k < s.nz; ++k) {
                for (int j = 0; j < s.ny; ++j) {
                    for (int i = 0; i < s.nx; ++i) {
                        const int64_t idx = static_cast<int64_t>(i) + s.nx * (j + static_cast<int64_t>(s.ny) * k);
                        const float fm = sim.force_m[static_cast<size_t>(idx)];
                        if (fm == 0.0f) continue;
                        const auto pnt = t.apply({static_cast<double>(i), static_cast<double>(j),
                                                  static_cast<double>(k)});
                        if (pnt[0] < 0 || pnt[1] < 0 || pnt[2] < 0 || pnt[0] > s.nx - 1 ||
                            pnt[1] > s.ny - 1 || pnt[2] > s.nz - 1) {
                            continue;
                        }
                        const auto gm = grad_m.sample(pnt[0], pnt[1], pnt[2]);
                        const std::array<double, 3> d{i - t.center[0], j - t.center[1],
                                                      k - t.center[2]};
                        if (rigid_kind) {
                            for (int a = 0; a < 3; ++a) {
                                const auto dv = mat_apply(dmats[static_cast<size_t>(a)], d);
                                g[static_cast<size_t>(a)] +=
                                    fm * (gm[0] * dv[0] + gm[1] * dv[1] + gm[2] * dv[2]);
                            }
                            for (int a = 0; a < 3; ++a) g[static_cast<size_t>(3 + a)] += fm * gm[static_cast<size_t>(a)];
                        } else {
                            for (int r = 0; r < 3; ++r) {
                                for (int c = 0; c < 3; ++c) {
                                    g[static_cast<size_t>(3 * r + c)] += fm * gm[static_cast<size_t>(r)] * d[static_cast<size_t>(c)];
                                }
                            }
                            for (int a = 0; a < 3; ++a) g[static_cast<size_t>(9 + a)] += fm * gm[static_cast<size_t>(a)];
                        }
                    }
                }
            }
            // Scale so a unit step in any parameter moves corners ~1 voxel.
            if (rigid_kind) {
                for (int a = 0; a < 3; ++a) g[static_cast<size_t>(a)] *= r_scale;
                // translations measured in full-resolution voxels
                for (int a = 3; a < 6; ++a) g[static_cast<size_t>(a)] *= lvl.factor;
            } else {
                for (int i = 0; i < 9; ++i) g[static_cast<size_t>(i)] *= r_scale;
                for (int a = 9; a < 12; ++a) g[static_cast<size_t>(a)] *= lvl.factor;
            }
            return g;
        };

        double value = 0.0;
        std::vector<double> g = eval_gradient(params, value);
        result.metric_trace.clear();
        result.metric_trace.push_back(value);
        double step = 1.0;
        result.converged = false;

        for (int it = 0; it < iter_cap; ++it) {
            double gnorm = 0.0;
            for (double x : g) gnorm = std::max(gnorm, std::abs(x));
            if (gnorm < 1e-14) {
                result.converged = true;
                break;
            }
            zero_gradient_everywhere = false;

            // Backtracking: scaled parameter step of at most `step` units.
            bool accepted = false;
            for (int attempt = 0; attempt < 10; ++attempt) {
                std::vector<double> trial = params;
                for (size_t pi = 0; pi < trial.size(); ++pi) {
                    double delta = step * g[pi] / gnorm;
                    // Undo the display scaling for angle/matrix parameters.
                    const bool linear_part = rigid_kind ? pi < 3 : pi < 9;
                    if (linear_part) delta /= r_scale;
                    trial[pi] += delta;
                }
                const double trial_value = eval_value(trial);
                if (trial_value > value - 0.5 * cfg.tolerance * std::abs(value)) {
                    const double gain = trial_value - value;
                    params = std::move(trial);
                    value = trial_value;
                    result.metric_trace.push_back(value);
                    g = eval_gradient(params, value);
                    step = std::min(step * 1.25, 2.0);
                    accepted = true;
                    if (gain < cfg.tolerance * std::max(std::abs(value), 1e-12)) {
                        result.converged = true;
                    }
                    break;
                }
                step *= 0.5;
                if (step < 1e-4) break;
            }
            if (!accepted || step < 1e-4) {
                result.converged = true;
                break;
            }
            if (result.converged) break;
        }
        if (!result.converged) {
            result.warning = "iteration cap reached before the similarity plateaued";
        }
    }

    result.transform = to_transform(params, 1.0);
    if (zero_gradient_everywhere) {
        result.converged = true;
        result.warning = "zero similarity gradient (constant image?); transform left at its init";
    }
    return result;
}

} // namespace

AffineResult register_rigid(const Volume& fixed, const Volume& moving, const RegistrationConfig& cfg) {
    cfg.validate();
    if (fixed.numel() == 0 || moving.numel() == 0) throw UsageError("register_rigid: empty volume");
    if (!(fixed.shape() == moving.shape())) {
        throw UsageError("register_rigid: fixed and moving grids must match");
    }
    std::vector<double> params(6, 0.0);
    return optimize_affine_stage(fixed, moving, std::move(params), true, cfg, cfg.rigid_iterations);
}

AffineResult register_affine(const Volume& fixed, const Volume& moving, const AffineTransform& init,
                             const RegistrationConfig& cfg) {
    cfg.validate();
    if (!(fixed.shape() == moving.shape())) {
        throw UsageError("register_affine: fixed and moving grids must match");
    }
    std::vector<double> params(12, 0.0);
    for (int i = 0; i < 9; ++i) params[static_cast<size_t>(i)] = init.matrix[static_cast<size_t>(i)];
    for (int a = 0; a < 3; ++a) params[static_cast<size_t>(9 + a)] = init.translation[static_cast<size_t>(a)];
    AffineResult res =
        optimize_affine_stage(fixed, moving, std::move(params), false, cfg, cfg.affine_iterations);
    res.transform.kind = AffineTransform::Kind::Affine;
    return res;
}

// ---- symmetric deformable ----

namespace {

DisplacementField force_times_gradient(const std::vector<float>& force, const DisplacementField& grad,
                                       const std::array<double, 3>& spacing) {
    DisplacementField out(grad.shape());
    out.spacing = grad.spacing;
    const double min_spacing = std::min({spacing[0], spacing[1], spacing[2]});
    const float scale[3] = {static_cast<float>(min_spacing / spacing[0]),
                            static_cast<float>(min_spacing / spacing[1]),
                            static_cast<float>(min_spacing / spacing[2])};
    const size_t n = force.size();
    for (size_t i = 0; i < n; ++i) {
        const float fm = force[i];
        out.data()[3 * i] = fm * grad.data()[3 * i] * scale[0];
        out.data()[3 * i + 1] = fm * grad.data()[3 * i + 1] * scale[1];
        out.data()[3 * i + 2] = fm * grad.data()[3 * i + 2] * scale[2];
    }
    return out;
}

void scale_in_place(DisplacementField& f, double s) {
    for (float& x : f.data()) x = static_cast<float>(x * s);
}

} // namespace

RegistrationResult register_deformable(const Volume& fixed, const Volume& moving,
                                       const RegistrationConfig& cfg, bool half_resolution,
                                       const DisplacementField* init_forward) {
    cfg.validate();
    if (!(fixed.shape() == moving.shape())) {
        throw UsageError("register_deformable: fixed and moving grids must match");
    }
    const std::array<double, 3> half{0.5, 0.5, 0.5};
    const Volume F = half_resolution
                         ? resample(gaussian_blur(fixed, 1.0), half, Interp::Linear)
                         : fixed;
    const Volume M = half_resolution
                         ? resample(gaussian_blur(moving, 1.0), half, Interp::Linear)
                         : moving;
    const GridShape s = F.shape();
    const std::string level_name = half_resolution ? "half" : "full";

    DisplacementField u_f(s), u_m(s);
    u_f.spacing = F.spacing;
    u_m.spacing = F.spacing;
    if (init_forward != nullptr) {
        // Seed the moving side with the prior stage's field.
        u_m = half_resolution ? scale_field(*init_forward, half) : *init_forward;
    }

    RegistrationResult result;
    auto warp_pair = [&](const DisplacementField& uf, const DisplacementField& um) {
        return std::pair<Volume, Volume>(warp_volume(F, uf, Interp::Linear, cfg.background_hu),
                                         warp_volume(M, um, Interp::Linear, cfg.background_hu));
    };

    auto [f_w, m_w] = warp_pair(u_f, u_m);
    SimilarityForces sim = evaluate_similarity(f_w, m_w, cfg.deform_metric, cfg.cc_radius, true);
    double value = sim.value;
    result.metric_trace.push_back(value);

    double step_scale = 1.0;
    int small_gains = 0;

    for (int it = 0; it < cfg.deform_iterations; ++it) {
        DisplacementField g_m = force_times_gradient(sim.force_m, image_gradient(m_w), F.spacing);
        DisplacementField g_f = force_times_gradient(sim.force_f, image_gradient(f_w), F.spacing);
        g_m = smooth_field(g_m, cfg.smooth_update_sigma);
        g_f = smooth_field(g_f, cfg.smooth_update_sigma);
        const double norm_m = g_m.max_magnitude();
        const double norm_f = g_f.max_magnitude();
        const double norm = std::max(norm_m, norm_f);
        if (norm < 1e-20) {
            result.converged = true;
            break;
        }

        bool accepted = false;
        for (int attempt = 0; attempt < 6 && !accepted; ++attempt) {
            DisplacementField step_m = g_m;
            DisplacementField step_f = g_f;
            scale_in_place(step_m, cfg.gradient_step * step_scale / norm);
            scale_in_place(step_f, cfg.gradient_step * step_scale / norm);
            const DisplacementField delta_m = exponentiate_field(step_m, cfg.ss_steps);
            const DisplacementField delta_f = exponentiate_field(step_f, cfg.ss_steps);
            DisplacementField trial_m = smooth_field(compose_fields(delta_m, u_m), cfg.smooth_total_sigma);
            DisplacementField trial_f = smooth_field(compose_fields(delta_f, u_f), cfg.smooth_total_sigma);
            if (trial_m.has_nan() || trial_f.has_nan()) {
                throw NumericError("register_deformable(" + level_name + "): NaN in the field at iteration " +
                                   std::to_string(it));
            }
            auto [f_trial, m_trial] = warp_pair(trial_f, trial_m);
            SimilarityForces sim_trial =
                evaluate_similarity(f_trial, m_trial, cfg.deform_metric, cfg.cc_radius, true);
            if (sim_trial.value > value - 0.5 * cfg.tolerance * std::abs(value)) {
                const double gain = sim_trial.value - value;
                u_m = std::move(trial_m);
                u_f = std::move(trial_f);
                f_w = std::move(f_trial);
                m_w = std::move(m_trial);
                sim = std::move(sim_trial);
                value = sim.value;
                result.metric_trace.push_back(value);
                step_scale = std::min(1.0, step_scale * 1.3);
                accepted = true;
                if (gain < cfg.tolerance * std::max(std::abs(value), 1e-12)) {
                    if (++small_gains >= 3) {
                        result.converged = true;
                    }
                } else {
                    small_gains = 0;
                }
            } else {
                step_scale *= 0.5;
            }
        }
        if (!accepted || step_scale < 1.0 / 64.0) {
            result.converged = true;
        }
        if (result.converged) break;
    }
    if (!result.converged) {
        result.warning = "deformable(" + level_name + "): iteration cap reached";
    }

    const InvertResult inv_f = invert_field(u_f, 30);
    const InvertResult inv_m = invert_field(u_m, 30);
    DisplacementField fwd = compose_fields(inv_f.field, u_m);
    DisplacementField bwd = compose_fields(inv_m.field, u_f);
    if (!inv_f.converged || !inv_m.converged) {
        result.warning += (result.warning.empty() ? "" : "; ");
        result.warning += "half-warp inversion residual above tolerance";
    }

    if (half_resolution) {
        // Back to the full grid: per-axis factors recover odd extents too.
        const std::array<double, 3> up{static_cast<double>(fixed.shape().nx) / s.nx,
                                       static_cast<double>(fixed.shape().ny) / s.ny,
                                       static_cast<double>(fixed.shape().nz) / s.nz};
        fwd = scale_field(fwd, up);
        bwd = scale_field(bwd, up);
    }
    if (fwd.has_nan() || bwd.has_nan()) {
        throw NumericError("register_deformable(" + level_name + "): NaN in the composed output field");
    }
    result.forward = std::move(fwd);
    result.inverse = std::move(bwd);
    result.forward.spacing = fixed.spacing;
    result.inverse.spacing = fixed.spacing;
    result.warped_moving = warp_volume(moving, result.forward, Interp::Linear, cfg.background_hu);
    result.inverse_warped_fixed = warp_volume(fixed, result.inverse, Interp::Linear, cfg.background_hu);
    return result;
}

} // namespace inspex
