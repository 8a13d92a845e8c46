#include "inspex/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "inspex/errors.hpp"
#include "inspex/rng.hpp"

namespace inspex {

namespace {

constexpr double kPi = 3.14159265358979323846;

double ellipsoid_rho(const std::array<double, 3>& p, const Ellipsoid& e) {
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) {
        const double d = (p[static_cast<size_t>(a)] - e.center[static_cast<size_t>(a)]) /
                         e.radii[static_cast<size_t>(a)];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double quintic_step(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

// Per-lung radial profile: uniform scale s1 inside the lung (rho <= 1),
// blended to identity at rho_out. h(rho) = rho * s(rho) is strictly
// increasing, so the map is invertible ray by ray.
struct LungWarp {
    Ellipsoid lung;
    double s1 = 1.0;
    double rho_out = 1.4;

    double scale_at(double rho) const {
        if (rho <= 1.0) return s1;
        if (rho >= rho_out) return 1.0;
        return s1 + (1.0 - s1) * quintic_step((rho - 1.0) / (rho_out - 1.0));
    }

    double h(double rho) const { return rho * scale_at(rho); }

    // Inverse of h on [0, rho_out] by bisection.
    double h_inverse(double target) const {
        if (target >= rho_out) return target;
        double lo = 0.0, hi = rho_out;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (h(mid) < target) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return 0.5 * (lo + hi);
    }

    std::array<double, 3> forward(const std::array<double, 3>& x) const {
        const double rho = ellipsoid_rho(x, lung);
        if (rho >= rho_out || rho == 0.0) return x;
        const double s = scale_at(rho);
        std::array<double, 3> out;
        for (int a = 0; a < 3; ++a) {
            out[static_cast<size_t>(a)] = lung.center[static_cast<size_t>(a)] +
                                          (x[static_cast<size_t>(a)] - lung.center[static_cast<size_t>(a)]) * s;
        }
        return out;
    }

    std::array<double, 3> inverse(const std::array<double, 3>& p) const {
        const double rho_p = ellipsoid_rho(p, lung);
        if (rho_p >= rho_out || rho_p == 0.0) return p;
        const double rho_x = h_inverse(rho_p);
        const double ratio = rho_x / rho_p;
        std::array<double, 3> out;
        for (int a = 0; a < 3; ++a) {
            out[static_cast<size_t>(a)] = lung.center[static_cast<size_t>(a)] +
                                          (p[static_cast<size_t>(a)] - lung.center[static_cast<size_t>(a)]) * ratio;
        }
        return out;
    }
};

struct RigidMotion {
    double cos_a = 1.0, sin_a = 0.0;
    std::array<double, 3> pivot{};
    std::array<double, 3> translation{};

    std::array<double, 3> apply(const std::array<double, 3>& x) const {
        const double dx = x[0] - pivot[0], dy = x[1] - pivot[1];
        return {pivot[0] + cos_a * dx - sin_a * dy + translation[0],
                pivot[1] + sin_a * dx + cos_a * dy + translation[1], x[2] + translation[2]};
    }

    std::array<double, 3> invert(const std::array<double, 3>& x) const {
        const double dx = x[0] - translation[0] - pivot[0];
        const double dy = x[1] - translation[1] - pivot[1];
        return {pivot[0] + cos_a * dx + sin_a * dy, pivot[1] - sin_a * dx + cos_a * dy,
                x[2] - translation[2]};
    }
};

struct Blob {
    std::array<double, 3> center{};
    double radius = 0.0; // voxels, spherical

    bool contains(const std::array<double, 3>& p) const {
        double acc = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double d = p[static_cast<size_t>(a)] - center[static_cast<size_t>(a)];
            acc += d * d;
        }
        return acc <= radius * radius;
    }
};

struct Scene {
    const PhantomSpec* spec = nullptr;
    std::array<LungWarp, 2> warps;
    RigidMotion rigid;
    std::vector<Blob> blobs;
    Volume texture; // unit-variance correlated noise, sampled with the tissue

    struct Sample {
        double hu = -1024.0;
        int lung = -1; // index of containing lung, -1 outside
        bool emphysema = false;
    };

    Sample eval_inspiratory(const std::array<double, 3>& x) const {
        Sample s;
        if (ellipsoid_rho(x, spec->body) > 1.0) return s;
        s.hu = spec->tissue_hu;
        for (int l = 0; l < 2; ++l) {
            if (ellipsoid_rho(x, spec->lungs[static_cast<size_t>(l)]) <= 1.0) {
                s.lung = l;
                break;
            }
        }
        if (s.lung < 0) return s;
        for (const Blob& b : blobs) {
            if (b.contains(x)) {
                s.emphysema = true;
                s.hu = spec->emphysema_hu;
                return s;
            }
        }
        s.hu = spec->parenchyma_hu +
               spec->texture_amplitude_hu * texture.sample_linear(x[0], x[1], x[2]);
        // Texture must not push parenchyma into the emphysema band or above
        // the lung-air threshold used for segmentation.
        s.hu = std::clamp(s.hu, spec->emphysema_hu + 40.0, -450.0);
        return s;
    }

    // Material point that ends up at expiratory location x.
    std::array<double, 3> pull_back(const std::array<double, 3>& x) const {
        std::array<double, 3> p = rigid.invert(x);
        for (const LungWarp& w : warps) {
            const double rho = ellipsoid_rho(p, w.lung);
            if (rho < w.rho_out) {
                p = w.inverse(p);
                break; // supports are disjoint by spec validation
            }
        }
        return p;
    }

    Sample eval_expiratory(const std::array<double, 3>& x) const {
        const std::array<double, 3> material = pull_back(x);
        Sample s = eval_inspiratory(material);
        if (s.lung >= 0 && !s.emphysema) {
            s.hu += spec->expiration.densification_hu;
        }
        return s;
    }

    std::array<double, 3> forward_map(const std::array<double, 3>& x) const {
        std::array<double, 3> p = x;
        for (const LungWarp& w : warps) {
            const double rho = ellipsoid_rho(p, w.lung);
            if (rho < w.rho_out) {
                p = w.forward(p);
                break;
            }
        }
        return rigid.apply(p);
    }
};

Scene build_scene(const PhantomSpec& spec) {
    Scene scene;
    scene.spec = &spec;
    const double s1 = std::cbrt(1.0 - spec.expiration.contraction);
    for (int l = 0; l < 2; ++l) {
        scene.warps[static_cast<size_t>(l)] =
            LungWarp{spec.lungs[static_cast<size_t>(l)], s1, spec.expiration.support_scale};
    }
    const double angle = spec.expiration.rigid_rotation_z_deg * kPi / 180.0;
    scene.rigid.cos_a = std::cos(angle);
    scene.rigid.sin_a = std::sin(angle);
    scene.rigid.pivot = {0.5 * (spec.grid.nx - 1), 0.5 * (spec.grid.ny - 1), 0.5 * (spec.grid.nz - 1)};
    scene.rigid.translation = spec.expiration.rigid_translation;

    // Texture grid: blurred white noise rescaled to unit standard deviation.
    Rng tex_rng(derive_seed(spec.seed, 1));
    Volume noise(spec.grid);
    for (float& x : noise.data()) x = static_cast<float>(tex_rng.normal());
    scene.texture = gaussian_blur(noise, spec.texture_corr_len);
    double mean = 0.0;
    for (float x : scene.texture.data()) mean += x;
    mean /= static_cast<double>(scene.texture.numel());
    double var = 0.0;
    for (float x : scene.texture.data()) var += (x - mean) * (x - mean);
    var /= static_cast<double>(scene.texture.numel());
    const float inv_sd = var > 0 ? static_cast<float>(1.0 / std::sqrt(var)) : 1.0f;
    for (float& x : scene.texture.data()) x = (x - static_cast<float>(mean)) * inv_sd;

    // Emphysema blobs, strictly inside a lung: the blob radius is capped by
    // the lung's smallest semi-axis and the center is drawn within the
    // remaining room, so every requested blob is placed.
    Rng blob_rng(derive_seed(spec.seed, 2));
    for (int b = 0; b < spec.blob_count; ++b) {
        const int l = static_cast<int>(blob_rng.below(2));
        const Ellipsoid& lung = spec.lungs[static_cast<size_t>(l)];
        const double min_axis = std::min({lung.radii[0], lung.radii[1], lung.radii[2]});
        Blob blob;
        blob.radius = std::min(blob_rng.uniform(spec.blob_radius_min, spec.blob_radius_max),
                               0.6 * min_axis);
        const double margin = blob.radius / min_axis;
        const double rho_max = std::max(0.0, 0.92 - margin);
        const double rho_c = rho_max * std::cbrt(blob_rng.uniform());
        std::array<double, 3> dir;
        for (int a = 0; a < 3; ++a) dir[static_cast<size_t>(a)] = blob_rng.normal();
        const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
        for (int a = 0; a < 3; ++a) {
            blob.center[static_cast<size_t>(a)] =
                lung.center[static_cast<size_t>(a)] +
                lung.radii[static_cast<size_t>(a)] * rho_c * dir[static_cast<size_t>(a)] / norm;
        }
        scene.blobs.push_back(blob);
    }
    return scene;
}

} // namespace

PhantomSpec PhantomSpec::desk_default(GridShape grid) {
    PhantomSpec s;
    s.grid = grid;
    const double nx = grid.nx, ny = grid.ny, nz = grid.nz;
    s.body = {{0.5 * nx, 0.5 * ny, 0.5 * nz}, {0.46 * nx, 0.42 * ny, 0.47 * nz}};
    s.lungs[0] = {{0.30 * nx, 0.50 * ny, 0.52 * nz}, {0.125 * nx, 0.25 * ny, 0.28 * nz}};
    s.lungs[1] = {{0.70 * nx, 0.50 * ny, 0.52 * nz}, {0.125 * nx, 0.25 * ny, 0.28 * nz}};
    s.hard_kernel.kind = KernelSim::Kind::Hard;
    s.hard_kernel.sigma = 1.0;
    s.soft_kernel.kind = KernelSim::Kind::Soft;
    s.soft_kernel.sigma = 1.3;
    return s;
}

void PhantomSpec::validate() const {
    if (grid.nx < 16 || grid.ny < 16 || grid.nz < 12) {
        throw UsageError("PhantomSpec: grid too small for the body/lung geometry");
    }
    for (double sp : spacing) {
        if (!(sp > 0)) throw UsageError("PhantomSpec: spacing must be positive");
    }
    const double f = expiration.contraction;
    if (!(f >= 0.0 && f < 1.0)) {
        throw UsageError("PhantomSpec: contraction fraction must lie in [0, 1)");
    }
    if (!(expiration.support_scale > 1.0)) {
        throw UsageError("PhantomSpec: support_scale must exceed 1");
    }
    if (blob_count < 0 || blob_radius_min <= 0 || blob_radius_max < blob_radius_min) {
        throw UsageError("PhantomSpec: invalid emphysema blob configuration");
    }
    for (const Ellipsoid& lung : lungs) {
        for (int a = 0; a < 3; ++a) {
            if (!(lung.radii[static_cast<size_t>(a)] > 0) || !(body.radii[static_cast<size_t>(a)] > 0)) {
                throw UsageError("PhantomSpec: ellipsoid radii must be positive");
            }
            // Lung support (scaled ellipsoid) must stay inside the body along
            // each axis; conservative per-axis bound.
            const double extent = std::abs(lung.center[static_cast<size_t>(a)] -
                                           body.center[static_cast<size_t>(a)]) +
                                  lung.radii[static_cast<size_t>(a)] * expiration.support_scale;
            if (extent > body.radii[static_cast<size_t>(a)]) {
                throw UsageError("PhantomSpec: lung contraction support leaves the body");
            }
        }
    }
    // Disjoint supports: centers differ in x for the default geometry; check
    // the ellipsoid-norm distance between supports along the center line.
    const double dx = std::abs(lungs[0].center[0] - lungs[1].center[0]);
    const double span = (lungs[0].radii[0] + lungs[1].radii[0]) * expiration.support_scale;
    if (dx <= span) {
        throw UsageError("PhantomSpec: lung contraction supports overlap");
    }
    if (!(emphysema_hu < parenchyma_hu && parenchyma_hu < tissue_hu)) {
        throw UsageError("PhantomSpec: HU ordering must be emphysema < parenchyma < tissue");
    }
}

Volume simulate_kernel(const Volume& v, const KernelSim& k) {
    if (!(k.sigma > 0)) throw UsageError("KernelSim: sigma must be positive");
    Volume out(v.shape());
    out.spacing = v.spacing;
    out.origin = v.origin;
    out.direction = v.direction;
    const Volume blurred = gaussian_blur(v, k.sigma);
    if (k.kind == KernelSim::Kind::Soft) {
        out.data() = blurred.data();
    } else {
        const float gain = static_cast<float>(k.unsharp_gain);
        for (size_t i = 0; i < out.data().size(); ++i) {
            out.data()[i] = v.data()[i] + gain * (v.data()[i] - blurred.data()[i]);
        }
        if (k.noise_sigma_hu > 0) {
            Rng rng(k.seed);
            Volume noise(v.shape());
            for (float& x : noise.data()) x = static_cast<float>(rng.normal());
            noise = gaussian_blur(noise, k.noise_corr_len);
            double mean = 0.0;
            for (float x : noise.data()) mean += x;
            mean /= static_cast<double>(noise.numel());
            double var = 0.0;
            for (float x : noise.data()) var += (x - mean) * (x - mean);
            var /= static_cast<double>(noise.numel());
            const float scale = var > 0 ? static_cast<float>(k.noise_sigma_hu / std::sqrt(var)) : 0.0f;
            for (size_t i = 0; i < out.data().size(); ++i) {
                out.data()[i] += scale * (noise.data()[i] - static_cast<float>(mean));
            }
        }
    }
    return clip_hu(out, -1024.0, 3072.0);
}

PhantomCase generate_case(const PhantomSpec& spec) {
    spec.validate();
    const Scene scene = build_scene(spec);
    const GridShape g = spec.grid;

    PhantomCase c;
    c.spec = spec;
    c.label = spec.blob_count > 0 ? "case" : "control";
    c.insp_pristine = Volume(g);
    c.exp_pristine = Volume(g);
    c.insp_pristine.spacing = spec.spacing;
    c.exp_pristine.spacing = spec.spacing;
    c.gt_field = DisplacementField(g);
    c.gt_field.spacing = spec.spacing;
    c.insp_lung = BinaryMask(g);
    c.exp_lung = BinaryMask(g);
    c.insp_emph = BinaryMask(g);
    c.exp_emph = BinaryMask(g);

    for (int k = 0; k < g.nz; ++k) {
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                const std::array<double, 3> x{static_cast<double>(i), static_cast<double>(j),
                                              static_cast<double>(k)};
                const Scene::Sample si = scene.eval_inspiratory(x);
                c.insp_pristine.at(i, j, k) = static_cast<float>(si.hu);
                c.insp_lung.at(i, j, k) = si.lung >= 0;
                c.insp_emph.at(i, j, k) = si.emphysema;

                const Scene::Sample se = scene.eval_expiratory(x);
                c.exp_pristine.at(i, j, k) = static_cast<float>(se.hu);
                c.exp_lung.at(i, j, k) = se.lung >= 0;
                c.exp_emph.at(i, j, k) = se.emphysema;

                const std::array<double, 3> mapped = scene.forward_map(x);
                const int64_t idx = c.gt_field.index(i, j, k);
                c.gt_field.data()[static_cast<size_t>(3 * idx)] = static_cast<float>(mapped[0] - x[0]);
                c.gt_field.data()[static_cast<size_t>(3 * idx + 1)] =
                    static_cast<float>(mapped[1] - x[1]);
                c.gt_field.data()[static_cast<size_t>(3 * idx + 2)] =
                    static_cast<float>(mapped[2] - x[2]);
            }
        }
    }

    KernelSim hard = spec.hard_kernel;
    hard.kind = KernelSim::Kind::Hard;
    hard.seed = derive_seed(spec.seed, 3);
    KernelSim soft = spec.soft_kernel;
    soft.kind = KernelSim::Kind::Soft;
    c.insp_hard = simulate_kernel(c.insp_pristine, hard);
    c.exp_soft = simulate_kernel(c.exp_pristine, soft);
    return c;
}

Volume soft_kernel_reference(const PhantomCase& c) {
    KernelSim soft = c.spec.soft_kernel;
    soft.kind = KernelSim::Kind::Soft;
    return simulate_kernel(c.insp_pristine, soft);
}

std::vector<PhantomCase> generate_cohort(int n_controls, int n_cases, const PhantomSpec& base,
                                         uint64_t seed) {
    if (n_controls < 0 || n_cases < 0) throw UsageError("generate_cohort: negative cohort sizes");
    std::vector<PhantomCase> cohort;
    cohort.reserve(static_cast<size_t>(n_controls + n_cases));
    for (int idx = 0; idx < n_controls + n_cases; ++idx) {
        PhantomSpec spec = base;
        spec.seed = derive_seed(seed, static_cast<uint64_t>(idx));
        if (idx < n_controls) spec.blob_count = 0;

        // Small deterministic anatomy/breathing variation across the cohort.
        Rng jitter(derive_seed(spec.seed, 17));
        for (Ellipsoid& lung : spec.lungs) {
            for (int a = 0; a < 3; ++a) {
                lung.center[static_cast<size_t>(a)] += jitter.uniform(-1.0, 1.0);
                lung.radii[static_cast<size_t>(a)] *= jitter.uniform(0.95, 1.05);
            }
        }
        spec.expiration.contraction *= jitter.uniform(0.85, 1.1);
        spec.expiration.contraction = std::clamp(spec.expiration.contraction, 0.05, 0.95);
        for (int a = 0; a < 3; ++a) {
            spec.expiration.rigid_translation[static_cast<size_t>(a)] = jitter.uniform(-1.2, 1.2);
        }
        spec.expiration.rigid_rotation_z_deg = jitter.uniform(-1.5, 1.5);

        PhantomCase c = generate_case(spec);
        c.id = (idx < n_controls ? "control_" : "case_") +
               std::to_string(idx < n_controls ? idx : idx - n_controls);
        cohort.push_back(std::move(c));
    }
    return cohort;
}

} // namespace inspex
