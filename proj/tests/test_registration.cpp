#include <cmath>

#include "doctest.h"
#include "inspex/errors.hpp"
#include "inspex/field.hpp"
#include "inspex/lungseg.hpp"
#include "inspex/metrics.hpp"
#include "inspex/phantom.hpp"
#include "inspex/registration.hpp"
#include "inspex/rng.hpp"

using namespace inspex;

namespace {

// Lung-masked, [-1024, 0]-clipped preparation used ahead of registration.
Volume prep(const Volume& v) {
    const BinaryMask lung = segment_lungs(v);
    return clip_hu(apply_mask(v, lung, -1024.0), -1024.0, 0.0);
}

PhantomCase make_case(uint64_t seed, GridShape grid = {48, 48, 36}) {
    PhantomSpec spec = PhantomSpec::desk_default(grid);
    spec.seed = seed;
    return generate_case(spec);
}

AffineTransform known_transform(GridShape s, double angle_z_deg, std::array<double, 3> t,
                                double scale_x = 1.0) {
    AffineTransform out;
    out.kind = AffineTransform::Kind::Affine;
    const double a = angle_z_deg * 3.14159265358979 / 180.0;
    out.matrix = {scale_x * std::cos(a), -std::sin(a), 0, scale_x * std::sin(a), std::cos(a), 0,
                  0, 0, 1};
    out.translation = t;
    out.center = {0.5 * (s.nx - 1), 0.5 * (s.ny - 1), 0.5 * (s.nz - 1)};
    return out;
}

double mean_endpoint_error(const DisplacementField& got, const DisplacementField& truth,
                           const BinaryMask& within) {
    double acc = 0.0;
    int64_t n = 0;
    const GridShape s = got.shape();
    for (int k = 0; k < s.nz; ++k)
        for (int j = 0; j < s.ny; ++j)
            for (int i = 0; i < s.nx; ++i) {
                if (!within.at(i, j, k)) continue;
                double e2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = got.at(i, j, k, c) - truth.at(i, j, k, c);
                    e2 += d * d;
                }
                acc += std::sqrt(e2);
                ++n;
            }
    return n ? acc / static_cast<double>(n) : 0.0;
}

} // namespace

TEST_SUITE_BEGIN("registration");

TEST_CASE("rigid self-registration recovers the identity") {
    const PhantomCase c = make_case(3);
    const Volume f = prep(c.insp_hard);
    const AffineResult r = register_rigid(f, f);
    CHECK(r.transform.rigidity_error() < 1e-6);
    for (int a = 0; a < 3; ++a) CHECK(std::abs(r.transform.translation[static_cast<size_t>(a)]) < 0.5);
    // rotation angle from the trace of the matrix
    const double tr = r.transform.matrix[0] + r.transform.matrix[4] + r.transform.matrix[8];
    const double angle = std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0)) * 180.0 / 3.14159265;
    CHECK(angle < 0.5);
}

TEST_CASE("rigid registration recovers a pure translation within half a voxel") {
    const PhantomCase c = make_case(5);
    const Volume f = prep(c.insp_pristine);
    const AffineTransform truth = known_transform(f.shape(), 0.0, {3.0, -2.0, 1.0});
    const Volume moving = resample_affine(f, truth, Interp::Linear);
    // moving(x) = f(x + t), so the recovered transform should equal `truth`.
    const AffineResult r = register_rigid(f, moving);
    CHECK(std::abs(r.transform.translation[0] - 3.0) < 0.5);
    CHECK(std::abs(r.transform.translation[1] + 2.0) < 0.5);
    CHECK(std::abs(r.transform.translation[2] - 1.0) < 0.5);
}

TEST_CASE("rigid registration recovers a 5 degree rotation within half a degree") {
    const PhantomCase c = make_case(7);
    const Volume f = prep(c.insp_pristine);
    const AffineTransform truth = known_transform(f.shape(), 5.0, {0, 0, 0});
    const Volume moving = resample_affine(f, truth, Interp::Linear);
    const AffineResult r = register_rigid(f, moving);
    const double angle =
        std::atan2(r.transform.matrix[3], r.transform.matrix[0]) * 180.0 / 3.14159265358979;
    CHECK(std::abs(angle - 5.0) < 0.5);
    CHECK(r.transform.rigidity_error() < 1e-6);
}

TEST_CASE("affine started at the truth stays put") {
    const PhantomCase c = make_case(9);
    const Volume f = prep(c.insp_pristine);
    const AffineTransform truth = known_transform(f.shape(), 2.0, {1.0, 0.5, -0.5});
    const Volume moving = resample_affine(f, truth, Interp::Linear);
    const AffineResult r = register_affine(f, moving, truth);
    for (int i = 0; i < 9; ++i) {
        CHECK(std::abs(r.transform.matrix[static_cast<size_t>(i)] -
                       truth.matrix[static_cast<size_t>(i)]) < 0.02);
    }
    for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(r.transform.translation[static_cast<size_t>(a)] -
                       truth.translation[static_cast<size_t>(a)]) < 0.5);
    }
}

TEST_CASE("affine recovers a 1.1x anisotropic scale within 0.02") {
    const PhantomCase c = make_case(11);
    const Volume f = prep(c.insp_pristine);
    const AffineTransform truth = known_transform(f.shape(), 0.0, {0, 0, 0}, 1.1);
    const Volume moving = resample_affine(f, truth, Interp::Linear);
    AffineTransform identity;
    identity.center = truth.center;
    const AffineResult r = register_affine(f, moving, identity);
    CHECK(std::abs(r.transform.matrix[0] - 1.1) < 0.02);
    CHECK(std::abs(r.transform.matrix[4] - 1.0) < 0.02);
    CHECK(std::abs(r.transform.matrix[8] - 1.0) < 0.02);
}

TEST_CASE("constant moving image leaves the init untouched with a warning") {
    const PhantomCase c = make_case(13);
    const Volume f = prep(c.insp_pristine);
    Volume flat(f.shape(), -1024.0f);
    AffineTransform init;
    init.center = {0.5 * (f.nx() - 1), 0.5 * (f.ny() - 1), 0.5 * (f.nz() - 1)};
    const AffineResult r = register_affine(f, flat, init);
    CHECK_FALSE(r.warning.empty());
    for (int i = 0; i < 9; ++i) {
        CHECK(r.transform.matrix[static_cast<size_t>(i)] ==
              doctest::Approx(init.matrix[static_cast<size_t>(i)]));
    }
}

TEST_CASE("deformable self-registration stays near zero displacement") {
    const PhantomCase c = make_case(15);
    const Volume f = prep(c.insp_hard);
    const RegistrationConfig cfg;
    const RegistrationResult r = register_deformable(f, f, cfg, false);
    CHECK(r.forward.mean_magnitude() < 0.1);
    const BinaryMask lung = segment_lungs(c.insp_hard);
    const BinaryMask warped = warp_mask(lung, r.forward);
    CHECK(dice(warped, lung).value >= 0.99);
}

TEST_CASE("metric trace is non-decreasing within a level") {
    const PhantomCase c = make_case(17);
    const Volume f = prep(c.insp_hard);
    const Volume m = prep(c.exp_soft);
    RegistrationConfig cfg;
    cfg.deform_iterations = 30;
    const RegistrationResult r = register_deformable(f, m, cfg, true);
    REQUIRE(r.metric_trace.size() >= 2);
    for (size_t i = 1; i < r.metric_trace.size(); ++i) {
        const double dip = r.metric_trace[i - 1] - r.metric_trace[i];
        CHECK(dip <= 10.0 * cfg.tolerance * std::max(1.0, std::abs(r.metric_trace[i - 1])));
    }
}

TEST_CASE("phantom pair: full-resolution endpoint error under one voxel in the lungs") {
    PhantomSpec spec = PhantomSpec::desk_default({64, 64, 48});
    spec.seed = 19;
    const PhantomCase c = generate_case(spec);
    const Volume f = prep(c.insp_hard);
    const Volume m = prep(c.exp_soft);

    RegistrationConfig cfg;
    const AffineResult rigid = register_rigid(f, m, cfg);
    const AffineResult affine = register_affine(f, m, rigid.transform, cfg);
    const Volume m_baked = resample_affine(m, affine.transform, Interp::Linear, cfg.background_hu);
    const RegistrationResult deform = register_deformable(f, m_baked, cfg, false);

    const DisplacementField total = compose_affine_after_field(affine.transform, deform.forward);
    const double mee = mean_endpoint_error(total, c.gt_field, c.insp_lung);
    CHECK(mee < 1.0);

    // Diffeomorphism of the deformable part over the lungs.
    const Volume det = jacobian_determinant(deform.forward);
    int64_t nonpos = 0, lung_n = 0;
    for (size_t i = 0; i < det.data().size(); ++i) {
        if (!c.insp_lung.data()[i]) continue;
        ++lung_n;
        if (det.data()[i] <= 0.0f) ++nonpos;
    }
    CHECK(static_cast<double>(nonpos) / static_cast<double>(lung_n) <= 0.001);
}

TEST_CASE("symmetric forward fields of swapped inputs compose to near identity") {
    const PhantomCase c = make_case(21);
    const Volume a = prep(c.insp_hard);
    const Volume b = prep(c.exp_soft);
    RegistrationConfig cfg;
    cfg.deform_iterations = 60;
    const RegistrationResult ab = register_deformable(a, b, cfg, false);
    const RegistrationResult ba = register_deformable(b, a, cfg, false);
    const DisplacementField roundtrip = compose_fields(ab.forward, ba.forward);
    double acc = 0.0;
    int64_t n = 0;
    const GridShape s = roundtrip.shape();
    for (int k = 0; k < s.nz; ++k)
        for (int j = 0; j < s.ny; ++j)
            for (int i = 0; i < s.nx; ++i) {
                if (!c.insp_lung.at(i, j, k)) continue;
                double e2 = 0.0;
                for (int cc = 0; cc < 3; ++cc) {
                    e2 += static_cast<double>(roundtrip.at(i, j, k, cc)) * roundtrip.at(i, j, k, cc);
                }
                acc += std::sqrt(e2);
                ++n;
            }
    CHECK(acc / static_cast<double>(n) < 0.5);
}

TEST_CASE("warped masks stay binary and inside the grid") {
    const PhantomCase c = make_case(23);
    const Volume f = prep(c.insp_hard);
    const Volume m = prep(c.exp_soft);
    RegistrationConfig cfg;
    cfg.deform_iterations = 20;
    const RegistrationResult r = register_deformable(f, m, cfg, true);
    const BinaryMask moving_lung = segment_lungs(c.exp_soft);
    const BinaryMask w = warp_mask(moving_lung, r.forward);
    CHECK(w.shape() == moving_lung.shape());
    for (uint8_t b : w.data()) CHECK((b == 0 || b == 1));
}

TEST_CASE("half-resolution output lives on the full grid with doubled vectors") {
    const PhantomCase c = make_case(25, {32, 32, 24});
    const Volume f = prep(c.insp_hard);
    const Volume m = prep(c.exp_soft);
    RegistrationConfig cfg;
    cfg.deform_iterations = 10;
    const RegistrationResult r = register_deformable(f, m, cfg, true);
    CHECK(r.forward.shape() == f.shape());
    CHECK(r.warped_moving.shape() == f.shape());
}

TEST_CASE("rigid rejects mismatched grids and empty volumes") {
    Volume a({16, 16, 16}, 0.0f);
    Volume b({16, 16, 18}, 0.0f);
    CHECK_THROWS_AS(register_rigid(a, b), UsageError);
}

TEST_SUITE_END();
