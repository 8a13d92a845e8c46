#include <cmath>

#include "doctest.h"
#include "inspex/errors.hpp"
#include "inspex/field.hpp"
#include "inspex/metrics.hpp"
#include "inspex/phantom.hpp"

using namespace inspex;

TEST_SUITE_BEGIN("phantom");

TEST_CASE("same seed produces a bit-identical case") {
    PhantomSpec spec = PhantomSpec::desk_default({48, 48, 32});
    spec.seed = 321;
    spec.blob_count = 3;
    const PhantomCase a = generate_case(spec);
    const PhantomCase b = generate_case(spec);
    CHECK(a.insp_hard.data() == b.insp_hard.data());
    CHECK(a.exp_soft.data() == b.exp_soft.data());
    CHECK(a.gt_field.data() == b.gt_field.data());
    CHECK(a.insp_emph.data() == b.insp_emph.data());
}

TEST_CASE("zero contraction, densification, and rigid motion give identical phases") {
    PhantomSpec spec = PhantomSpec::desk_default({48, 48, 32});
    spec.seed = 5;
    spec.expiration.contraction = 0.0;
    spec.expiration.densification_hu = 0.0;
    spec.expiration.rigid_translation = {0, 0, 0};
    spec.expiration.rigid_rotation_z_deg = 0.0;
    const PhantomCase c = generate_case(spec);
    double max_diff = 0.0;
    for (size_t i = 0; i < c.insp_pristine.data().size(); ++i) {
        max_diff = std::max(max_diff, std::abs(static_cast<double>(c.insp_pristine.data()[i]) -
                                               c.exp_pristine.data()[i]));
    }
    CHECK(max_diff < 1e-3);
    CHECK(c.gt_field.max_magnitude() < 1e-6);
}

TEST_CASE("ground-truth emphysema voxel count matches the analytic ellipsoid volume") {
    PhantomSpec spec = PhantomSpec::desk_default({64, 64, 48});
    spec.seed = 7;
    spec.blob_count = 1;
    spec.blob_radius_min = 4.5;
    spec.blob_radius_max = 4.5;
    const PhantomCase c = generate_case(spec);
    const double analytic = 4.0 / 3.0 * 3.14159265358979 * 4.5 * 4.5 * 4.5;
    const double counted = static_cast<double>(c.insp_emph.count());
    CHECK(std::abs(counted - analytic) / analytic < 0.05);
}

TEST_CASE("cohort sizes, labels, and determinism") {
    PhantomSpec base = PhantomSpec::desk_default({32, 32, 24});
    base.blob_count = 3;
    const auto cohort = generate_cohort(4, 3, base, 99);
    REQUIRE(cohort.size() == 7);
    int controls = 0;
    for (const auto& c : cohort) {
        if (c.label == "control") {
            ++controls;
            CHECK(c.insp_emph.count() == 0);
        } else {
            CHECK(c.insp_emph.count() > 0);
        }
    }
    CHECK(controls == 4);

    CHECK(generate_cohort(0, 0, base, 1).empty());

    const auto again = generate_cohort(4, 3, base, 99);
    for (size_t i = 0; i < cohort.size(); ++i) {
        CHECK(cohort[i].insp_hard.data() == again[i].insp_hard.data());
    }
}

TEST_CASE("soft kernel preserves constants; degenerate hard kernel is the identity") {
    Volume v({24, 24, 16}, -600.0f);
    KernelSim soft;
    soft.kind = KernelSim::Kind::Soft;
    soft.sigma = 2.0;
    const Volume vs = simulate_kernel(v, soft);
    for (float x : vs.data()) CHECK(x == doctest::Approx(-600.0f).epsilon(1e-5));

    PhantomSpec spec = PhantomSpec::desk_default({32, 32, 24});
    spec.seed = 11;
    const PhantomCase c = generate_case(spec);
    KernelSim degenerate;
    degenerate.kind = KernelSim::Kind::Hard;
    degenerate.sigma = 1.0;
    degenerate.unsharp_gain = 0.0;
    degenerate.noise_sigma_hu = 0.0;
    const Volume same = simulate_kernel(c.insp_pristine, degenerate);
    for (size_t i = 0; i < same.data().size(); ++i) {
        CHECK(same.data()[i] == doctest::Approx(c.insp_pristine.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("hard kernels inflate the sub-threshold fraction on every seed") {
    // Parenchyma close to the -950 HU band plus noisy sharpening: the hard
    // kernel must always show more sub-threshold voxels than the soft one.
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        PhantomSpec spec = PhantomSpec::desk_default({40, 40, 28});
        spec.seed = seed;
        spec.parenchyma_hu = -930.0;
        spec.blob_count = 2;
        spec.hard_kernel.noise_sigma_hu = 20.0 + static_cast<double>(seed % 3) * 10.0;
        const PhantomCase c = generate_case(spec);

        auto fraction_below = [&](const Volume& v) {
            int64_t below = 0, lung = 0;
            for (size_t i = 0; i < v.data().size(); ++i) {
                if (!c.insp_lung.data()[i]) continue;
                ++lung;
                if (v.data()[i] < -950.0f) ++below;
            }
            return static_cast<double>(below) / static_cast<double>(lung);
        };
        const double hard = fraction_below(c.insp_hard);
        const double soft = fraction_below(soft_kernel_reference(c));
        CAPTURE(seed);
        CHECK(hard > soft);
    }
}

TEST_CASE("ground-truth warp is diffeomorphic over the lungs") {
    PhantomSpec spec = PhantomSpec::desk_default({64, 64, 48});
    spec.seed = 13;
    const PhantomCase c = generate_case(spec);
    const Volume det = jacobian_determinant(c.gt_field);
    for (size_t i = 0; i < det.data().size(); ++i) {
        if (c.insp_lung.data()[i]) CHECK(det.data()[i] > 0.0f);
    }
}

TEST_CASE("ground-truth field carries the expiratory lung mask onto the inspiratory one") {
    // Checked at the standard desk grid with boundary-accurate transport;
    // plain nearest sampling loses ~0.01 Dice to mask voxelization alone.
    PhantomSpec spec = PhantomSpec::desk_default({96, 96, 64});
    spec.seed = 17;
    const PhantomCase c = generate_case(spec);
    const BinaryMask warped = warp_mask_linear(c.exp_lung, c.gt_field);
    const DiceResult d = dice(warped, c.insp_lung);
    CHECK(d.value >= 0.98);
    const BinaryMask nearest = warp_mask(c.exp_lung, c.gt_field);
    CHECK(dice(nearest, c.insp_lung).value >= 0.95);
}

TEST_CASE("default breathing model peaks near five voxels of displacement") {
    PhantomSpec spec = PhantomSpec::desk_default({64, 64, 48});
    spec.seed = 23;
    const PhantomCase c = generate_case(spec);
    const double peak = c.gt_field.max_magnitude();
    CHECK(peak > 3.0);
    CHECK(peak < 6.0);
}

TEST_CASE("spec validation rejects broken geometry") {
    PhantomSpec spec = PhantomSpec::desk_default();
    spec.expiration.contraction = 1.5;
    CHECK_THROWS_AS(spec.validate(), UsageError);

    PhantomSpec wide = PhantomSpec::desk_default();
    wide.lungs[0].radii[0] = wide.body.radii[0]; // support leaves the body
    CHECK_THROWS_AS(wide.validate(), UsageError);

    PhantomSpec overlap = PhantomSpec::desk_default();
    overlap.lungs[0].center[0] = overlap.lungs[1].center[0] - 1.0;
    CHECK_THROWS_AS(overlap.validate(), UsageError);
}

TEST_SUITE_END();
