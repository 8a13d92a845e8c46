#include <cmath>

#include "doctest.h"
#include "inspex/errors.hpp"
#include "inspex/rng.hpp"
#include "inspex/volume.hpp"

using namespace inspex;

namespace {

Volume random_hu_volume(GridShape shape, uint64_t seed, double lo = -1500, double hi = 3500) {
    Volume v(shape);
    Rng rng(seed);
    for (float& x : v.data()) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

} // namespace

TEST_SUITE_BEGIN("volume");

TEST_CASE("clip_hu clamps into the window") {
    Volume v({3, 2, 2});
    v.at(0, 0, 0) = -2000.0f;
    v.at(1, 0, 0) = 500.0f;
    v.at(2, 0, 0) = 4000.0f;

    const Volume c = clip_hu(v, -1024, 3072);
    CHECK(c.at(0, 0, 0) == -1024.0f);
    CHECK(c.at(1, 0, 0) == 500.0f);
    CHECK(c.at(2, 0, 0) == 3072.0f);

    const Volume lungwin = clip_hu(v, -1024, 0);
    CHECK(lungwin.at(1, 0, 0) == 0.0f); // 500 HU collapses onto the masked-lung ceiling
}

TEST_CASE("clip_hu is idempotent and validates its window") {
    const Volume v = random_hu_volume({8, 7, 6}, 42);
    const Volume once = clip_hu(v, -1024, 3072);
    const Volume twice = clip_hu(once, -1024, 3072);
    CHECK(once.data() == twice.data());
    CHECK_THROWS_AS(clip_hu(v, 10, 10), UsageError);
    CHECK_THROWS_AS(clip_hu(v, 100, -100), UsageError);
}

TEST_CASE("normalize endpoints and midpoint") {
    Volume v({4, 1, 1});
    v.at(0, 0, 0) = -1024.0f;
    v.at(1, 0, 0) = 3072.0f;
    v.at(2, 0, 0) = 1024.0f;
    v.at(3, 0, 0) = 0.0f;
    const NormalizedVolume n = normalize(v, -1024, 3072);
    CHECK(n.values().at(0, 0, 0) == doctest::Approx(-1.0));
    CHECK(n.values().at(1, 0, 0) == doctest::Approx(1.0));
    CHECK(n.values().at(2, 0, 0) == doctest::Approx(0.0));
    CHECK(n.window_lo() == -1024.0);
    CHECK(n.window_hi() == 3072.0);
}

TEST_CASE("normalize rejects voxels outside the window") {
    Volume v({2, 1, 1});
    v.at(0, 0, 0) = -2000.0f;
    CHECK_THROWS_AS(normalize(v, -1024, 3072), UsageError);
}

TEST_CASE("denormalize specific values") {
    Volume v({1, 1, 1});
    NormalizedVolume n(v, -1024.0, 0.0);
    n.values().at(0, 0, 0) = 0.0f;
    CHECK(denormalize(n).at(0, 0, 0) == doctest::Approx(-512.0));

    NormalizedVolume n2(v, -1024.0, 3072.0);
    n2.values().at(0, 0, 0) = -1.0f;
    CHECK(denormalize(n2).at(0, 0, 0) == doctest::Approx(-1024.0));
}

TEST_CASE("normalize then denormalize is identity within 1e-4 HU") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        const Volume v = clip_hu(random_hu_volume({9, 8, 7}, seed), -1024, 3072);
        const Volume back = denormalize(normalize(v, -1024, 3072));
        double worst = 0.0;
        for (size_t i = 0; i < v.data().size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(v.data()[i]) - back.data()[i]));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("apply_mask fill and literal-multiply modes") {
    Volume v({2, 2, 2});
    for (size_t i = 0; i < v.data().size(); ++i) v.data()[i] = static_cast<float>(i) * 10 - 30;

    BinaryMask ones(v.shape(), 1);
    CHECK(apply_mask(v, ones).data() == v.data());

    BinaryMask zeros(v.shape(), 0);
    const Volume bg = apply_mask(v, zeros);
    for (float x : bg.data()) CHECK(x == -1024.0f);

    // Checkerboard mask against a direct per-voxel oracle.
    BinaryMask checker(v.shape());
    for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) checker.at(i, j, k) = static_cast<uint8_t>((i + j + k) % 2);
    const Volume masked = apply_mask(v, checker, -1024.0);
    const Volume literal = apply_mask(v, checker, -1024.0, MaskMode::LiteralMultiply);
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j < 2; ++j) {
            for (int i = 0; i < 2; ++i) {
                if (checker.at(i, j, k)) {
                    CHECK(masked.at(i, j, k) == v.at(i, j, k));
                    CHECK(literal.at(i, j, k) == v.at(i, j, k));
                } else {
                    CHECK(masked.at(i, j, k) == -1024.0f);
                    CHECK(literal.at(i, j, k) == 0.0f);
                }
            }
        }
    }
}

TEST_CASE("apply_mask rejects shape mismatch") {
    const Volume v = random_hu_volume({4, 4, 4}, 7);
    BinaryMask m({4, 4, 5});
    CHECK_THROWS_AS(apply_mask(v, m), UsageError);
}

TEST_CASE("resample factor one is exact identity") {
    const Volume v = random_hu_volume({6, 5, 4}, 11);
    const Volume r = resample(v, {1, 1, 1}, Interp::Linear);
    CHECK(r.data() == v.data());
    CHECK(r.spacing == v.spacing);
}

TEST_CASE("resample of a constant volume stays constant") {
    Volume v({8, 8, 8}, -850.0f);
    for (auto interp : {Interp::Linear, Interp::Nearest}) {
        const Volume r = resample(v, {0.5, 0.75, 1.5}, interp);
        for (float x : r.data()) CHECK(x == doctest::Approx(-850.0f));
    }
}

TEST_CASE("half-resolution resample of a linear ramp matches the analytic ramp") {
    Volume v({16, 6, 6});
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 16; ++i) v.at(i, j, k) = 3.0f * i - 100.0f;
    v.spacing = {0.625, 0.625, 0.625};
    const Volume r = resample(v, {0.5, 1, 1}, Interp::Linear);
    CHECK(r.nx() == 8);
    CHECK(r.spacing[0] == doctest::Approx(1.25));
    for (int i = 1; i + 1 < r.nx(); ++i) {
        const double expected = 3.0 * (i / 0.5) - 100.0;
        CHECK(std::abs(r.at(i, 3, 3) - expected) < 1e-5);
    }
}

TEST_CASE("resample rejects degenerate outputs") {
    const Volume v = random_hu_volume({6, 6, 6}, 3);
    CHECK_THROWS_AS(resample(v, {0.1, 1, 1}, Interp::Linear), UsageError);
    CHECK_THROWS_AS(resample(v, {-1, 1, 1}, Interp::Linear), UsageError);
}

TEST_CASE("volume invariants: shape/buffer agreement enforced") {
    CHECK_THROWS_AS(Volume({2, 2, 2}, std::vector<float>(7)), UsageError);
    CHECK_THROWS_AS(Volume({0, 2, 2}), UsageError);
}

TEST_CASE("gaussian blur preserves constants and mass") {
    Volume v({12, 12, 12}, 100.0f);
    const Volume b = gaussian_blur(v, 2.0);
    for (float x : b.data()) CHECK(x == doctest::Approx(100.0f).epsilon(1e-5));
}

TEST_SUITE_END();
