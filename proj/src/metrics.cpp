#include "inspex/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "inspex/errors.hpp"

namespace inspex {

DiceResult dice(const BinaryMask& a, const BinaryMask& b) {
    if (!(a.shape() == b.shape())) throw UsageError("dice: mask shapes differ");
    int64_t na = 0, nb = 0, ninter = 0;
    const auto& da = a.data();
    const auto& db = b.data();
    for (size_t i = 0; i < da.size(); ++i) {
        const bool ba = da[i] != 0, bb = db[i] != 0;
        na += ba;
        nb += bb;
        ninter += (ba && bb);
    }
    DiceResult r;
    if (na + nb == 0) {
        r.value = 1.0;
        r.empty_pair = true;
        return r;
    }
    r.value = 2.0 * static_cast<double>(ninter) / static_cast<double>(na + nb);
    return r;
}

Volume checkerboard(const Volume& fixed, const Volume& warped, int tiles_per_side) {
    if (!(fixed.shape() == warped.shape())) throw UsageError("checkerboard: shapes differ");
    if (tiles_per_side < 2) throw UsageError("checkerboard: need at least 2 tiles per side");
    const GridShape s = fixed.shape();
    Volume out = fixed;

    auto tile_of = [&](int idx, int extent) {
        // Boundary t covers [round(t*extent/n), round((t+1)*extent/n)).
        const int t = static_cast<int>((static_cast<int64_t>(idx) * tiles_per_side) / extent);
        return std::min(t, tiles_per_side - 1);
    };

    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            const int tj = tile_of(j, s.ny);
            for (int i = 0; i < s.nx; ++i) {
                const int ti = tile_of(i, s.nx);
                if ((ti + tj) % 2 == 1) out.at(i, j, k) = warped.at(i, j, k);
            }
        }
    }
    return out;
}

std::vector<uint8_t> window_level_slice(const Volume& v, int z, double lo, double hi) {
    if (z < 0 || z >= v.nz()) throw UsageError("window_level_slice: slice index out of range");
    if (!(lo < hi)) throw UsageError("window_level_slice: bad window");
    std::vector<uint8_t> out(static_cast<size_t>(v.nx()) * static_cast<size_t>(v.ny()));
    const double scale = 255.0 / (hi - lo);
    for (int j = 0; j < v.ny(); ++j) {
        for (int i = 0; i < v.nx(); ++i) {
            const double x = std::clamp(static_cast<double>(v.at(i, j, z)), lo, hi);
            out[static_cast<size_t>(j) * static_cast<size_t>(v.nx()) + static_cast<size_t>(i)] =
                static_cast<uint8_t>(std::lround((x - lo) * scale));
        }
    }
    return out;
}

} // namespace inspex
