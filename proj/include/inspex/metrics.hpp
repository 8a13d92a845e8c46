#pragma once

#include "inspex/volume.hpp"

namespace inspex {

struct DiceResult {
    double value = 0.0;
    bool empty_pair = false; // both masks empty; value reported as 1.0
};

/// 2|A^B| / (|A|+|B|). Two empty masks give 1.0 with the empty_pair flag set
/// so cohort summaries can include or exclude them.
DiceResult dice(const BinaryMask& a, const BinaryMask& b);

/// Alternate n x n in-plane tiles between the two sources on every axial
/// slice; tile (0,0) comes from `fixed`. Tile boundaries are round(i*size/n).
Volume checkerboard(const Volume& fixed, const Volume& warped, int tiles_per_side);

/// Window-level one axial slice to [lo, hi] as 8-bit grayscale rows
/// (row-major, ny rows of nx).
std::vector<uint8_t> window_level_slice(const Volume& v, int z, double lo = -1024.0, double hi = 0.0);

} // namespace inspex
