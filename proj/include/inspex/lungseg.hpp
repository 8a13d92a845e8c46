#pragma once

#include "inspex/volume.hpp"

namespace inspex {

struct QuantConfig {
    double emphysema_threshold_hu = -950.0;
    double lung_air_threshold_hu = -320.0;
    double min_component_ml = 2.0;
    int closing_radius_voxels = 2;

    void validate() const;
};

/// Classical lung extraction: voxels below the air threshold form candidate
/// air, 26-connected components are labeled, components touching the volume
/// boundary (external air) or smaller than the minimum volume are discarded,
/// and the union of the survivors is morphologically closed to fill vessels.
/// An empty result is returned with a warning, not an error.
BinaryMask segment_lungs(const Volume& v, const QuantConfig& cfg = {});

/// Bit set iff inside the lung mask and strictly below the threshold.
BinaryMask emphysema_mask(const Volume& v, const BinaryMask& lung, const QuantConfig& cfg = {});

/// 100 * |emphysema| / |lung| with 64-bit counting. Empty lung mask is an
/// error (the score is undefined).
double emphysema_percent(const Volume& v, const BinaryMask& lung, const QuantConfig& cfg = {});

/// Lung volume in millilitres under the volume's spacing.
double mask_volume_ml(const BinaryMask& m, const std::array<double, 3>& spacing);

} // namespace inspex
