#pragma once

#include <array>
#include <vector>

#include "inspex/volume.hpp"

namespace inspex {

/// Dense per-voxel displacement field u(x) in voxel units on a fixed grid.
/// Warping convention: output(x) = input(x + u(x)). Components are stored
/// interleaved (x, y, z per voxel).
class DisplacementField {
public:
    DisplacementField() = default;
    explicit DisplacementField(GridShape shape);

    const GridShape& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }

    float& at(int i, int j, int k, int c) { return data_[3 * index(i, j, k) + c]; }
    float at(int i, int j, int k, int c) const { return data_[3 * index(i, j, k) + c]; }
    int64_t index(int i, int j, int k) const {
        return i + static_cast<int64_t>(shape_.nx) * (j + static_cast<int64_t>(shape_.ny) * k);
    }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    std::array<double, 3> spacing = {1.0, 1.0, 1.0};

    /// Trilinear sample of the vector at a continuous index coordinate,
    /// clamped to the grid.
    std::array<double, 3> sample(double x, double y, double z) const;

    double mean_magnitude() const;
    double max_magnitude() const;
    bool has_nan() const;

private:
    GridShape shape_;
    std::vector<float> data_;
};

/// output(x) = v(x + u(x)); out-of-bounds samples take `background`
/// (-1024 HU by default, air).
Volume warp_volume(const Volume& v, const DisplacementField& field, Interp interp,
                   double background = -1024.0);

/// Nearest-neighbour warp of a binary mask (out-of-bounds -> 0).
BinaryMask warp_mask(const BinaryMask& m, const DisplacementField& field);

/// Boundary-accurate variant: linear interpolation of the mask indicator
/// followed by a 0.5 threshold. Halves the surface error of nearest
/// sampling at the cost of exact binarity of the intermediate values.
BinaryMask warp_mask_linear(const BinaryMask& m, const DisplacementField& field);

/// Displacement of the map (id + inner) o (id + outer):
/// u(x) = inner(x + outer(x)) + outer(x), with linear interpolation of inner.
DisplacementField compose_fields(const DisplacementField& outer, const DisplacementField& inner);

/// Fixed-point inverse: v(x) = -f(x + v(x)). The `converged` flag on the
/// result is cleared when the residual stays above tolerance.
struct InvertResult {
    DisplacementField field;
    bool converged = true;
    double residual = 0.0;
};
InvertResult invert_field(const DisplacementField& f, int iterations = 20, double tolerance = 0.05);

/// det(I + grad u) per voxel; central differences inside, one-sided at
/// the borders. Unitless: >1 expansion, <1 contraction, <=0 folding.
Volume jacobian_determinant(const DisplacementField& f);

/// Smooth each component with a Gaussian (reflected borders).
DisplacementField smooth_field(const DisplacementField& f, double sigma);

/// Resample to a grid scaled by `factor` per axis; vectors are multiplied by
/// the same factor so displacements stay in the output grid's voxel units.
DisplacementField scale_field(const DisplacementField& f, std::array<double, 3> factor);

/// Diffeomorphic exponential by scaling and squaring: splits v into 2^steps
/// increments and squares by self-composition.
DisplacementField exponentiate_field(const DisplacementField& v, int steps = 6);

DisplacementField add_fields(const DisplacementField& a, const DisplacementField& b);

} // namespace inspex
