#pragma once

#include <array>
#include <string>
#include <vector>

#include "inspex/field.hpp"
#include "inspex/volume.hpp"

namespace inspex {

/// Index-space affine map y = A(x - center) + center + t.
struct AffineTransform {
    enum class Kind { Rigid, Affine };
    Kind kind = Kind::Rigid;
    std::array<double, 9> matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<double, 3> translation{0, 0, 0};
    std::array<double, 3> center{0, 0, 0};

    std::array<double, 3> apply(const std::array<double, 3>& x) const;
    /// Largest deviation of A^T A from the identity plus |det(A) - 1|;
    /// rigid transforms keep this below ~1e-6.
    double rigidity_error() const;
};

enum class Metric { LocalCC, MSE };
enum class Stage { Rigid, Affine, DeformHalf, DeformFull };

struct RegistrationConfig {
    std::vector<Stage> stages{Stage::Rigid, Stage::Affine, Stage::DeformHalf, Stage::DeformFull};
    Metric affine_metric = Metric::MSE;
    Metric deform_metric = Metric::LocalCC;
    int cc_radius = 3;
    double smooth_update_sigma = 3.0;
    double smooth_total_sigma = 0.5;
    double gradient_step = 0.4; // max voxels moved per deformable iteration
    int ss_steps = 6;           // scaling-and-squaring exponentiation steps
    double tolerance = 1e-6;    // relative metric improvement
    int rigid_iterations = 200;
    int affine_iterations = 200;
    int deform_iterations = 100; // per level
    int pyramid_levels = 3;      // rigid/affine multiresolution
    bool chain_deformable = false; // full-res starts from the upsampled half-res field
    double background_hu = -1024.0;

    void validate() const;
};

struct AffineResult {
    AffineTransform transform;
    bool converged = false;
    std::string warning;
    std::vector<double> metric_trace; // similarity, higher is better
};

struct RegistrationResult {
    DisplacementField forward; // warped(x) = moving(x + forward(x)) on the fixed grid
    DisplacementField inverse;
    Volume warped_moving;
    Volume inverse_warped_fixed;
    std::vector<double> metric_trace;
    bool converged = false;
    std::string warning;
};

AffineResult register_rigid(const Volume& fixed, const Volume& moving,
                            const RegistrationConfig& cfg = {});

AffineResult register_affine(const Volume& fixed, const Volume& moving, const AffineTransform& init,
                             const RegistrationConfig& cfg = {});

/// Symmetric diffeomorphic stage. Both images deform toward a midpoint; the
/// returned forward/inverse fields are the composed half-warps. With
/// half_resolution the optimization runs on 2x-downsampled volumes and the
/// fields are upsampled back (vectors doubled). `init` may carry an upsampled
/// field to continue from (pass nullptr to start from zero).
RegistrationResult register_deformable(const Volume& fixed, const Volume& moving,
                                       const RegistrationConfig& cfg, bool half_resolution,
                                       const DisplacementField* init_forward = nullptr);

/// Resample through the affine map (bake): out(x) = v(T(x)).
Volume resample_affine(const Volume& v, const AffineTransform& t, Interp interp,
                       double background = -1024.0);
BinaryMask resample_affine_mask(const BinaryMask& m, const AffineTransform& t);

/// Displacement field equivalent of an affine map on a grid: u(x) = T(x) - x.
DisplacementField affine_to_field(const AffineTransform& t, GridShape shape);

/// Total map of "affine bake then deformable": u(x) = T(x + d(x)) - x.
DisplacementField compose_affine_after_field(const AffineTransform& t,
                                             const DisplacementField& deform);

/// Similarity (higher is better) between two same-grid volumes under the
/// given metric; exposed for tests and convergence reporting.
double similarity(const Volume& a, const Volume& b, Metric metric, int cc_radius = 3);

} // namespace inspex
