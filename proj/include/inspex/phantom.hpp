#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "inspex/field.hpp"
#include "inspex/volume.hpp"

namespace inspex {

struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> radii{};
};

/// Breathing model between the two phases: a per-lung radial contraction
/// toward the lung center (uniform scale inside the lung, quintic falloff to
/// identity at support_scale times the lung radii) plus a small whole-body
/// rigid motion. The total map and its displacement field are known in
/// closed form, which is what makes endpoint-error oracles possible.
struct ExpirationModel {
    double contraction = 0.5;        // volumetric lung contraction fraction f in (0,1)
    double densification_hu = 100.0; // parenchyma HU increase on expiration
    double support_scale = 1.4;      // falloff edge in lung-radius units
    std::array<double, 3> rigid_translation{1.0, -0.8, 0.6}; // voxels
    double rigid_rotation_z_deg = 1.2;
};

/// Reconstruction-kernel surrogate. SOFT is a Gaussian blur; HARD is an
/// unsharp mask plus correlated Gaussian noise (white noise blurred to the
/// correlation length and rescaled to sigma_n).
struct KernelSim {
    enum class Kind { Hard, Soft };
    Kind kind = Kind::Soft;
    double sigma = 1.2;          // blur width (SOFT) or unsharp base width (HARD)
    double unsharp_gain = 1.5;   // HARD only
    double noise_sigma_hu = 30.0; // HARD only
    double noise_corr_len = 2.0; // voxels
    uint64_t seed = 0;
};

struct PhantomSpec {
    GridShape grid{64, 64, 48};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    Ellipsoid body;
    std::array<Ellipsoid, 2> lungs;

    double tissue_hu = 40.0;
    double parenchyma_hu = -850.0;
    double emphysema_hu = -980.0;

    int blob_count = 6;
    double blob_radius_min = 2.0; // voxels
    double blob_radius_max = 4.0;

    double texture_amplitude_hu = 60.0;
    double texture_corr_len = 2.0;

    ExpirationModel expiration;
    KernelSim hard_kernel;
    KernelSim soft_kernel;

    uint64_t seed = 0;

    /// Body/lung geometry scaled to the grid; kernels set to HARD/SOFT.
    static PhantomSpec desk_default(GridShape grid = {64, 64, 48});

    /// Throws UsageError when lungs poke out of the body, contraction
    /// supports overlap, or parameters leave their domains.
    void validate() const;
};

struct PhantomCase {
    std::string id;
    std::string label; // "control" or "case"
    PhantomSpec spec;

    Volume insp_hard; // observed inspiratory image (hard kernel)
    Volume exp_soft;  // observed expiratory image (soft kernel)
    Volume insp_pristine;
    Volume exp_pristine;

    /// Forward resampling field on the inspiratory grid:
    /// exp(x + u(x)) == insp(x) up to densification and kernels.
    DisplacementField gt_field;

    BinaryMask insp_lung, exp_lung;
    BinaryMask insp_emph, exp_emph;
};

PhantomCase generate_case(const PhantomSpec& spec);

Volume simulate_kernel(const Volume& v, const KernelSim& k);

/// The counterfactual harmonization target: the inspiratory anatomy imaged
/// with this case's soft kernel.
Volume soft_kernel_reference(const PhantomCase& c);

/// Controls come first and carry zero emphysema blobs. Per-case seeds and
/// small geometry/breathing jitters derive deterministically from `seed`.
std::vector<PhantomCase> generate_cohort(int n_controls, int n_cases, const PhantomSpec& base,
                                         uint64_t seed);

} // namespace inspex
