#include "inspex/lungseg.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "inspex/errors.hpp"

namespace inspex {

void QuantConfig::validate() const {
    if (!(emphysema_threshold_hu < lung_air_threshold_hu && lung_air_threshold_hu < 0.0)) {
        throw UsageError("QuantConfig: require emphysema threshold < lung air threshold < 0");
    }
    if (closing_radius_voxels < 0 || min_component_ml < 0) {
        throw UsageError("QuantConfig: negative radius or minimum volume");
    }
}

namespace {

// Offsets of a Euclidean ball, precomputed once per radius.
std::vector<std::array<int, 3>> ball_offsets(int radius) {
    std::vector<std::array<int, 3>> offs;
    for (int dz = -radius; dz <= radius; ++dz) {
        for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx) {
                if (dx * dx + dy * dy + dz * dz <= radius * radius) {
                    offs.push_back({dx, dy, dz});
                }
            }
        }
    }
    return offs;
}

BinaryMask dilate(const BinaryMask& m, const std::vector<std::array<int, 3>>& offs) {
    const GridShape s = m.shape();
    BinaryMask out(s);
    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                if (!m.at(i, j, k)) continue;
                for (const auto& o : offs) {
                    const int x = i + o[0], y = j + o[1], z = k + o[2];
                    if (x >= 0 && x < s.nx && y >= 0 && y < s.ny && z >= 0 && z < s.nz) {
                        out.at(x, y, z) = 1;
                    }
                }
            }
        }
    }
    return out;
}

BinaryMask erode(const BinaryMask& m, const std::vector<std::array<int, 3>>& offs) {
    const GridShape s = m.shape();
    BinaryMask out(s);
    for (int k = 0; k < s.nz; ++k) {
        for (int j = 0; j < s.ny; ++j) {
            for (int i = 0; i < s.nx; ++i) {
                bool keep = true;
                for (const auto& o : offs) {
                    const int x = i + o[0], y = j + o[1], z = k + o[2];
                    if (x < 0 || x >= s.nx || y < 0 || y >= s.ny || z < 0 || z >= s.nz ||
                        !m.at(x, y, z)) {
                        keep = false;
                        break;
                    }
                }
                out.at(i, j, k) = keep;
            }
        }
    }
    return out;
}

} // namespace

BinaryMask segment_lungs(const Volume& v, const QuantConfig& cfg) {
    cfg.validate();
    const GridShape s = v.shape();
    const float air = static_cast<float>(cfg.lung_air_threshold_hu);

    // 26-connected component labeling over the candidate-air voxels.
    std::vector<int32_t> label(static_cast<size_t>(s.numel()), 0);
    int32_t next_label = 0;
    std::vector<int64_t> component_size;
    std::vector<uint8_t> touches_boundary;
    std::vector<int64_t> stack;

    for (int64_t start = 0; start < s.numel(); ++start) {
        if (label[static_cast<size_t>(start)] != 0 || v.data()[static_cast<size_t>(start)] >= air) {
            continue;
        }
        ++next_label;
        component_size.push_back(0);
        touches_boundary.push_back(0);
        stack.clear();
        stack.push_back(start);
        label[static_cast<size_t>(start)] = next_label;
        while (!stack.empty()) {
            const int64_t idx = stack.back();
            stack.pop_back();
            ++component_size.back();
            const int i = static_cast<int>(idx % s.nx);
            const int j = static_cast<int>((idx / s.nx) % s.ny);
            const int k = static_cast<int>(idx / (static_cast<int64_t>(s.nx) * s.ny));
            if (i == 0 || j == 0 || k == 0 || i == s.nx - 1 || j == s.ny - 1 || k == s.nz - 1) {
                touches_boundary.back() = 1;
            }
            for (int dz = -1; dz <= 1; ++dz) {
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0 && dz == 0) continue;
                        const int x = i + dx, y = j + dy, z = k + dz;
                        if (x < 0 || x >= s.nx || y < 0 || y >= s.ny || z < 0 || z >= s.nz) continue;
                        const int64_t nidx = v.index(x, y, z);
                        if (label[static_cast<size_t>(nidx)] == 0 &&
                            v.data()[static_cast<size_t>(nidx)] < air) {
                            label[static_cast<size_t>(nidx)] = next_label;
                            stack.push_back(nidx);
                        }
                    }
                }
            }
        }
    }

    const double voxel_ml = v.spacing[0] * v.spacing[1] * v.spacing[2] / 1000.0;
    std::vector<uint8_t> keep(static_cast<size_t>(next_label) + 1, 0);
    int kept = 0;
    for (int32_t c = 1; c <= next_label; ++c) {
        const double ml = static_cast<double>(component_size[static_cast<size_t>(c - 1)]) * voxel_ml;
        if (!touches_boundary[static_cast<size_t>(c - 1)] && ml >= cfg.min_component_ml) {
            keep[static_cast<size_t>(c)] = 1;
            ++kept;
        }
    }

    BinaryMask mask(s);
    for (int64_t idx = 0; idx < s.numel(); ++idx) {
        mask.data()[static_cast<size_t>(idx)] = keep[static_cast<size_t>(label[static_cast<size_t>(idx)])];
    }
    if (kept == 0) {
        mask.warning = "no lung component found (all candidate air touched the boundary or was "
                       "below the minimum volume)";
        return mask;
    }
    if (cfg.closing_radius_voxels > 0) {
        const auto offs = ball_offsets(cfg.closing_radius_voxels);
        mask = erode(dilate(mask, offs), offs);
    }
    return mask;
}

BinaryMask emphysema_mask(const Volume& v, const BinaryMask& lung, const QuantConfig& cfg) {
    cfg.validate();
    if (!(v.shape() == lung.shape())) throw UsageError("emphysema_mask: shape mismatch");
    const float thr = static_cast<float>(cfg.emphysema_threshold_hu);
    BinaryMask out(v.shape());
    for (size_t i = 0; i < out.data().size(); ++i) {
        out.data()[i] = (lung.data()[i] && v.data()[i] < thr) ? 1 : 0;
    }
    return out;
}

double emphysema_percent(const Volume& v, const BinaryMask& lung, const QuantConfig& cfg) {
    const BinaryMask emph = emphysema_mask(v, lung, cfg);
    const int64_t lung_count = lung.count();
    if (lung_count == 0) {
        throw DataError("emphysema_percent: empty lung mask, score undefined");
    }
    return 100.0 * static_cast<double>(emph.count()) / static_cast<double>(lung_count);
}

double mask_volume_ml(const BinaryMask& m, const std::array<double, 3>& spacing) {
    return static_cast<double>(m.count()) * spacing[0] * spacing[1] * spacing[2] / 1000.0;
}

} // namespace inspex
