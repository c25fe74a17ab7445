#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lesiontrack/geometry.hpp"

namespace lesiontrack {

/// Dense scalar image (float32 voxels, x fastest).
struct Volume {
    GridRef grid;
    std::vector<float> data;

    Volume() = default;
    /// Zero-filled volume on `g`.
    explicit Volume(const GridRef& g, float fill = 0.0f);
    /// Takes ownership of `values`; throws when the length does not match the grid
    /// or a value is not finite.
    Volume(const GridRef& g, std::vector<float> values);

    float& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
    float at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }

    float min_value() const;
    float max_value() const;
};

/// Labelled lesion instances: 0 is background, positive labels are instances.
///
/// Labels carry lesion identity across timepoints, so a label may be absent from a
/// particular scan; `num_instances()` counts the labels actually present.
struct InstanceMask {
    GridRef grid;
    std::vector<std::uint16_t> labels;

    InstanceMask() = default;
    explicit InstanceMask(const GridRef& g);
    InstanceMask(const GridRef& g, std::vector<std::uint16_t> values);

    std::uint16_t& at(int i, int j, int k) { return labels[grid.index(i, j, k)]; }
    std::uint16_t at(int i, int j, int k) const { return labels[grid.index(i, j, k)]; }

    /// Sorted distinct non-zero labels.
    std::vector<std::uint16_t> present_labels() const;
    int num_instances() const { return static_cast<int>(present_labels().size()); }
    bool has_label(std::uint16_t label) const;
    std::size_t count(std::uint16_t label) const;
    bool empty() const;
};

/// Binary grid (0/1 bytes). Also used for rasterised prompt channels.
struct BinaryMask {
    GridRef grid;
    std::vector<std::uint8_t> data;

    BinaryMask() = default;
    explicit BinaryMask(const GridRef& g);
    BinaryMask(const GridRef& g, std::vector<std::uint8_t> values);

    std::uint8_t& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
    std::uint8_t at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }

    std::size_t count() const;
    bool empty() const { return count() == 0; }
};

/// Foreground of one instance (`label`), or of all instances when label is 0.
BinaryMask binary_of(const InstanceMask& m, std::uint16_t label = 0);
/// Binary mask promoted to an instance mask carrying `label` on foreground.
InstanceMask instance_of(const BinaryMask& m, std::uint16_t label = 1);

enum class Interp { Linear, Nearest };

/// Resamples onto a new spacing; shape = ceil(extent / target_spacing), origin kept.
/// Sample positions beyond the last source voxel centre use replicate-edge values.
Volume resample(const Volume& v, const Vec3& target_spacing, Interp mode = Interp::Linear);
InstanceMask resample(const InstanceMask& m, const Vec3& target_spacing);

/// Resamples onto an arbitrary target grid (replicate-edge outside the source).
Volume resample_to(const Volume& v, const GridRef& target, Interp mode = Interp::Linear);
InstanceMask resample_to(const InstanceMask& m, const GridRef& target);

/// Zero-mean, unit (population) standard deviation.
Volume znormalize(const Volume& v);

/// Clip to the per-volume [0.5, 99.5] percentiles then z-score.
Volume ct_normalize(const Volume& v);

/// Linear-interpolated percentile (q in [0, 100]) of `values`, numpy "linear" rule.
double percentile(std::span<const float> values, double q);

/// Where a cropped patch sits inside its source grid.
struct Placement {
    GridRef source;
    GridRef patch;
    std::array<int, 3> start{};  // source voxel index of patch voxel (0,0,0)
};

/// Extracts `size_vox` voxels centred on `center_mm`; voxels outside the source are
/// filled with the source minimum.
std::pair<Volume, Placement> crop_roi(const Volume& v, const Vec3& center_mm, const Shape3& size_vox);

/// Pastes a patch-grid mask back onto the source grid; voxels outside the patch are 0.
BinaryMask paste_back(const BinaryMask& patch_mask, const Placement& where);
InstanceMask paste_back(const InstanceMask& patch_mask, const Placement& where);

/// Extracts the placement's patch region from any source-grid mask (outside -> 0).
BinaryMask crop_like(const BinaryMask& source_mask, const Placement& where);

}  // namespace lesiontrack
