#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lesiontrack/volume.hpp"

namespace lesiontrack {

/// Per-voxel displacement u(x) in mm; the coordinate map is phi(x) = x + u(x).
/// Components are stored as three x-fastest planes.
struct DisplacementField {
    GridRef grid;
    std::array<std::vector<double>, 3> comp;

    DisplacementField() = default;
    /// Zero field on `g`.
    explicit DisplacementField(const GridRef& g);

    Vec3 at(std::size_t idx) const { return {comp[0][idx], comp[1][idx], comp[2][idx]}; }
    void set(std::size_t idx, const Vec3& u) {
        comp[0][idx] = u.x;
        comp[1][idx] = u.y;
        comp[2][idx] = u.z;
    }
    bool is_zero() const;
    /// Largest |u| in mm.
    double max_norm() const;
    /// Mean |u| in mm.
    double mean_norm() const;

    /// Trilinear value at a world point (replicate edge outside the grid).
    Vec3 sample_mm(const Vec3& mm) const;
};

/// Uniform field of value `u` on `g`.
DisplacementField constant_field(const GridRef& g, const Vec3& u);
/// Componentwise negation, -u.
DisplacementField negated(const DisplacementField& u);
/// u resampled onto another grid (trilinear in mm, replicate edge); values stay in mm.
DisplacementField resample_to(const DisplacementField& u, const GridRef& target);

/// Per-axis Gaussian standard deviation (mm) and truncation radius in sigmas.
struct KernelSpec {
    Vec3 sigma{};
    double truncation = 4.0;
};

/// Discretely normalised 1D Gaussian taps for `sigma_vox`, radius ceil(truncation * sigma_vox).
std::vector<double> gaussian_taps(double sigma_vox, double truncation = 4.0);

/// Separable Gaussian smoothing with replicate edges; axes with sigma 0 are skipped.
Volume gaussian_blur(const Volume& v, const KernelSpec& k);

/// Raw-buffer variant used by the other kernels (sigma in voxels per axis).
void gaussian_blur_inplace(std::span<double> data, const Shape3& shape, const Vec3& sigma_vox, double truncation = 4.0);
/// Adjoint (transpose) of gaussian_blur_inplace under replicate edges.
void gaussian_blur_adjoint_inplace(std::span<double> data, const Shape3& shape, const Vec3& sigma_vox,
                                   double truncation = 4.0);

/// Spatial gradient in units of value/mm: central differences inside, one-sided at borders.
DisplacementField gradient(const Volume& v);

/// Pull-back warp: out(x) = v(x + u(x)). `u` lives on the output grid.
/// Volumes are sampled trilinearly with the source minimum outside; masks use nearest
/// neighbour with label 0 outside.
Volume warp(const Volume& v, const DisplacementField& u, Interp mode = Interp::Linear);
InstanceMask warp(const InstanceMask& m, const DisplacementField& u);
BinaryMask warp(const BinaryMask& m, const DisplacementField& u);

/// w with x + w(x) = phi_ab(phi_ba(x)); u_ab is sampled trilinearly (replicate edge)
/// at y = x + u_ba(x). The result lives on u_ba's grid.
DisplacementField compose(const DisplacementField& u_ab, const DisplacementField& u_ba);

/// Per-voxel Jacobian of phi(x) = x + u(x) (row = output component, column = axis).
std::vector<Mat3> jacobian(const DisplacementField& u);

/// Connected components of the non-zero voxels; labels follow first-voxel scan order.
InstanceMask connected_components(const BinaryMask& m, int connectivity = 26);

/// Exact Euclidean distance (mm) from every voxel centre to the nearest foreground
/// voxel centre. Throws DegenerateInput on an empty mask.
std::vector<double> distance_transform(const BinaryMask& m);

/// Mean position (mm) of the voxels carrying `label`.
Point3 centroid(const InstanceMask& m, std::uint16_t label);
Point3 centroid(const BinaryMask& m);

/// Writes <stem>_dx/_dy/_dz.nii.gz plus <stem>.json binding them (units mm).
void save_field(const DisplacementField& u, const std::filesystem::path& sidecar_json);
/// Reads a field written by save_field.
DisplacementField load_field(const std::filesystem::path& sidecar_json);

}  // namespace lesiontrack
