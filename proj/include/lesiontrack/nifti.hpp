#pragma once

#include <filesystem>
#include <variant>

#include "lesiontrack/volume.hpp"

namespace lesiontrack {

/// NIfTI-1 single-file (.nii / .nii.gz) reader and writer.
///
/// Accepted on-disk datatypes: uint8, int16, uint16, int32, float32, float64.
/// Orientation must be axis aligned (a permutation with flips); data is reordered
/// onto the canonical x-fastest grid with positive spacing.
namespace nifti {

enum class Datatype : short {
    UInt8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
    UInt16 = 512,
};

/// Header fields the toolkit cares about, decoded and canonicalised.
struct HeaderInfo {
    GridRef grid;
    Datatype datatype = Datatype::Float32;
    double scl_slope = 0.0;
    double scl_inter = 0.0;
};

HeaderInfo read_header(const std::filesystem::path& path);

}  // namespace nifti

/// Loads a volume (any accepted datatype, converted to float32; scl_slope applied).
Volume load_volume(const std::filesystem::path& path);

/// Loads an instance mask. Integer files are taken as-is; float files must hold
/// non-negative integral values.
InstanceMask load_mask(const std::filesystem::path& path);

/// Integer-typed files load as InstanceMask, floating-point files as Volume.
std::variant<Volume, InstanceMask> load_nifti(const std::filesystem::path& path);

/// Writes float32 data; gzip-compressed when the path ends in ".gz".
void save_nifti(const Volume& v, const std::filesystem::path& path);
/// Writes uint16 labels.
void save_nifti(const InstanceMask& m, const std::filesystem::path& path);
/// Writes uint8 0/1.
void save_nifti(const BinaryMask& m, const std::filesystem::path& path);

}  // namespace lesiontrack
