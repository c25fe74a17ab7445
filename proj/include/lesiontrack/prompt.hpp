#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include <json.hpp>

#include "lesiontrack/field.hpp"
#include "lesiontrack/rng.hpp"

namespace lesiontrack {

struct PointPrompt {
    Point3 mm;
};

/// Box between voxel centres, in mm.
struct BoxPrompt {
    Box3 box;
};

struct MaskPrompt {
    InstanceMask mask;
    std::uint16_t label = 1;
    std::string path;  ///< where the mask came from, for reports; may be empty
};

using Prompt = std::variant<PointPrompt, BoxPrompt, MaskPrompt>;

/// Rasterised prompt: a binary grid aligned with the image it accompanies.
using PromptChannel = BinaryMask;

/// Point-prompt ball radius in voxels.
inline constexpr int kBallRadius = 5;

/// "point", "box" or "mask".
std::string prompt_type(const Prompt& p);

/// ROI centre: the point itself, the box centre, or the mask label's centroid.
Point3 prompt_center(const Prompt& p);

/// Lattice ball of `radius_vox` voxels around the voxel nearest to `center_mm`,
/// clipped to the grid.
PromptChannel ball_channel(const GridRef& g, const Point3& center_mm, int radius_vox = kBallRadius);

/// Voxels whose centres lie in `box` (with a 1e-6 voxel tolerance).
PromptChannel box_channel(const GridRef& g, const Box3& box);

struct SimulatedPoint {
    Point3 point;
    PromptChannel channel;
};

/// Uniformly drawn foreground voxel of `label` and its ball channel.
SimulatedPoint simulate_point(const InstanceMask& mask, std::uint16_t label, Rng& rng);

struct SimulatedBox {
    Box3 box;
    PromptChannel channel;
};

/// Tight box of `label`, each face pushed out by an integer offset ~ U{0..max_offset}.
SimulatedBox simulate_box(const InstanceMask& mask, std::uint16_t label, Rng& rng, int max_offset = 10);

/// Same with explicit offsets {lo_x, lo_y, lo_z, hi_x, hi_y, hi_z} in voxels.
SimulatedBox simulate_box(const InstanceMask& mask, std::uint16_t label, const std::array<int, 6>& offsets);

/// Throws InvalidArgument when the prompt does not intersect the grid.
PromptChannel rasterize(const Prompt& p, const GridRef& g);

/// p + u_fwd(p). Throws InvalidArgument when p is outside the field's grid.
Point3 propagate_point(const Point3& p, const DisplacementField& u_fwd);

/// Bounding box of the eight propagated corners, clipped to `clip` (the field's grid
/// when null). Throws InvalidArgument when the result misses the grid entirely.
Box3 propagate_box(const Box3& b, const DisplacementField& u_fwd, const GridRef* clip = nullptr);

struct PropagatedMask {
    InstanceMask mask;  ///< on u_bwd's grid, carrying the original label
    bool empty = false;
};

/// Nearest-neighbour pull-back of one instance through the follow-up -> baseline map.
PropagatedMask propagate_mask(const InstanceMask& m, std::uint16_t label, const DisplacementField& u_bwd);

/// {"type": "point"|"box"|"mask", "mm" | "min_mm"/"max_mm" | "mask_path"+"label", "timepoint"}.
nlohmann::json prompt_to_json(const Prompt& p, int timepoint = 0);
/// Relative mask paths resolve against `base_dir`.
Prompt prompt_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

}  // namespace lesiontrack
