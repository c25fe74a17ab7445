#include "lesiontrack/prompt.hpp"

#include <algorithm>
#include <cmath>

#include "lesiontrack/error.hpp"
#include "lesiontrack/nifti.hpp"

namespace lesiontrack {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_label(const InstanceMask& m, std::uint16_t label, const char* what) {
    if (label == 0 || !m.has_label(label))
        throw InvalidArgument(std::string(what) + ": label " + std::to_string(label) + " is not present");
}

/// Inclusive voxel bounds of `label`.
std::pair<std::array<int, 3>, std::array<int, 3>> tight_bounds(const InstanceMask& m, std::uint16_t label) {
    const GridRef& g = m.grid;
    std::array<int, 3> lo{g.shape[0], g.shape[1], g.shape[2]}, hi{-1, -1, -1};
    for (std::size_t idx = 0; idx < m.labels.size(); ++idx) {
        if (m.labels[idx] != label) continue;
        const auto p = g.unravel(idx);
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    return {lo, hi};
}

SimulatedBox box_from_bounds(const GridRef& g, std::array<int, 3> lo, std::array<int, 3> hi) {
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::clamp(lo[a], 0, g.shape[a] - 1);
        hi[a] = std::clamp(hi[a], 0, g.shape[a] - 1);
    }
    SimulatedBox out;
    out.box = {g.voxel_center(lo[0], lo[1], lo[2]), g.voxel_center(hi[0], hi[1], hi[2])};
    out.channel = box_channel(g, out.box);
    return out;
}

Vec3 vec_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
        throw InvalidArgument(std::string("prompt: '") + key + "' must be an array of 3 numbers");
    Vec3 v;
    for (int a = 0; a < 3; ++a) {
        if (!j[key][a].is_number()) throw InvalidArgument(std::string("prompt: '") + key + "' must hold numbers");
        v[a] = j[key][a].get<double>();
    }
    return v;
}

}  // namespace

std::string prompt_type(const Prompt& p) {
    return std::visit(Overloaded{[](const PointPrompt&) { return std::string("point"); },
                                 [](const BoxPrompt&) { return std::string("box"); },
                                 [](const MaskPrompt&) { return std::string("mask"); }},
                      p);
}

Point3 prompt_center(const Prompt& p) {
    return std::visit(Overloaded{[](const PointPrompt& q) { return q.mm; },
                                 [](const BoxPrompt& q) { return q.box.center(); },
                                 [](const MaskPrompt& q) {
                                     require_label(q.mask, q.label, "prompt_center");
                                     return centroid(q.mask, q.label);
                                 }},
                      p);
}

PromptChannel ball_channel(const GridRef& g, const Point3& center_mm, int radius_vox) {
    if (radius_vox < 0) throw InvalidArgument("ball radius must be >= 0");
    PromptChannel out(g);
    const Vec3 c = g.to_voxel(center_mm);
    const std::array<int, 3> ci{static_cast<int>(std::floor(c.x + 0.5)), static_cast<int>(std::floor(c.y + 0.5)),
                                static_cast<int>(std::floor(c.z + 0.5))};
    const int r2 = radius_vox * radius_vox;
    for (int dz = -radius_vox; dz <= radius_vox; ++dz)
        for (int dy = -radius_vox; dy <= radius_vox; ++dy)
            for (int dx = -radius_vox; dx <= radius_vox; ++dx) {
                if (dx * dx + dy * dy + dz * dz > r2) continue;
                const int i = ci[0] + dx, j = ci[1] + dy, k = ci[2] + dz;
                if (i < 0 || j < 0 || k < 0 || i >= g.shape[0] || j >= g.shape[1] || k >= g.shape[2]) continue;
                out.at(i, j, k) = 1;
            }
    return out;
}

PromptChannel box_channel(const GridRef& g, const Box3& box) {
    if (!box.valid()) throw InvalidArgument("box prompt: min must be <= max");
    PromptChannel out(g);
    const Vec3 lo = g.to_voxel(box.min), hi = g.to_voxel(box.max);
    std::array<int, 3> a0{}, a1{};
    for (int a = 0; a < 3; ++a) {
        a0[a] = std::max(0, static_cast<int>(std::ceil(lo[a] - 1e-6)));
        a1[a] = std::min(g.shape[a] - 1, static_cast<int>(std::floor(hi[a] + 1e-6)));
        if (a1[a] < a0[a]) return out;
    }
    for (int k = a0[2]; k <= a1[2]; ++k)
        for (int j = a0[1]; j <= a1[1]; ++j)
            for (int i = a0[0]; i <= a1[0]; ++i) out.at(i, j, k) = 1;
    return out;
}

SimulatedPoint simulate_point(const InstanceMask& mask, std::uint16_t label, Rng& rng) {
    require_label(mask, label, "simulate_point");
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < mask.labels.size(); ++i)
        if (mask.labels[i] == label) fg.push_back(i);
    const std::size_t pick = fg[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(fg.size()) - 1))];
    const auto p = mask.grid.unravel(pick);
    SimulatedPoint out;
    out.point = mask.grid.voxel_center(p[0], p[1], p[2]);
    out.channel = ball_channel(mask.grid, out.point);
    return out;
}

SimulatedBox simulate_box(const InstanceMask& mask, std::uint16_t label, Rng& rng, int max_offset) {
    if (max_offset < 0) throw InvalidArgument("simulate_box: max_offset must be >= 0");
    require_label(mask, label, "simulate_box");
    std::array<int, 6> off{};
    for (auto& o : off) o = rng.uniform_int(0, max_offset);
    return simulate_box(mask, label, off);
}

SimulatedBox simulate_box(const InstanceMask& mask, std::uint16_t label, const std::array<int, 6>& offsets) {
    require_label(mask, label, "simulate_box");
    for (int o : offsets)
        if (o < 0) throw InvalidArgument("simulate_box: offsets must be >= 0");
    auto [lo, hi] = tight_bounds(mask, label);
    for (int a = 0; a < 3; ++a) {
        lo[a] -= offsets[a];
        hi[a] += offsets[3 + a];
    }
    return box_from_bounds(mask.grid, lo, hi);
}

PromptChannel rasterize(const Prompt& p, const GridRef& g) {
    PromptChannel out = std::visit(
        Overloaded{[&](const PointPrompt& q) { return ball_channel(g, q.mm); },
                   [&](const BoxPrompt& q) { return box_channel(g, q.box); },
                   [&](const MaskPrompt& q) {
                       require_label(q.mask, q.label, "rasterize");
                       const InstanceMask one = instance_of(binary_of(q.mask, q.label), 1);
                       return binary_of(q.mask.grid == g ? one : resample_to(one, g), 1);
                   }},
        p);
    if (out.empty()) throw InvalidArgument("rasterize: " + prompt_type(p) + " prompt does not intersect the grid " + to_string(g));
    return out;
}

Point3 propagate_point(const Point3& p, const DisplacementField& u_fwd) {
    if (!u_fwd.grid.contains_mm(p))
        throw InvalidArgument("propagate_point: point " + to_string(p) + " is outside the field grid");
    return p + u_fwd.sample_mm(p);
}

Box3 propagate_box(const Box3& b, const DisplacementField& u_fwd, const GridRef* clip) {
    if (!b.valid()) throw InvalidArgument("propagate_box: min must be <= max");
    Box3 out{{1e300, 1e300, 1e300}, {-1e300, -1e300, -1e300}};
    for (int c = 0; c < 8; ++c) {
        const Vec3 corner{c & 1 ? b.max.x : b.min.x, c & 2 ? b.max.y : b.min.y, c & 4 ? b.max.z : b.min.z};
        // corners slightly outside the field grid use its edge values
        const Vec3 q = corner + u_fwd.sample_mm(corner);
        for (int a = 0; a < 3; ++a) {
            out.min[a] = std::min(out.min[a], q[a]);
            out.max[a] = std::max(out.max[a], q[a]);
        }
    }
    const GridRef& g = clip ? *clip : u_fwd.grid;
    const Vec3 lo = g.origin, hi = g.to_mm({g.shape[0] - 1.0, g.shape[1] - 1.0, g.shape[2] - 1.0});
    for (int a = 0; a < 3; ++a) {
        if (out.max[a] < lo[a] || out.min[a] > hi[a])
            throw InvalidArgument("propagate_box: all corners map outside the grid");
        out.min[a] = std::max(out.min[a], lo[a]);
        out.max[a] = std::min(out.max[a], hi[a]);
    }
    return out;
}

PropagatedMask propagate_mask(const InstanceMask& m, std::uint16_t label, const DisplacementField& u_bwd) {
    require_label(m, label, "propagate_mask");
    PropagatedMask out;
    out.mask = instance_of(warp(binary_of(m, label), u_bwd), label);
    out.empty = out.mask.empty();
    return out;
}

nlohmann::json prompt_to_json(const Prompt& p, int timepoint) {
    nlohmann::json j = {{"type", prompt_type(p)}, {"timepoint", timepoint}};
    std::visit(Overloaded{[&](const PointPrompt& q) { j["mm"] = {q.mm.x, q.mm.y, q.mm.z}; },
                          [&](const BoxPrompt& q) {
                              j["min_mm"] = {q.box.min.x, q.box.min.y, q.box.min.z};
                              j["max_mm"] = {q.box.max.x, q.box.max.y, q.box.max.z};
                          },
                          [&](const MaskPrompt& q) {
                              j["mask_path"] = q.path;
                              j["label"] = q.label;
                          }},
               p);
    return j;
}

Prompt prompt_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
        throw InvalidArgument("prompt: expected an object with a string 'type'");
    const std::string type = j["type"].get<std::string>();
    if (type == "point") return PointPrompt{vec_from(j, "mm")};
    if (type == "box") {
        BoxPrompt b{{vec_from(j, "min_mm"), vec_from(j, "max_mm")}};
        if (!b.box.valid()) throw InvalidArgument("prompt: box min_mm must be <= max_mm");
        return b;
    }
    if (type == "mask") {
        if (!j.contains("mask_path") || !j["mask_path"].is_string())
            throw InvalidArgument("prompt: mask prompts need a string 'mask_path'");
        if (!j.contains("label") || !j["label"].is_number_integer() || j["label"].get<int>() < 1 ||
            j["label"].get<int>() > 65535)
            throw InvalidArgument("prompt: mask prompts need an integer 'label' in [1, 65535]");
        std::filesystem::path path = j["mask_path"].get<std::string>();
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        MaskPrompt m{load_mask(path), static_cast<std::uint16_t>(j["label"].get<int>()), path.string()};
        require_label(m.mask, m.label, "prompt");
        return m;
    }
    throw InvalidArgument("prompt: unknown type '" + type + "' (expected point, box or mask)");
}

}  // namespace lesiontrack
