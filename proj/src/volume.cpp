#include "lesiontrack/volume.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "lesiontrack/error.hpp"
#include "lesiontrack/parallel.hpp"
#include "sampling.hpp"

namespace lesiontrack {

// ---------------------------------------------------------------------------
// geometry

void GridRef::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] <= 0) throw InvalidArgument("grid shape must be positive, got " + to_string(*this));
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw InvalidArgument("grid spacing must be positive, got " + to_string(*this));
        if (!std::isfinite(origin[a])) throw InvalidArgument("grid origin must be finite");
    }
}

std::string to_string(const Vec3& v) {
    std::ostringstream os;
    os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
    return os.str();
}

std::string to_string(const GridRef& g) {
    std::ostringstream os;
    os << "shape [" << g.shape[0] << ", " << g.shape[1] << ", " << g.shape[2] << "] spacing "
       << to_string(g.spacing) << " origin " << to_string(g.origin);
    return os.str();
}

void require_same_grid(const GridRef& a, const GridRef& b, const char* what) {
    if (!(a == b)) throw GridMismatch(std::string(what) + ": grid mismatch: " + to_string(a) + " vs " + to_string(b));
}

// ---------------------------------------------------------------------------
// containers

Volume::Volume(const GridRef& g, float fill) : grid(g), data(g.size(), fill) { grid.validate(); }

Volume::Volume(const GridRef& g, std::vector<float> values) : grid(g), data(std::move(values)) {
    grid.validate();
    if (data.size() != grid.size())
        throw InvalidArgument("volume data length " + std::to_string(data.size()) + " does not match grid " +
                              to_string(grid));
    for (float v : data)
        if (!std::isfinite(v)) throw FormatError("volume contains non-finite values");
}

float Volume::min_value() const { return data.empty() ? 0.0f : *std::min_element(data.begin(), data.end()); }
float Volume::max_value() const { return data.empty() ? 0.0f : *std::max_element(data.begin(), data.end()); }

InstanceMask::InstanceMask(const GridRef& g) : grid(g), labels(g.size(), 0) { grid.validate(); }

InstanceMask::InstanceMask(const GridRef& g, std::vector<std::uint16_t> values) : grid(g), labels(std::move(values)) {
    grid.validate();
    if (labels.size() != grid.size())
        throw InvalidArgument("mask data length " + std::to_string(labels.size()) + " does not match grid " +
                              to_string(grid));
}

std::vector<std::uint16_t> InstanceMask::present_labels() const {
    std::vector<bool> seen(65536, false);
    for (auto l : labels) seen[l] = true;
    std::vector<std::uint16_t> out;
    for (std::size_t l = 1; l < seen.size(); ++l)
        if (seen[l]) out.push_back(static_cast<std::uint16_t>(l));
    return out;
}

bool InstanceMask::has_label(std::uint16_t label) const {
    return label != 0 && std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::size_t InstanceMask::count(std::uint16_t label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

bool InstanceMask::empty() const {
    return std::all_of(labels.begin(), labels.end(), [](auto l) { return l == 0; });
}

BinaryMask::BinaryMask(const GridRef& g) : grid(g), data(g.size(), 0) { grid.validate(); }

BinaryMask::BinaryMask(const GridRef& g, std::vector<std::uint8_t> values) : grid(g), data(std::move(values)) {
    grid.validate();
    if (data.size() != grid.size()) throw InvalidArgument("binary mask length does not match grid");
    for (auto& v : data) v = v ? 1 : 0;
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

BinaryMask binary_of(const InstanceMask& m, std::uint16_t label) {
    BinaryMask out(m.grid);
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        out.data[i] = label == 0 ? (m.labels[i] != 0) : (m.labels[i] == label);
    return out;
}

InstanceMask instance_of(const BinaryMask& m, std::uint16_t label) {
    InstanceMask out(m.grid);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.labels[i] = m.data[i] ? label : 0;
    return out;
}

// ---------------------------------------------------------------------------
// resampling

namespace {

GridRef spacing_grid(const GridRef& g, const Vec3& target_spacing) {
    GridRef out;
    out.spacing = target_spacing;
    out.origin = g.origin;
    for (int a = 0; a < 3; ++a) {
        if (!(target_spacing[a] > 0.0)) throw InvalidArgument("target spacing must be positive");
        // small tolerance so 10 * 2mm / 1mm is exactly 20, not 21
        const double n = std::ceil(g.shape[a] * g.spacing[a] / target_spacing[a] - 1e-9);
        if (n < 1.0) throw InvalidArgument("resample produces an empty axis");
        out.shape[a] = static_cast<int>(n);
    }
    return out;
}

template <class T, class Sampler>
std::vector<T> resample_buffer(const GridRef& src, const GridRef& dst, Sampler&& sample) {
    std::vector<T> out(dst.size());
    parallel_for(0, dst.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k)
            for (int j = 0; j < dst.shape[1]; ++j)
                for (int i = 0; i < dst.shape[0]; ++i) {
                    const Vec3 c = src.to_voxel(dst.voxel_center(i, j, k));
                    out[dst.index(i, j, k)] = sample(c);
                }
    });
    return out;
}

}  // namespace

Volume resample_to(const Volume& v, const GridRef& target, Interp mode) {
    target.validate();
    if (target == v.grid) return v;
    const auto* d = v.data.data();
    const auto& s = v.grid.shape;
    std::vector<float> out;
    if (mode == Interp::Linear)
        out = resample_buffer<float>(v.grid, target,
                                     [&](const Vec3& c) { return static_cast<float>(detail::sample_clamped(d, s, c)); });
    else
        out = resample_buffer<float>(v.grid, target, [&](const Vec3& c) { return d[detail::nearest_index_clamped(s, c)]; });
    Volume r;
    r.grid = target;
    r.data = std::move(out);
    return r;
}

InstanceMask resample_to(const InstanceMask& m, const GridRef& target) {
    target.validate();
    if (target == m.grid) return m;
    const auto* d = m.labels.data();
    const auto& s = m.grid.shape;
    auto out = resample_buffer<std::uint16_t>(m.grid, target, [&](const Vec3& c) {
        const long long idx = detail::nearest_index(s, c);
        return idx < 0 ? std::uint16_t{0} : d[idx];
    });
    return InstanceMask(target, std::move(out));
}

Volume resample(const Volume& v, const Vec3& target_spacing, Interp mode) {
    if (target_spacing == v.grid.spacing) return v;
    return resample_to(v, spacing_grid(v.grid, target_spacing), mode);
}

InstanceMask resample(const InstanceMask& m, const Vec3& target_spacing) {
    if (target_spacing == m.grid.spacing) return m;
    // nearest with replicate edges so the ceil'd border row keeps its labels
    const GridRef target = spacing_grid(m.grid, target_spacing);
    const auto* d = m.labels.data();
    const auto& s = m.grid.shape;
    auto out = resample_buffer<std::uint16_t>(m.grid, target,
                                              [&](const Vec3& c) { return d[detail::nearest_index_clamped(s, c)]; });
    return InstanceMask(target, std::move(out));
}

// ---------------------------------------------------------------------------
// intensity normalisation

namespace {

std::pair<double, double> mean_std(std::span<const float> values) {
    double mean = 0.0;
    for (float v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (float v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

}  // namespace

Volume znormalize(const Volume& v) {
    if (v.data.empty()) throw DegenerateInput("znormalize: empty volume");
    const auto [mean, sd] = mean_std(v.data);
    if (!(sd > 0.0)) throw DegenerateInput("znormalize: constant volume (zero variance)");
    Volume out = v;
    for (auto& x : out.data) x = static_cast<float>((x - mean) / sd);
    return out;
}

double percentile(std::span<const float> values, double q) {
    if (values.empty()) throw InvalidArgument("percentile of empty set");
    std::vector<float> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return sorted[lo] + (static_cast<double>(sorted[hi]) - sorted[lo]) * f;
}

Volume ct_normalize(const Volume& v) {
    if (v.data.empty()) throw DegenerateInput("ct_normalize: empty volume");
    const double lo = percentile(v.data, 0.5);
    const double hi = percentile(v.data, 99.5);
    std::vector<float> clipped(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i)
        clipped[i] = static_cast<float>(std::clamp(static_cast<double>(v.data[i]), lo, hi));
    const auto [mean, sd] = mean_std(clipped);
    if (!(sd > 0.0)) throw DegenerateInput("ct_normalize: zero variance after percentile clipping");
    for (auto& x : clipped) x = static_cast<float>((x - mean) / sd);
    Volume out;
    out.grid = v.grid;
    out.data = std::move(clipped);
    return out;
}

// ---------------------------------------------------------------------------
// ROI cropping

std::pair<Volume, Placement> crop_roi(const Volume& v, const Vec3& center_mm, const Shape3& size_vox) {
    const Vec3 c = v.grid.to_voxel(center_mm);
    if (!v.grid.contains_voxel(c))
        throw InvalidArgument("crop_roi: center " + to_string(center_mm) + " mm is outside the volume");
    Placement where;
    where.source = v.grid;
    for (int a = 0; a < 3; ++a) {
        if (size_vox[a] <= 0) throw InvalidArgument("crop_roi: patch size must be positive");
        where.start[a] = static_cast<int>(std::floor(c[a] - (size_vox[a] - 1) * 0.5 + 0.5));
    }
    where.patch.shape = size_vox;
    where.patch.spacing = v.grid.spacing;
    where.patch.origin = v.grid.voxel_center(where.start[0], where.start[1], where.start[2]);

    const float pad = v.min_value();
    Volume patch(where.patch, pad);
    for (int k = 0; k < size_vox[2]; ++k)
        for (int j = 0; j < size_vox[1]; ++j)
            for (int i = 0; i < size_vox[0]; ++i) {
                const int si = where.start[0] + i, sj = where.start[1] + j, sk = where.start[2] + k;
                if (v.grid.in_bounds(si, sj, sk)) patch.at(i, j, k) = v.at(si, sj, sk);
            }
    return {std::move(patch), where};
}

namespace {

template <class T>
std::vector<T> paste_buffer(const std::vector<T>& patch, const Placement& where) {
    std::vector<T> out(where.source.size(), T{0});
    const auto& ps = where.patch.shape;
    for (int k = 0; k < ps[2]; ++k)
        for (int j = 0; j < ps[1]; ++j)
            for (int i = 0; i < ps[0]; ++i) {
                const int si = where.start[0] + i, sj = where.start[1] + j, sk = where.start[2] + k;
                if (where.source.in_bounds(si, sj, sk)) out[where.source.index(si, sj, sk)] = patch[where.patch.index(i, j, k)];
            }
    return out;
}

}  // namespace

BinaryMask paste_back(const BinaryMask& patch_mask, const Placement& where) {
    require_same_grid(patch_mask.grid, where.patch, "paste_back");
    return BinaryMask(where.source, paste_buffer(patch_mask.data, where));
}

InstanceMask paste_back(const InstanceMask& patch_mask, const Placement& where) {
    require_same_grid(patch_mask.grid, where.patch, "paste_back");
    return InstanceMask(where.source, paste_buffer(patch_mask.labels, where));
}

BinaryMask crop_like(const BinaryMask& source_mask, const Placement& where) {
    require_same_grid(source_mask.grid, where.source, "crop_like");
    BinaryMask out(where.patch);
    const auto& ps = where.patch.shape;
    for (int k = 0; k < ps[2]; ++k)
        for (int j = 0; j < ps[1]; ++j)
            for (int i = 0; i < ps[0]; ++i) {
                const int si = where.start[0] + i, sj = where.start[1] + j, sk = where.start[2] + k;
                if (where.source.in_bounds(si, sj, sk)) out.at(i, j, k) = source_mask.at(si, sj, sk);
            }
    return out;
}

}  // namespace lesiontrack
