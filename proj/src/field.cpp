#include "lesiontrack/field.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "lesiontrack/error.hpp"
#include "lesiontrack/nifti.hpp"
#include "lesiontrack/parallel.hpp"
#include "sampling.hpp"

namespace lesiontrack {

// ---------------------------------------------------------------------------
// DisplacementField

DisplacementField::DisplacementField(const GridRef& g) : grid(g) {
    grid.validate();
    for (auto& c : comp) c.assign(g.size(), 0.0);
}

bool DisplacementField::is_zero() const {
    for (const auto& c : comp)
        for (double v : c)
            if (v != 0.0) return false;
    return true;
}

double DisplacementField::max_norm() const {
    double m = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) m = std::max(m, at(i).norm());
    return m;
}

double DisplacementField::mean_norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) s += at(i).norm();
    return grid.size() ? s / static_cast<double>(grid.size()) : 0.0;
}

Vec3 DisplacementField::sample_mm(const Vec3& mm) const {
    const Vec3 c = grid.to_voxel(mm);
    return {detail::sample_clamped(comp[0].data(), grid.shape, c), detail::sample_clamped(comp[1].data(), grid.shape, c),
            detail::sample_clamped(comp[2].data(), grid.shape, c)};
}

DisplacementField constant_field(const GridRef& g, const Vec3& u) {
    DisplacementField f(g);
    for (int a = 0; a < 3; ++a) std::fill(f.comp[a].begin(), f.comp[a].end(), u[a]);
    return f;
}

DisplacementField negated(const DisplacementField& u) {
    DisplacementField out = u;
    for (auto& c : out.comp)
        for (auto& v : c) v = -v;
    return out;
}

DisplacementField resample_to(const DisplacementField& u, const GridRef& target) {
    target.validate();
    if (target == u.grid) return u;
    DisplacementField out(target);
    parallel_for(0, target.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k)
            for (int j = 0; j < target.shape[1]; ++j)
                for (int i = 0; i < target.shape[0]; ++i) out.set(target.index(i, j, k), u.sample_mm(target.voxel_center(i, j, k)));
    });
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian smoothing

std::vector<double> gaussian_taps(double sigma_vox, double truncation) {
    if (!(sigma_vox > 0.0)) return {1.0};
    const int radius = std::max(1, static_cast<int>(std::ceil(truncation * sigma_vox)));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        const double w = std::exp(-0.5 * (t * t) / (sigma_vox * sigma_vox));
        taps[static_cast<std::size_t>(t + radius)] = w;
        sum += w;
    }
    for (auto& w : taps) w /= sum;
    return taps;
}

namespace {

/// One axis of the separable convolution; `adjoint` applies the transpose.
void convolve_axis(std::span<double> data, const Shape3& s, int axis, const std::vector<double>& taps, bool adjoint) {
    const int n = s[axis];
    if (n == 1 || taps.size() == 1) return;
    const int radius = static_cast<int>(taps.size() / 2);
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(s[0]) : static_cast<std::size_t>(s[0]) * s[1]);
    // lines are enumerated by the two remaining axes
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    const int lines_outer = s[a2];
    parallel_for(0, lines_outer, [&](int o0, int o1) {
        std::vector<double> in(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
        for (int o = o0; o < o1; ++o)
            for (int l = 0; l < s[a1]; ++l) {
                std::array<int, 3> start{0, 0, 0};
                start[a1] = l;
                start[a2] = o;
                const std::size_t base = detail::flat(s, start[0], start[1], start[2]);
                for (int i = 0; i < n; ++i) in[i] = data[base + i * stride];
                std::fill(out.begin(), out.end(), 0.0);
                for (int i = 0; i < n; ++i) {
                    for (int t = -radius; t <= radius; ++t) {
                        const int src = std::clamp(i + t, 0, n - 1);
                        const double w = taps[static_cast<std::size_t>(t + radius)];
                        if (adjoint)
                            out[src] += w * in[i];
                        else
                            out[i] += w * in[src];
                    }
                }
                for (int i = 0; i < n; ++i) data[base + i * stride] = out[i];
            }
    });
}

}  // namespace

void gaussian_blur_inplace(std::span<double> data, const Shape3& shape, const Vec3& sigma_vox, double truncation) {
    for (int a = 0; a < 3; ++a) convolve_axis(data, shape, a, gaussian_taps(sigma_vox[a], truncation), false);
}

void gaussian_blur_adjoint_inplace(std::span<double> data, const Shape3& shape, const Vec3& sigma_vox, double truncation) {
    for (int a = 2; a >= 0; --a) convolve_axis(data, shape, a, gaussian_taps(sigma_vox[a], truncation), true);
}

Volume gaussian_blur(const Volume& v, const KernelSpec& k) {
    for (int a = 0; a < 3; ++a)
        if (k.sigma[a] < 0.0) throw InvalidArgument("gaussian_blur: sigma must be non-negative");
    if (k.sigma == Vec3{}) return v;
    std::vector<double> buf(v.data.begin(), v.data.end());
    gaussian_blur_inplace(buf, v.grid.shape, divide(k.sigma, v.grid.spacing), k.truncation);
    Volume out;
    out.grid = v.grid;
    out.data.resize(buf.size());
    std::transform(buf.begin(), buf.end(), out.data.begin(), [](double x) { return static_cast<float>(x); });
    return out;
}

// ---------------------------------------------------------------------------
// finite differences

namespace {

/// d(data)/d(axis) at voxel (i,j,k), per mm. Central inside, one-sided at the border.
template <class T>
double diff_axis(const T* data, const GridRef& g, int i, int j, int k, int axis) {
    const int n = g.shape[axis];
    if (n < 2) return 0.0;
    std::array<int, 3> p{i, j, k};
    const int c = p[axis];
    std::array<int, 3> lo = p, hi = p;
    double h = g.spacing[axis];
    if (c == 0) {
        hi[axis] = 1;
    } else if (c == n - 1) {
        lo[axis] = n - 2;
    } else {
        lo[axis] = c - 1;
        hi[axis] = c + 1;
        h *= 2.0;
    }
    return (static_cast<double>(data[g.index(hi[0], hi[1], hi[2])]) - static_cast<double>(data[g.index(lo[0], lo[1], lo[2])])) / h;
}

}  // namespace

DisplacementField gradient(const Volume& v) {
    DisplacementField out(v.grid);
    const auto& g = v.grid;
    parallel_for(0, g.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k)
            for (int j = 0; j < g.shape[1]; ++j)
                for (int i = 0; i < g.shape[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    for (int a = 0; a < 3; ++a) out.comp[a][idx] = diff_axis(v.data.data(), g, i, j, k, a);
                }
    });
    return out;
}

std::vector<Mat3> jacobian(const DisplacementField& u) {
    const auto& g = u.grid;
    std::vector<Mat3> out(g.size());
    parallel_for(0, g.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k)
            for (int j = 0; j < g.shape[1]; ++j)
                for (int i = 0; i < g.shape[0]; ++i) {
                    Mat3 m = identity3();
                    for (int r = 0; r < 3; ++r)
                        for (int c = 0; c < 3; ++c) m[r][c] += diff_axis(u.comp[r].data(), g, i, j, k, c);
                    out[g.index(i, j, k)] = m;
                }
    });
    return out;
}

// ---------------------------------------------------------------------------
// warping and composition

namespace {

/// Calls fn(out_index, source_voxel_coordinate) for every output voxel.
template <class Fn>
void for_each_sample(const GridRef& src, const DisplacementField& u, Fn&& fn) {
    const GridRef& g = u.grid;
    const bool same = src == g;
    parallel_for(0, g.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k)
            for (int j = 0; j < g.shape[1]; ++j)
                for (int i = 0; i < g.shape[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    const Vec3 d = u.at(idx);
                    Vec3 c;
                    if (same)
                        c = {i + d.x / g.spacing.x, j + d.y / g.spacing.y, k + d.z / g.spacing.z};
                    else
                        c = src.to_voxel(g.voxel_center(i, j, k) + d);
                    fn(idx, c);
                }
    });
}

}  // namespace

Volume warp(const Volume& v, const DisplacementField& u, Interp mode) {
    Volume out(u.grid);
    const double fill = v.min_value();
    const auto* d = v.data.data();
    const auto& s = v.grid.shape;
    for_each_sample(v.grid, u, [&](std::size_t idx, const Vec3& c) {
        if (mode == Interp::Linear) {
            out.data[idx] = static_cast<float>(detail::sample_fill(d, s, c, fill));
        } else {
            const long long n = detail::nearest_index(s, c);
            out.data[idx] = n < 0 ? static_cast<float>(fill) : d[n];
        }
    });
    return out;
}

InstanceMask warp(const InstanceMask& m, const DisplacementField& u) {
    InstanceMask out(u.grid);
    const auto* d = m.labels.data();
    const auto& s = m.grid.shape;
    for_each_sample(m.grid, u, [&](std::size_t idx, const Vec3& c) {
        const long long n = detail::nearest_index(s, c);
        out.labels[idx] = n < 0 ? std::uint16_t{0} : d[n];
    });
    return out;
}

BinaryMask warp(const BinaryMask& m, const DisplacementField& u) {
    BinaryMask out(u.grid);
    const auto* d = m.data.data();
    const auto& s = m.grid.shape;
    for_each_sample(m.grid, u, [&](std::size_t idx, const Vec3& c) {
        const long long n = detail::nearest_index(s, c);
        out.data[idx] = n < 0 ? std::uint8_t{0} : d[n];
    });
    return out;
}

DisplacementField compose(const DisplacementField& u_ab, const DisplacementField& u_ba) {
    DisplacementField out(u_ba.grid);
    const auto& s = u_ab.grid.shape;
    for_each_sample(u_ab.grid, u_ba, [&](std::size_t idx, const Vec3& c) {
        for (int a = 0; a < 3; ++a) out.comp[a][idx] = u_ba.comp[a][idx] + detail::sample_clamped(u_ab.comp[a].data(), s, c);
    });
    return out;
}

// ---------------------------------------------------------------------------
// connected components

InstanceMask connected_components(const BinaryMask& m, int connectivity) {
    if (connectivity != 6 && connectivity != 26) throw InvalidArgument("connectivity must be 6 or 26");
    const auto& g = m.grid;
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (connectivity == 6 && manhattan != 1) continue;
                offsets.push_back({dx, dy, dz});
            }
    InstanceMask out(g);
    std::deque<std::size_t> queue;
    int next = 0;
    for (std::size_t seed = 0; seed < g.size(); ++seed) {
        if (!m.data[seed] || out.labels[seed]) continue;
        if (++next > 65535) throw InvalidArgument("connected_components: more than 65535 components");
        const auto label = static_cast<std::uint16_t>(next);
        out.labels[seed] = label;
        queue.push_back(seed);
        while (!queue.empty()) {
            const auto p = g.unravel(queue.front());
            queue.pop_front();
            for (const auto& o : offsets) {
                const int i = p[0] + o[0], j = p[1] + o[1], k = p[2] + o[2];
                if (!g.in_bounds(i, j, k)) continue;
                const std::size_t q = g.index(i, j, k);
                if (m.data[q] && !out.labels[q]) {
                    out.labels[q] = label;
                    queue.push_back(q);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Euclidean distance transform (separable lower-envelope of parabolas)

namespace {

/// In-place 1D squared-distance transform of `f` with sample spacing h.
void edt_1d(std::vector<double>& f, double h, std::vector<int>& v, std::vector<double>& z, std::vector<double>& out) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        const double xq = q * h;
        while (k >= 0) {
            const double xv = v[k] * h;
            const double s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -inf : ((f[q] + xq * xq) - (f[v[k - 1]] + (v[k - 1] * h) * (v[k - 1] * h))) / (2.0 * (xq - v[k - 1] * h));
        z[k + 1] = inf;
    }
    if (k < 0) return;  // all infinite: leave as is
    int j = 0;
    for (int q = 0; q < n; ++q) {
        const double xq = q * h;
        while (z[j + 1] < xq) ++j;
        const double d = xq - v[j] * h;
        out[q] = d * d + f[v[j]];
    }
    for (int q = 0; q < n; ++q) f[q] = out[q];
}

}  // namespace

std::vector<double> distance_transform(const BinaryMask& m) {
    const auto& g = m.grid;
    if (m.empty()) throw DegenerateInput("distance_transform: empty mask");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(g.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.data[i] ? 0.0 : inf;
    const auto& s = g.shape;
    for (int axis = 0; axis < 3; ++axis) {
        const int n = s[axis];
        const int a1 = axis == 0 ? 1 : 0;
        const int a2 = axis == 2 ? 1 : 2;
        const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(s[0]) : static_cast<std::size_t>(s[0]) * s[1]);
        parallel_for(0, s[a2], [&](int o0, int o1) {
            std::vector<double> f(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n)), z(static_cast<std::size_t>(n) + 1);
            std::vector<int> v(static_cast<std::size_t>(n));
            for (int o = o0; o < o1; ++o)
                for (int l = 0; l < s[a1]; ++l) {
                    std::array<int, 3> start{0, 0, 0};
                    start[a1] = l;
                    start[a2] = o;
                    const std::size_t base = detail::flat(s, start[0], start[1], start[2]);
                    for (int i = 0; i < n; ++i) f[i] = d[base + i * stride];
                    edt_1d(f, g.spacing[axis], v, z, out);
                    for (int i = 0; i < n; ++i) d[base + i * stride] = f[i];
                }
        });
    }
    for (auto& x : d) x = std::sqrt(x);
    return d;
}

// ---------------------------------------------------------------------------
// centroids

namespace {

template <class Pred>
Point3 centroid_where(const GridRef& g, Pred&& member, const char* what) {
    double sx = 0, sy = 0, sz = 0;
    std::size_t n = 0;
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i)
                if (member(g.index(i, j, k))) {
                    sx += i;
                    sy += j;
                    sz += k;
                    ++n;
                }
    if (n == 0) throw InvalidArgument(std::string("centroid: ") + what);
    const double inv = 1.0 / static_cast<double>(n);
    return g.to_mm({sx * inv, sy * inv, sz * inv});
}

}  // namespace

Point3 centroid(const InstanceMask& m, std::uint16_t label) {
    if (label == 0) throw InvalidArgument("centroid: label 0 is background");
    return centroid_where(m.grid, [&](std::size_t i) { return m.labels[i] == label; },
                          ("label " + std::to_string(label) + " is absent").c_str());
}

Point3 centroid(const BinaryMask& m) {
    return centroid_where(m.grid, [&](std::size_t i) { return m.data[i] != 0; }, "mask is empty");
}

// ---------------------------------------------------------------------------
// field sidecar I/O

namespace {

std::string component_name(const std::filesystem::path& sidecar, const char* suffix) {
    return sidecar.stem().string() + suffix + ".nii.gz";
}

nlohmann::json grid_json(const GridRef& g) {
    return {{"shape", {g.shape[0], g.shape[1], g.shape[2]}},
            {"spacing", {g.spacing.x, g.spacing.y, g.spacing.z}},
            {"origin", {g.origin.x, g.origin.y, g.origin.z}}};
}

}  // namespace

void save_field(const DisplacementField& u, const std::filesystem::path& sidecar_json) {
    constexpr std::array<const char*, 3> suffix{"_dx", "_dy", "_dz"};
    nlohmann::json j;
    j["format"] = "lesiontrack-displacement-field";
    j["version"] = 1;
    j["units"] = "mm";
    j["convention"] = "phi(x) = x + u(x)";
    j["grid"] = grid_json(u.grid);
    const auto dir = sidecar_json.parent_path();
    for (int a = 0; a < 3; ++a) {
        Volume v(u.grid);
        for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(u.comp[a][i]);
        const auto name = component_name(sidecar_json, suffix[a]);
        save_nifti(v, dir / name);
        j["components"][std::string(suffix[a] + 1)] = name;
    }
    std::ofstream out(sidecar_json);
    if (!out) throw IoError("cannot write " + sidecar_json.string());
    out << j.dump(2) << "\n";
}

DisplacementField load_field(const std::filesystem::path& sidecar_json) {
    std::ifstream in(sidecar_json);
    if (!in) throw IoError("cannot open " + sidecar_json.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(sidecar_json.string() + ": " + e.what());
    }
    if (j.value("format", "") != "lesiontrack-displacement-field")
        throw FormatError(sidecar_json.string() + ": not a displacement field sidecar");
    const auto dir = sidecar_json.parent_path();
    DisplacementField u;
    constexpr std::array<const char*, 3> keys{"dx", "dy", "dz"};
    for (int a = 0; a < 3; ++a) {
        const Volume v = load_volume(dir / j.at("components").at(keys[a]).get<std::string>());
        if (a == 0)
            u = DisplacementField(v.grid);
        else
            require_same_grid(u.grid, v.grid, "load_field");
        for (std::size_t i = 0; i < v.data.size(); ++i) u.comp[a][i] = v.data[i];
    }
    return u;
}

}  // namespace lesiontrack
