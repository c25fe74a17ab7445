#pragma once

// Trilinear / nearest samplers over raw x-fastest buffers, in continuous voxel
// coordinates. Shared by the field kernels and the registration adjoints.

#include <array>
#include <cmath>
#include <cstddef>

#include "lesiontrack/geometry.hpp"

namespace lesiontrack::detail {

/// Cell lookup for replicate-edge sampling: coordinate clamped to [0, n-1].
/// `inside` is false when the coordinate was clamped (derivative is zero there).
struct ClampedAxis {
    int i0;
    int i1;
    double f;
    bool inside;
};

inline ClampedAxis clamp_axis(double c, int n) {
    if (n == 1) return {0, 0, 0.0, false};
    bool inside = true;
    if (c <= 0.0) {
        inside = c == 0.0;
        c = 0.0;
    } else if (c >= n - 1) {
        inside = c == n - 1;
        c = n - 1;
    }
    int i0 = static_cast<int>(std::floor(c));
    if (i0 > n - 2) i0 = n - 2;
    return {i0, i0 + 1, c - i0, inside};
}

inline std::size_t flat(const Shape3& s, int i, int j, int k) {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(s[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(s[1]) * k);
}

/// Trilinear value with replicate-edge boundary.
template <class T>
double sample_clamped(const T* data, const Shape3& s, const Vec3& c) {
    const auto ax = clamp_axis(c.x, s[0]);
    const auto ay = clamp_axis(c.y, s[1]);
    const auto az = clamp_axis(c.z, s[2]);
    const double fx = ax.f, fy = ay.f, fz = az.f;
    auto v = [&](int i, int j, int k) { return static_cast<double>(data[flat(s, i, j, k)]); };
    const double c00 = v(ax.i0, ay.i0, az.i0) * (1 - fx) + v(ax.i1, ay.i0, az.i0) * fx;
    const double c10 = v(ax.i0, ay.i1, az.i0) * (1 - fx) + v(ax.i1, ay.i1, az.i0) * fx;
    const double c01 = v(ax.i0, ay.i0, az.i1) * (1 - fx) + v(ax.i1, ay.i0, az.i1) * fx;
    const double c11 = v(ax.i0, ay.i1, az.i1) * (1 - fx) + v(ax.i1, ay.i1, az.i1) * fx;
    const double c0 = c00 * (1 - fy) + c10 * fy;
    const double c1 = c01 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

/// Eight trilinear corners with their weights; out-of-grid corners flagged.
struct Stencil {
    std::array<std::size_t, 8> idx{};
    std::array<double, 8> w{};
    std::array<bool, 8> valid{};
    // d(weight)/d(coordinate) per axis
    std::array<std::array<double, 8>, 3> dw{};
};

/// Stencil for constant-fill boundary (corners outside the grid read `fill`).
inline Stencil fill_stencil(const Shape3& s, const Vec3& c) {
    Stencil st;
    const int x0 = static_cast<int>(std::floor(c.x));
    const int y0 = static_cast<int>(std::floor(c.y));
    const int z0 = static_cast<int>(std::floor(c.z));
    const double fx = c.x - x0, fy = c.y - y0, fz = c.z - z0;
    int n = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++n) {
                const int i = x0 + dx, j = y0 + dy, k = z0 + dz;
                const double wx = dx ? fx : 1 - fx;
                const double wy = dy ? fy : 1 - fy;
                const double wz = dz ? fz : 1 - fz;
                st.w[n] = wx * wy * wz;
                st.dw[0][n] = (dx ? 1.0 : -1.0) * wy * wz;
                st.dw[1][n] = wx * (dy ? 1.0 : -1.0) * wz;
                st.dw[2][n] = wx * wy * (dz ? 1.0 : -1.0);
                st.valid[n] = i >= 0 && j >= 0 && k >= 0 && i < s[0] && j < s[1] && k < s[2];
                st.idx[n] = st.valid[n] ? flat(s, i, j, k) : 0;
            }
    return st;
}

/// Stencil for replicate-edge boundary; derivative weights are zeroed on clamped axes.
inline Stencil clamped_stencil(const Shape3& s, const Vec3& c) {
    Stencil st;
    const auto ax = clamp_axis(c.x, s[0]);
    const auto ay = clamp_axis(c.y, s[1]);
    const auto az = clamp_axis(c.z, s[2]);
    int n = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++n) {
                const double wx = dx ? ax.f : 1 - ax.f;
                const double wy = dy ? ay.f : 1 - ay.f;
                const double wz = dz ? az.f : 1 - az.f;
                st.w[n] = wx * wy * wz;
                st.dw[0][n] = ax.inside ? (dx ? 1.0 : -1.0) * wy * wz : 0.0;
                st.dw[1][n] = ay.inside ? wx * (dy ? 1.0 : -1.0) * wz : 0.0;
                st.dw[2][n] = az.inside ? wx * wy * (dz ? 1.0 : -1.0) : 0.0;
                st.valid[n] = true;
                st.idx[n] = flat(s, dx ? ax.i1 : ax.i0, dy ? ay.i1 : ay.i0, dz ? az.i1 : az.i0);
            }
    return st;
}

/// Trilinear value where out-of-grid corners contribute `fill`.
template <class T>
double sample_fill(const T* data, const Shape3& s, const Vec3& c, double fill) {
    // fast path for the common fully-inside case
    const int x0 = static_cast<int>(std::floor(c.x));
    const int y0 = static_cast<int>(std::floor(c.y));
    const int z0 = static_cast<int>(std::floor(c.z));
    if (x0 >= 0 && y0 >= 0 && z0 >= 0 && x0 + 1 < s[0] && y0 + 1 < s[1] && z0 + 1 < s[2]) {
        const double fx = c.x - x0, fy = c.y - y0, fz = c.z - z0;
        const std::size_t b = flat(s, x0, y0, z0);
        const std::size_t sy = static_cast<std::size_t>(s[0]);
        const std::size_t sz = sy * static_cast<std::size_t>(s[1]);
        auto v = [&](std::size_t o) { return static_cast<double>(data[b + o]); };
        const double c00 = v(0) * (1 - fx) + v(1) * fx;
        const double c10 = v(sy) * (1 - fx) + v(sy + 1) * fx;
        const double c01 = v(sz) * (1 - fx) + v(sz + 1) * fx;
        const double c11 = v(sz + sy) * (1 - fx) + v(sz + sy + 1) * fx;
        return (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz;
    }
    const Stencil st = fill_stencil(s, c);
    double acc = 0.0;
    for (int n = 0; n < 8; ++n) acc += st.w[n] * (st.valid[n] ? static_cast<double>(data[st.idx[n]]) : fill);
    return acc;
}

/// Nearest-neighbour index, or -1 when outside the voxel footprint of the grid.
inline long long nearest_index(const Shape3& s, const Vec3& c) {
    const int i = static_cast<int>(std::floor(c.x + 0.5));
    const int j = static_cast<int>(std::floor(c.y + 0.5));
    const int k = static_cast<int>(std::floor(c.z + 0.5));
    if (i < 0 || j < 0 || k < 0 || i >= s[0] || j >= s[1] || k >= s[2]) return -1;
    return static_cast<long long>(flat(s, i, j, k));
}

/// Nearest-neighbour index with replicate-edge clamping.
inline std::size_t nearest_index_clamped(const Shape3& s, const Vec3& c) {
    auto cl = [](double v, int n) {
        int i = static_cast<int>(std::floor(v + 0.5));
        return i < 0 ? 0 : (i >= n ? n - 1 : i);
    };
    return flat(s, cl(c.x, s[0]), cl(c.y, s[1]), cl(c.z, s[2]));
}

}  // namespace lesiontrack::detail
