#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

namespace lesiontrack {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
    constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }

    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

/// Componentwise product and quotient.
constexpr Vec3 hadamard(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
constexpr Vec3 divide(const Vec3& a, const Vec3& b) { return {a.x / b.x, a.y / b.y, a.z / b.z}; }

using Mat3 = std::array<std::array<double, 3>, 3>;

constexpr Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

using Point3 = Vec3;

/// Axis-aligned box in mm, min <= max componentwise.
struct Box3 {
    Vec3 min;
    Vec3 max;

    Vec3 center() const { return (min + max) * 0.5; }
    bool valid() const { return min.x <= max.x && min.y <= max.y && min.z <= max.z; }
    friend bool operator==(const Box3&, const Box3&) = default;
};

using Shape3 = std::array<int, 3>;

/// Grid metadata shared by volumes, masks, fields and prompt channels.
///
/// World position of voxel (i, j, k) is origin + (i, j, k) * spacing; there is
/// no direction matrix because loaders canonicalise axis-aligned orientations.
/// Storage order is x fastest.
struct GridRef {
    Shape3 shape{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};

    std::size_t size() const {
        return static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
               static_cast<std::size_t>(shape[2]);
    }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(shape[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(shape[1]) * static_cast<std::size_t>(k));
    }
    std::array<int, 3> unravel(std::size_t idx) const {
        const auto nx = static_cast<std::size_t>(shape[0]);
        const auto ny = static_cast<std::size_t>(shape[1]);
        return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
    }
    bool in_bounds(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < shape[0] && j < shape[1] && k < shape[2];
    }

    Vec3 to_voxel(const Vec3& mm) const { return divide(mm - origin, spacing); }
    Vec3 to_mm(const Vec3& voxel) const { return origin + hadamard(voxel, spacing); }
    Vec3 voxel_center(int i, int j, int k) const { return to_mm({double(i), double(j), double(k)}); }

    /// True when continuous voxel coordinates fall inside the voxel-footprint
    /// extent [-0.5, n - 0.5) on every axis.
    bool contains_voxel(const Vec3& v) const {
        for (int a = 0; a < 3; ++a)
            if (!(v[a] >= -0.5 && v[a] < shape[a] - 0.5)) return false;
        return true;
    }
    bool contains_mm(const Vec3& mm) const { return contains_voxel(to_voxel(mm)); }

    /// Physical extent shape * spacing.
    Vec3 extent_mm() const { return {shape[0] * spacing.x, shape[1] * spacing.y, shape[2] * spacing.z}; }
    Vec3 center_mm() const {
        return to_mm({(shape[0] - 1) * 0.5, (shape[1] - 1) * 0.5, (shape[2] - 1) * 0.5});
    }

    /// Throws InvalidArgument when shape or spacing are not positive.
    void validate() const;

    friend bool operator==(const GridRef&, const GridRef&) = default;
};

std::string to_string(const Vec3& v);
std::string to_string(const GridRef& g);

/// Throws GridMismatch with `what` in the message when grids differ.
void require_same_grid(const GridRef& a, const GridRef& b, const char* what);

/// Free-function spellings of the coordinate transforms.
inline Vec3 mm_to_voxel(const GridRef& g, const Vec3& mm) { return g.to_voxel(mm); }
inline Vec3 voxel_to_mm(const GridRef& g, const Vec3& voxel) { return g.to_mm(voxel); }

}  // namespace lesiontrack
