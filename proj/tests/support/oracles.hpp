#pragma once

// Slow, obviously-correct reference implementations used to check the kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <vector>

#include "lesiontrack/field.hpp"

namespace oracle {

using namespace lesiontrack;

/// Dense 3D convolution with the product kernel and replicate edges.
inline std::vector<double> dense_blur(const Volume& v, const KernelSpec& k) {
    const GridRef& g = v.grid;
    std::array<std::vector<double>, 3> taps;
    for (int a = 0; a < 3; ++a) taps[a] = gaussian_taps(k.sigma[a] / g.spacing[a], k.truncation);
    std::array<int, 3> r{};
    for (int a = 0; a < 3; ++a) r[a] = static_cast<int>(taps[a].size() / 2);
    std::vector<double> out(g.size(), 0.0);
    for (int z = 0; z < g.shape[2]; ++z)
        for (int y = 0; y < g.shape[1]; ++y)
            for (int x = 0; x < g.shape[0]; ++x) {
                double acc = 0.0;
                for (int dz = -r[2]; dz <= r[2]; ++dz)
                    for (int dy = -r[1]; dy <= r[1]; ++dy)
                        for (int dx = -r[0]; dx <= r[0]; ++dx) {
                            const int sx = std::clamp(x + dx, 0, g.shape[0] - 1);
                            const int sy = std::clamp(y + dy, 0, g.shape[1] - 1);
                            const int sz = std::clamp(z + dz, 0, g.shape[2] - 1);
                            acc += taps[0][dx + r[0]] * taps[1][dy + r[1]] * taps[2][dz + r[2]] * v.at(sx, sy, sz);
                        }
                out[g.index(x, y, z)] = acc;
            }
    return out;
}

/// Breadth-first labelling in scan order.
inline std::vector<std::uint16_t> bfs_components(const BinaryMask& m, int connectivity) {
    const GridRef& g = m.grid;
    std::vector<std::uint16_t> lab(g.size(), 0);
    std::uint16_t next = 0;
    for (std::size_t s = 0; s < g.size(); ++s) {
        if (!m.data[s] || lab[s]) continue;
        lab[s] = ++next;
        std::deque<std::size_t> q{s};
        while (!q.empty()) {
            const auto p = g.unravel(q.front());
            q.pop_front();
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int n = std::abs(dx) + std::abs(dy) + std::abs(dz);
                        if (n == 0 || (connectivity == 6 && n > 1)) continue;
                        const int x = p[0] + dx, y = p[1] + dy, z = p[2] + dz;
                        if (!g.in_bounds(x, y, z)) continue;
                        const std::size_t i = g.index(x, y, z);
                        if (m.data[i] && !lab[i]) {
                            lab[i] = next;
                            q.push_back(i);
                        }
                    }
        }
    }
    return lab;
}

/// Distance (mm) from every voxel centre to the nearest foreground centre by exhaustive search.
inline std::vector<double> all_pairs_distance(const BinaryMask& m) {
    const GridRef& g = m.grid;
    std::vector<Vec3> fg;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (m.data[i]) {
            const auto p = g.unravel(i);
            fg.push_back(g.voxel_center(p[0], p[1], p[2]));
        }
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto p = g.unravel(i);
        const Vec3 c = g.voxel_center(p[0], p[1], p[2]);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& f : fg) best = std::min(best, (c - f).norm());
        out[i] = best;
    }
    return out;
}

inline double dice(const BinaryMask& a, const BinaryMask& b) {
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        na += a.data[i] != 0;
        nb += b.data[i] != 0;
        both += a.data[i] && b.data[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Surface voxel centres: foreground with a 6-neighbour in the background or off-grid.
inline std::vector<Vec3> surface_points(const BinaryMask& m) {
    const GridRef& g = m.grid;
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!m.data[i]) continue;
        const auto p = g.unravel(i);
        bool edge = false;
        for (int a = 0; a < 3 && !edge; ++a)
            for (int d : {-1, 1}) {
                auto q = p;
                q[a] += d;
                if (!g.in_bounds(q[0], q[1], q[2]) || !m.data[g.index(q[0], q[1], q[2])]) edge = true;
            }
        if (edge) out.push_back(g.voxel_center(p[0], p[1], p[2]));
    }
    return out;
}

inline double nsd(const BinaryMask& a, const BinaryMask& b, double tol) {
    const auto sa = surface_points(a), sb = surface_points(b);
    if (sa.empty() && sb.empty()) return 1.0;
    if (sa.empty() || sb.empty()) return 0.0;
    auto within = [&](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        std::size_t n = 0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, (p - q).norm());
            n += best <= tol;
        }
        return n;
    };
    return static_cast<double>(within(sa, sb) + within(sb, sa)) / static_cast<double>(sa.size() + sb.size());
}

struct Assignment {
    std::size_t pairs = 0;
    double total = 0.0;
    std::vector<int> pred_of_gt;  // -1 when unmatched
};

/// Exhaustive search over injective partial assignments: most pairs within the gate,
/// then smallest total distance.
inline Assignment best_assignment(const std::vector<Vec3>& gt, const std::vector<Vec3>& pred, double thr) {
    Assignment best;
    best.pred_of_gt.assign(gt.size(), -1);
    best.total = std::numeric_limits<double>::infinity();
    std::vector<int> cur(gt.size(), -1);
    std::vector<bool> used(pred.size(), false);
    auto rec = [&](auto&& self, std::size_t i, std::size_t pairs, double total) -> void {
        if (i == gt.size()) {
            if (pairs > best.pairs || (pairs == best.pairs && total < best.total - 1e-12)) {
                best.pairs = pairs;
                best.total = total;
                best.pred_of_gt = cur;
            }
            return;
        }
        cur[i] = -1;
        self(self, i + 1, pairs, total);
        for (std::size_t j = 0; j < pred.size(); ++j) {
            const double d = (gt[i] - pred[j]).norm();
            if (used[j] || d > thr) continue;
            used[j] = true;
            cur[i] = static_cast<int>(j);
            self(self, i + 1, pairs + 1, total + d);
            used[j] = false;
            cur[i] = -1;
        }
    };
    rec(rec, 0, 0, 0.0);
    if (best.pairs == 0) best.total = 0.0;
    return best;
}

/// Lattice points v with |v| <= r (voxel units) whose position c + v lies inside `g`.
inline std::size_t ball_count(const GridRef& g, const std::array<int, 3>& c, int r) {
    std::size_t n = 0;
    for (int z = -r; z <= r; ++z)
        for (int y = -r; y <= r; ++y)
            for (int x = -r; x <= r; ++x)
                if (x * x + y * y + z * z <= r * r && g.in_bounds(c[0] + x, c[1] + y, c[2] + z)) ++n;
    return n;
}

}  // namespace oracle
