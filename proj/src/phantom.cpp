#include "lesiontrack/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "lesiontrack/error.hpp"

namespace lesiontrack {

namespace {

constexpr double kBodyFraction = 0.42;  // body semi-axes as a fraction of the extent
constexpr int kMaxPlacementTries = 200;
constexpr int kMaxRestarts = 50;

struct Ellipsoid {
    Vec3 center;
    Vec3 semi;
};

bool inside(const Ellipsoid& e, const Vec3& p) {
    const Vec3 d = divide(p - e.center, e.semi);
    return d.x * d.x + d.y * d.y + d.z * d.z <= 1.0;
}

}  // namespace

void PhantomSpec::validate() const {
    GridRef g{shape, spacing, origin};
    g.validate();
    if (lesions < 0) throw InvalidArgument("phantom: lesion count must be >= 0");
    if (lesions > 1000) throw InvalidArgument("phantom: at most 1000 lesions");
    if (!(radius_mm.lo > 0.0) || radius_mm.hi < radius_mm.lo)
        throw InvalidArgument("phantom: lesion radius range must be positive and ordered");
    if (!(noise_std >= 0.0) || !(texture >= 0.0)) throw InvalidArgument("phantom: noise and texture must be >= 0");
    if (lesions > 0) {
        const Vec3 ext = g.extent_mm();
        const double body = kBodyFraction * std::min({ext.x, ext.y, ext.z});
        // largest lesion (with shape jitter 1.2) must fit inside the body with a margin
        if (1.2 * radius_mm.hi >= 0.8 * body)
            throw InvalidArgument("phantom: lesion radius " + std::to_string(radius_mm.hi) +
                                  " mm does not fit the volume (body semi-axis " + std::to_string(body) + " mm)");
    }
}

Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    const GridRef g{spec.shape, spec.spacing, spec.origin};
    const Rng root(spec.seed);
    const Vec3 ext = g.extent_mm();
    const Ellipsoid body{g.center_mm(), ext * kBodyFraction};

    std::vector<double> texture(g.size(), 0.0);
    if (spec.texture > 0.0) {
        Rng r = root.stream({0, 0, 1});
        for (auto& v : texture) v = r.normal();
        gaussian_blur_inplace(texture, g.shape, divide(Vec3{3.0, 3.0, 3.0}, g.spacing));
        double peak = 0.0;
        for (double v : texture) peak = std::max(peak, std::abs(v));
        if (peak > 0.0)
            for (auto& v : texture) v *= spec.texture / peak;
    }

    // Sequential rejection sampling; an early lesion can leave no room for later ones,
    // so the whole layout is redrawn when one of them cannot be placed.
    std::vector<Ellipsoid> placed;
    Rng r = root.stream({0, 0, 2});
    bool done = spec.lesions == 0;
    for (int restart = 0; restart < kMaxRestarts && !done; ++restart) {
        placed.clear();
        for (int n = 0; n < spec.lesions; ++n) {
            bool ok = false;
            for (int attempt = 0; attempt < kMaxPlacementTries && !ok; ++attempt) {
                const double radius = r.uniform(spec.radius_mm.lo, spec.radius_mm.hi);
                Ellipsoid e;
                for (int a = 0; a < 3; ++a) e.semi[a] = radius * r.uniform(0.8, 1.2);
                const double reach = std::max({e.semi.x, e.semi.y, e.semi.z});
                for (int a = 0; a < 3; ++a) {
                    const double room = body.semi[a] - reach - 2.0;
                    e.center[a] = body.center[a] + (room > 0.0 ? r.uniform(-room, room) : 0.0);
                }
                // the whole lesion inside the body
                const Vec3 d = divide(e.center - body.center, body.semi - Vec3{reach, reach, reach});
                if (d.x * d.x + d.y * d.y + d.z * d.z > 1.0) continue;
                ok = std::all_of(placed.begin(), placed.end(), [&](const Ellipsoid& o) {
                    const double ro = std::max({o.semi.x, o.semi.y, o.semi.z});
                    return distance(o.center, e.center) > reach + ro + 3.0;
                });
                if (ok) placed.push_back(e);
            }
            if (!ok) break;
        }
        done = static_cast<int>(placed.size()) == spec.lesions;
    }
    if (!done) throw InvalidArgument("phantom: could not place " + std::to_string(spec.lesions) + " non-overlapping lesions");

    Phantom out{Volume(g), InstanceMask(g)};
    Rng noise = root.stream({0, 0, 3});
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const Vec3 p = g.voxel_center(i, j, k);
                double v = -1.0;
                if (inside(body, p)) v = texture[idx];
                for (std::size_t n = 0; n < placed.size(); ++n)
                    if (inside(placed[n], p)) {
                        out.mask.labels[idx] = static_cast<std::uint16_t>(n + 1);
                        v = spec.contrast + 0.3 * texture[idx];
                    }
                if (spec.noise_std > 0.0) v += spec.noise_std * noise.normal();
                out.image.data[idx] = static_cast<float>(v);
            }
    return out;
}

Phantom sphere_phantom(const GridRef& g, const Vec3& center_mm, double radius_mm, float contrast) {
    g.validate();
    Phantom out{Volume(g), InstanceMask(g)};
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i)
                if (distance(g.voxel_center(i, j, k), center_mm) <= radius_mm) {
                    out.mask.at(i, j, k) = 1;
                    out.image.at(i, j, k) = contrast;
                }
    return out;
}

}  // namespace lesiontrack
