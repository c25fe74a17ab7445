#include <doctest.h>

#include <deque>

#include "../support/oracles.hpp"
#include "../support/test_util.hpp"
#include "lesiontrack/error.hpp"
#include "lesiontrack/field.hpp"
#include "lesiontrack/nifti.hpp"
#include "lesiontrack/rng.hpp"

using namespace lesiontrack;
using testutil::grid;

TEST_SUITE("field") {

TEST_CASE("gaussian blur matches the dense convolution oracle") {
    Rng rng(21);
    for (int c = 0; c < 20; ++c) {
        GridRef g = grid(rng.uniform_int(3, 9), rng.uniform_int(3, 9), rng.uniform_int(1, 9),
                         {rng.uniform(0.7, 1.5), rng.uniform(0.7, 1.5), rng.uniform(0.7, 1.5)});
        Volume v(g);
        for (auto& x : v.data) x = static_cast<float>(rng.normal());
        const KernelSpec k{{rng.uniform(0.0, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)}, 3.0};
        const Volume fast = gaussian_blur(v, k);
        const auto slow = oracle::dense_blur(v, k);
        double worst = 0.0;
        for (std::size_t i = 0; i < slow.size(); ++i) worst = std::max(worst, std::abs(fast.data[i] - slow[i]));
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("gaussian blur edge cases") {
    Volume v(grid(5, 5, 5));
    Rng rng(1);
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    CHECK(gaussian_blur(v, {{0, 0, 0}, 4}).data == v.data);

    const Volume c = gaussian_blur(Volume(grid(6, 5, 4), 2.5f), {{1.2, 0.8, 2.0}, 4});
    for (float x : c.data) CHECK(std::abs(x - 2.5f) < 1e-6);

    Volume impulse(grid(9, 9, 9));
    impulse.at(4, 4, 4) = 1.0f;
    const KernelSpec k{{1, 1, 1}, 4};
    const Volume b = gaussian_blur(impulse, k);
    const auto slow = oracle::dense_blur(impulse, k);
    double mass = 0.0;
    for (std::size_t i = 0; i < slow.size(); ++i) {
        CHECK(std::abs(b.data[i] - slow[i]) < 1e-5);
        mass += b.data[i];
    }
    CHECK(std::abs(mass - 1.0) < 1e-6);

    CHECK_THROWS_AS(gaussian_blur(v, {{-1, 0, 0}, 4}), InvalidArgument);
}

TEST_CASE("blur adjoint is the transpose") {
    Rng rng(8);
    const Shape3 s{5, 4, 6};
    const Vec3 sigma{0.9, 1.3, 0.6};
    std::vector<double> x(120), y(120);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    std::vector<double> ax = x, aty = y;
    gaussian_blur_inplace(ax, s, sigma);
    gaussian_blur_adjoint_inplace(aty, s, sigma);
    double l = 0, r = 0;
    for (int i = 0; i < 120; ++i) {
        l += ax[i] * y[i];
        r += x[i] * aty[i];
    }
    CHECK(l == doctest::Approx(r).epsilon(1e-12));
}

TEST_CASE("gradient") {
    const DisplacementField z = gradient(Volume(grid(4, 4, 4), 3.0f));
    CHECK(z.is_zero());

    GridRef g = grid(6, 5, 4, {0.5, 1, 1});
    Volume ramp(g);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 5; ++j)
            for (int i = 0; i < 6; ++i) ramp.at(i, j, k) = static_cast<float>(2.0 * g.voxel_center(i, j, k).x);
    const DisplacementField d = gradient(ramp);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(d.comp[0][i] == doctest::Approx(2.0).epsilon(1e-9));
        CHECK(d.comp[1][i] == 0.0);
        CHECK(d.comp[2][i] == 0.0);
    }

    GridRef h = grid(5, 3, 3, {2, 1, 1});
    Volume idx(h);
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 5; ++i) idx.at(i, j, k) = static_cast<float>(i);
    CHECK(gradient(idx).comp[0][h.index(2, 1, 1)] == doctest::Approx(0.5));
}

TEST_CASE("warp") {
    Rng rng(6);
    GridRef g = grid(7, 6, 5, {1.5, 1, 1});
    Volume v(g);
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    CHECK(warp(v, DisplacementField(g)).data == v.data);

    // u = -1 voxel along x: out(i) = v(i - 1)
    const Volume s = warp(v, constant_field(g, {-1.5, 0, 0}));
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 1; i < 7; ++i) CHECK(s.at(i, j, k) == v.at(i - 1, j, k));

    InstanceMask m(g);
    for (auto& l : m.labels) l = static_cast<std::uint16_t>(rng.uniform_int(0, 2) * 3);
    DisplacementField u(g);
    for (auto& c : u.comp)
        for (auto& x : c) x = rng.uniform(-3, 3);
    const InstanceMask w = warp(m, u);
    for (auto l : w.labels) CHECK((l == 0 || l == 3 || l == 6));
}

TEST_CASE("compose and jacobian") {
    GridRef g = grid(8, 8, 8);
    const Vec3 t{1.25, -0.5, 2.0};
    CHECK(compose(DisplacementField(g), DisplacementField(g)).is_zero());
    CHECK(compose(constant_field(g, -t), constant_field(g, t)).max_norm() < 1e-6);

    // u(x) = 0.1 x: phi(phi(x)) = 1.21 x, so w(x) = 0.21 x on interior voxels
    DisplacementField lin(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto p = g.unravel(i);
        lin.set(i, g.voxel_center(p[0], p[1], p[2]) * 0.1);
    }
    const DisplacementField w = compose(lin, lin);
    for (int k = 1; k < 6; ++k)
        for (int j = 1; j < 6; ++j)
            for (int i = 1; i < 6; ++i) {
                const Vec3 expect = g.voxel_center(i, j, k) * 0.21;
                const Vec3 got = w.at(g.index(i, j, k));
                for (int a = 0; a < 3; ++a) CHECK(std::abs(got[a] - expect[a]) < 1e-5);
            }

    for (const auto& J : jacobian(DisplacementField(g))) CHECK(J == identity3());
    for (const auto& J : jacobian(constant_field(g, t))) CHECK(J == identity3());
    DisplacementField scale(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto p = g.unravel(i);
        scale.set(i, g.voxel_center(p[0], p[1], p[2]) * 0.2);
    }
    const auto J = jacobian(scale);
    const Mat3 c = J[g.index(3, 4, 5)];
    for (int r = 0; r < 3; ++r)
        for (int q = 0; q < 3; ++q) CHECK(c[r][q] == doctest::Approx(r == q ? 1.2 : 0.0));
}

TEST_CASE("connected components") {
    GridRef g = grid(4, 4, 4);
    CHECK(connected_components(BinaryMask(g)).num_instances() == 0);

    BinaryMask diag(g);
    diag.at(0, 0, 0) = 1;
    diag.at(1, 1, 1) = 1;
    CHECK(connected_components(diag, 26).num_instances() == 1);
    CHECK(connected_components(diag, 6).num_instances() == 2);

    BinaryMask cube(g);
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 3; ++i) cube.at(i, j, k) = 1;
    const InstanceMask cc = connected_components(cube, 6);
    CHECK(cc.num_instances() == 1);
    CHECK(cc.count(1) == 27);

    CHECK_THROWS_AS(connected_components(cube, 18), InvalidArgument);

    Rng rng(12);
    for (int c = 0; c < 30; ++c) {
        GridRef r = grid(rng.uniform_int(1, 8), rng.uniform_int(1, 8), rng.uniform_int(1, 8));
        BinaryMask m(r);
        const double p = rng.uniform(0.1, 0.6);
        for (auto& x : m.data) x = rng.bernoulli(p) ? 1 : 0;
        for (int conn : {6, 26}) {
            const auto got = connected_components(m, conn);
            const auto expect = oracle::bfs_components(m, conn);
            CHECK(got.labels == expect);
        }
    }
}

TEST_CASE("distance transform") {
    GridRef g = grid(5, 5, 5);
    BinaryMask all(g);
    std::fill(all.data.begin(), all.data.end(), 1);
    for (double d : distance_transform(all)) CHECK(d == 0.0);

    GridRef h = grid(8, 8, 3);
    BinaryMask one(h);
    one.at(1, 1, 1) = 1;
    CHECK(distance_transform(one)[h.index(4, 5, 1)] == doctest::Approx(5.0).epsilon(1e-15));

    GridRef an = grid(4, 3, 3, {2, 1, 1});
    BinaryMask two(an);
    two.at(1, 1, 1) = 1;
    CHECK(distance_transform(two)[an.index(2, 1, 1)] == 2.0);

    CHECK_THROWS_AS(distance_transform(BinaryMask(g)), DegenerateInput);

    Rng rng(14);
    for (int c = 0; c < 30; ++c) {
        GridRef r = grid(rng.uniform_int(1, 8), rng.uniform_int(1, 8), rng.uniform_int(1, 8),
                         {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)});
        BinaryMask m(r);
        for (auto& x : m.data) x = rng.bernoulli(0.15) ? 1 : 0;
        m.data[rng.uniform_int(0, static_cast<int>(r.size()) - 1)] = 1;
        const auto got = distance_transform(m);
        const auto expect = oracle::all_pairs_distance(m);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - expect[i]) < 1e-9);
    }
}

TEST_CASE("centroid") {
    GridRef g = grid(5, 5, 5);
    InstanceMask m(g);
    m.at(2, 2, 2) = 1;
    CHECK(centroid(m, 1) == Vec3{2, 2, 2});
    m.at(0, 0, 0) = 2;
    m.at(4, 0, 0) = 2;
    CHECK(centroid(m, 2).x == 2.0);

    GridRef s = grid(21, 21, 21, {1, 1, 1}, {-3, 4, 1});
    InstanceMask ball(s);
    const Vec3 c = s.voxel_center(10, 10, 10);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto p = s.unravel(i);
        if ((s.voxel_center(p[0], p[1], p[2]) - c).norm() <= 6.0) ball.labels[i] = 1;
    }
    CHECK((centroid(ball, 1) - c).norm() < 0.5);
}

TEST_CASE("field sidecar round trip") {
    const auto dir = testutil::scratch_dir("field_io");
    GridRef g = grid(5, 4, 3, {0.8, 0.8, 1.0}, {1, 2, 3});
    Rng rng(3);
    DisplacementField u(g);
    for (auto& c : u.comp)
        for (auto& x : c) x = static_cast<float>(rng.normal());
    save_field(u, dir / "u.json");
    const DisplacementField back = load_field(dir / "u.json");
    CHECK(back.grid.shape == g.shape);
    for (int a = 0; a < 3; ++a) CHECK(back.comp[a] == u.comp[a]);
}

}
