#include <doctest.h>

#include "../support/test_util.hpp"
#include "lesiontrack/error.hpp"
#include "lesiontrack/phantom.hpp"
#include "lesiontrack/registration.hpp"
#include "lesiontrack/rng.hpp"

using namespace lesiontrack;
using testutil::grid;

namespace {

Volume smooth_random(const GridRef& g, Rng& rng) {
    Volume v(g);
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    return gaussian_blur(v, {{1, 1, 1}, 4});
}

DisplacementField random_field(const GridRef& g, Rng& rng, double scale) {
    DisplacementField u(g);
    for (auto& c : u.comp)
        for (auto& x : c) x = scale * rng.normal();
    return u;
}

Volume blob(const GridRef& g, const Vec3& c) {
    Volume v(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto p = g.unravel(i);
        const Vec3 x = g.voxel_center(p[0], p[1], p[2]);
        const Vec3 d1 = x - c, d2 = x - c - Vec3{5, 2, 0};
        v.data[i] = static_cast<float>(std::exp(-d1.norm() * d1.norm() / 18.0) +
                                       0.5 * std::exp(-d2.norm() * d2.norm() / 8.0));
    }
    return v;
}

}  // namespace

TEST_SUITE("registration") {

TEST_CASE("ncc") {
    Rng rng(1);
    const Volume a = smooth_random(grid(6, 6, 6), rng);
    CHECK(ncc(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    Volume flip = a, affine = a;
    double mean = 0;
    for (float x : a.data) mean += x;
    mean /= a.data.size();
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        flip.data[i] = static_cast<float>(-(a.data[i] - mean) + mean);
        affine.data[i] = 2.0f * a.data[i] + 3.0f;
    }
    CHECK(ncc(a, flip) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(std::abs(ncc(a, affine) - 1.0) < 1e-6);
    CHECK_THROWS_AS(ncc(a, Volume(a.grid, 1.0f)), DegenerateInput);
}

TEST_CASE("gradicon penalty") {
    GridRef g = grid(9, 9, 9);
    CHECK(gradicon_penalty(DisplacementField(g), DisplacementField(g)) == 0.0);
    const Vec3 t{1.5, -0.25, 0.75};
    CHECK(gradicon_penalty(constant_field(g, t), constant_field(g, -t)) < 1e-10);
    CHECK(gradicon_penalty(constant_field(g, -t), constant_field(g, t)) < 1e-10);

    // both maps scale by 1.1: the composition scales by 1.21, residual 3 * 0.21^2
    DisplacementField lin(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto p = g.unravel(i);
        lin.set(i, g.voxel_center(p[0], p[1], p[2]) * 0.1);
    }
    const auto map = gradicon_residual_map(lin, lin);
    CHECK(map[g.index(3, 3, 3)] == doctest::Approx(0.1323).epsilon(1e-6));

    Rng rng(4);
    for (int c = 0; c < 5; ++c) CHECK(gradicon_penalty(random_field(g, rng, 0.3), random_field(g, rng, 0.3)) > 0.0);
}

TEST_CASE("objective") {
    Rng rng(2);
    GridRef g = grid(6, 7, 5);
    const Volume a = smooth_random(g, rng), b = smooth_random(g, rng);
    DisplacementField z(g);
    CHECK(objective(a, a, z, z, 1.5) == doctest::Approx(0.0).epsilon(1e-12));

    const auto f = random_field(g, rng, 0.4), bw = random_field(g, rng, 0.4);
    const double full = objective(a, b, f, bw, 1.5);
    const double pure = objective(a, b, f, bw, 0.0);
    const double pen = gradicon_penalty(f, bw) + gradicon_penalty(bw, f);
    CHECK(full == doctest::Approx(pure + 1.5 * pen).epsilon(1e-9));
    const double sim = (1.0 - ncc(a, warp(b, bw))) + (1.0 - ncc(b, warp(a, f)));
    CHECK(pure == doctest::Approx(sim).epsilon(1e-5));
}

TEST_CASE("analytic gradient matches central differences") {
    Rng rng(7);
    for (int c = 0; c < 6; ++c) {
        GridRef g = grid(5 + c % 3, 6, 5, {1.0 + 0.1 * c, 0.9, 1.1});
        const Volume a = smooth_random(g, rng), b = smooth_random(g, rng);
        auto f = random_field(g, rng, 0.5), bw = random_field(g, rng, 0.5);
        ObjectiveOptions o;
        o.similarity = c % 2 ? Similarity::LocalNcc : Similarity::GlobalNcc;
        const auto r = evaluate_objective(a, b, f, bw, o, true);
        for (int t = 0; t < 15; ++t) {
            const bool fwd = rng.bernoulli(0.5);
            const int m = rng.uniform_int(0, 2);
            const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(g.size()) - 1));
            auto& fld = fwd ? f : bw;
            const double h = 1e-6, s = fld.comp[m][i];
            fld.comp[m][i] = s + h;
            const double p = evaluate_objective(a, b, f, bw, o, false).value;
            fld.comp[m][i] = s - h;
            const double q = evaluate_objective(a, b, f, bw, o, false).value;
            fld.comp[m][i] = s;
            const double fd = (p - q) / (2 * h);
            const double an = (fwd ? r.grad_fwd : r.grad_bwd).comp[m][i];
            CHECK(std::abs(fd - an) / std::max({1e-6, std::abs(fd), std::abs(an)}) < 1e-4);
        }
    }
}

TEST_CASE("config json") {
    RegistrationConfig c;
    update_from_json(c, {{"lambda", 0.5}, {"work_shape", 32}, {"similarity", "local_ncc"}, {"levels", {2, 1}},
                         {"iters_per_level", {10, 5}}});
    CHECK(c.lambda == 0.5);
    CHECK(c.work_shape == Shape3{32, 32, 32});
    CHECK(c.similarity == Similarity::LocalNcc);
    RegistrationConfig d;
    update_from_json(d, to_json(c));
    CHECK(to_json(d) == to_json(c));
    CHECK_THROWS_AS(update_from_json(c, {{"lamda", 1.0}}), InvalidArgument);
    CHECK_THROWS_AS(update_from_json(c, {{"levels", {2, 1}}, {"iters_per_level", {1}}}), InvalidArgument);
    CHECK_THROWS_AS(update_from_json(c, {{"lambda", -1.0}}), InvalidArgument);
}

TEST_CASE("identity pair and small translation") {
    GridRef g = grid(32, 32, 32);
    RegistrationConfig cfg;
    cfg.work_shape = {32, 32, 32};
    cfg.levels = {2, 1};
    cfg.iters_per_level = {60, 40};

    const Volume base = blob(g, {15, 16, 16});
    const auto id = register_pair(base, base, cfg);
    CHECK(id.u_fwd.mean_norm() < 0.1);
    CHECK(id.ncc_fwd >= 0.999);
    CHECK(id.final_objective <= id.initial_objective);

    const Volume moved = blob(g, {17, 16, 16});
    const auto r = register_pair(moved, base, cfg);
    CHECK(r.final_objective <= r.initial_objective);
    CHECK(r.u_fwd.grid == g);
    CHECK(r.u_bwd.grid == g);
    const Vec3 u = r.u_fwd.sample_mm({15, 16, 16});
    const double err = (u - Vec3{2, 0, 0}).norm();
    CHECK(err < 2.0 / 4.0);  // at least 4x better than the identity
    const Vec3 ub = r.u_bwd.sample_mm({17, 16, 16});
    CHECK((ub - Vec3{-2, 0, 0}).norm() < 0.5);
    CHECK(r.ncc_fwd > 0.99);
    CHECK(diagnostics_json(r).contains("gradicon_residual"));
}

TEST_CASE("degenerate input") {
    GridRef g = grid(16, 16, 16);
    RegistrationConfig cfg;
    cfg.work_shape = {16, 16, 16};
    Rng rng(1);
    CHECK_THROWS_AS(register_pair(Volume(g, 1.0f), smooth_random(g, rng), cfg), DegenerateInput);
}

}
