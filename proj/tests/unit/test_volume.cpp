#include <doctest.h>

#include <algorithm>
#include <set>

#include "../support/test_util.hpp"
#include "lesiontrack/error.hpp"
#include "lesiontrack/rng.hpp"
#include "lesiontrack/volume.hpp"

using namespace lesiontrack;
using testutil::grid;

TEST_SUITE("volume") {

TEST_CASE("mm and voxel coordinates") {
    GridRef g = grid(10, 10, 10);
    CHECK(mm_to_voxel(g, {3, 4, 5}) == Vec3{3, 4, 5});

    GridRef h = grid(10, 10, 10, {0.8, 0.8, 1.0}, {10, 0, 0});
    const Vec3 v = mm_to_voxel(h, {10.8, 0, 2});
    CHECK(v.x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v.y == 0.0);
    CHECK(v.z == 2.0);

    Rng rng(3);
    GridRef p2 = grid(8, 8, 8, {0.5, 2.0, 0.25}, {-3.0, 1.5, 7.0});
    for (int n = 0; n < 100; ++n) {
        const Vec3 mm{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)};
        for (const GridRef* q : {&p2, &h}) {
            const Vec3 back = voxel_to_mm(*q, mm_to_voxel(*q, mm));
            for (int a = 0; a < 3; ++a) CHECK(std::abs(back[a] - mm[a]) <= 1e-12 * std::max(1.0, std::abs(mm[a])));
        }
    }
}

TEST_CASE("grid validation") {
    CHECK_THROWS_AS(grid(0, 4, 4).validate(), InvalidArgument);
    CHECK_THROWS_AS(grid(4, 4, 4, {1, -1, 1}).validate(), InvalidArgument);
    CHECK_THROWS_AS(Volume(grid(2, 2, 2), std::vector<float>(7)), InvalidArgument);
}

TEST_CASE("resample") {
    Rng rng(5);
    GridRef g = grid(6, 5, 4, {1, 1, 1});
    Volume v(g);
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    const Volume same = resample(v, {1, 1, 1});
    CHECK(same.grid == g);
    CHECK(same.data == v.data);

    // 10^3 at 2 mm onto 1 mm: samples at even indices coincide with source voxels
    GridRef coarse = grid(10, 10, 10, {2, 2, 2});
    Volume c(coarse);
    for (auto& x : c.data) x = static_cast<float>(rng.uniform());
    const Volume fine = resample(c, {1, 1, 1});
    CHECK(fine.grid.shape == Shape3{20, 20, 20});
    for (int k = 0; k < 10; ++k)
        for (int j = 0; j < 10; ++j)
            for (int i = 0; i < 10; ++i) CHECK(fine.at(2 * i, 2 * j, 2 * k) == doctest::Approx(c.at(i, j, k)).epsilon(1e-6));
    // odd samples are midpoints: trilinear oracle along x
    CHECK(fine.at(3, 4, 6) == doctest::Approx(0.5 * (c.at(1, 2, 3) + c.at(2, 2, 3))).epsilon(1e-6));

    InstanceMask m(coarse);
    for (auto& l : m.labels) l = static_cast<std::uint16_t>(rng.uniform_int(0, 3) * 2);
    const InstanceMask mr = resample(m, {0.7, 1.3, 1.0});
    std::set<std::uint16_t> in(m.labels.begin(), m.labels.end()), out(mr.labels.begin(), mr.labels.end());
    CHECK(std::includes(in.begin(), in.end(), out.begin(), out.end()));
}

TEST_CASE("znormalize") {
    GridRef g = grid(2, 2, 1);
    Volume v(g, {0.0f, 2.0f, 0.0f, 2.0f});
    const Volume z = znormalize(v);
    CHECK(z.data == std::vector<float>{-1.0f, 1.0f, -1.0f, 1.0f});

    Rng rng(11);
    Volume r(grid(7, 6, 5));
    for (auto& x : r.data) x = static_cast<float>(3.0 + 4.0 * rng.normal());
    const Volume rz = znormalize(r);
    double mean = 0, var = 0;
    for (float x : rz.data) mean += x;
    mean /= rz.data.size();
    for (float x : rz.data) var += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(std::sqrt(var / rz.data.size()) - 1.0) < 1e-5);
    const Volume again = znormalize(rz);
    for (std::size_t i = 0; i < rz.data.size(); ++i) CHECK(again.data[i] == doctest::Approx(rz.data[i]).epsilon(1e-6));

    CHECK_THROWS_AS(znormalize(Volume(g, 3.0f)), DegenerateInput);
}

TEST_CASE("percentile and ct_normalize") {
    // sorting oracle with numpy's linear rule
    Rng rng(2);
    std::vector<float> vals(257);
    for (auto& x : vals) x = static_cast<float>(rng.normal());
    std::vector<float> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    for (double q : {0.0, 0.5, 25.0, 50.0, 99.5, 100.0}) {
        const double pos = q / 100.0 * (sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        const double expect = sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
        CHECK(percentile(vals, q) == doctest::Approx(expect).epsilon(1e-12));
    }

    Volume v(grid(10, 10, 10));
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    v.data[123] = 1e6f;
    const double p995 = percentile(v.data, 99.5), p005 = percentile(v.data, 0.5);
    std::vector<double> clipped(v.data.begin(), v.data.end());
    for (auto& x : clipped) x = std::clamp(x, p005, p995);
    double mean = 0, var = 0;
    for (double x : clipped) mean += x;
    mean /= clipped.size();
    for (double x : clipped) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / clipped.size());
    const Volume n = ct_normalize(v);
    CHECK(n.data[123] == doctest::Approx((p995 - mean) / sd).epsilon(1e-5));

    // uniform ramp: clipping touches at most 1% of the voxels
    Volume ramp(grid(100, 10, 1));
    for (std::size_t i = 0; i < ramp.data.size(); ++i) ramp.data[i] = static_cast<float>(i);
    const double lo = percentile(ramp.data, 0.5), hi = percentile(ramp.data, 99.5);
    const auto outside = std::count_if(ramp.data.begin(), ramp.data.end(), [&](float x) { return x < lo || x > hi; });
    CHECK(outside <= static_cast<long>(ramp.data.size() / 100));

    CHECK_THROWS_AS(ct_normalize(Volume(grid(3, 3, 3), 1.0f)), DegenerateInput);
}

TEST_CASE("crop_roi and paste_back") {
    Rng rng(4);
    GridRef g = grid(9, 8, 7, {0.8, 0.8, 1.0}, {5, -2, 1});
    Volume v(g);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(-1, 1));
    auto [full, where] = crop_roi(v, g.center_mm(), g.shape);
    CHECK(full.data == v.data);
    CHECK(where.start == std::array<int, 3>{0, 0, 0});

    // corner centre: padded with the minimum, interior equal to the source
    auto [patch, pl] = crop_roi(v, g.voxel_center(0, 0, 0), {4, 4, 4});
    const float vmin = v.min_value();
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) {
                const int si = pl.start[0] + i, sj = pl.start[1] + j, sk = pl.start[2] + k;
                if (g.in_bounds(si, sj, sk)) CHECK(patch.at(i, j, k) == v.at(si, sj, sk));
                else CHECK(patch.at(i, j, k) == vmin);
            }
    CHECK(patch.grid.spacing == g.spacing);
    CHECK(patch.grid.voxel_center(0, 0, 0) == g.voxel_center(pl.start[0], pl.start[1], pl.start[2]));

    BinaryMask m(g);
    for (auto& x : m.data) x = rng.bernoulli(0.3) ? 1 : 0;
    const BinaryMask back = paste_back(crop_like(m, pl), pl);
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i) {
                const bool in_roi = i - pl.start[0] >= 0 && i - pl.start[0] < 4 && j - pl.start[1] >= 0 &&
                                    j - pl.start[1] < 4 && k - pl.start[2] >= 0 && k - pl.start[2] < 4;
                CHECK(back.at(i, j, k) == (in_roi ? m.at(i, j, k) : 0));
            }

    CHECK_THROWS_AS(crop_roi(v, {-100, 0, 0}, {4, 4, 4}), InvalidArgument);
}

TEST_CASE("instance mask bookkeeping") {
    InstanceMask m(grid(4, 4, 4));
    CHECK(m.empty());
    CHECK(m.num_instances() == 0);
    m.at(0, 0, 0) = 1;
    m.at(1, 0, 0) = 3;
    m.at(2, 0, 0) = 3;
    CHECK(m.present_labels() == std::vector<std::uint16_t>{1, 3});
    CHECK(m.count(3) == 2);
    CHECK(binary_of(m, 3).count() == 2);
    CHECK(binary_of(m).count() == 3);
}

}
