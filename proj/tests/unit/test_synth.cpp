#include <doctest.h>

#include <cstring>

#include "../support/oracles.hpp"
#include "../support/test_util.hpp"
#include "lesiontrack/error.hpp"
#include "lesiontrack/metrics.hpp"
#include "lesiontrack/phantom.hpp"
#include "lesiontrack/synth.hpp"

using namespace lesiontrack;
using testutil::grid;

namespace {

Phantom sphere(int n = 32, double radius = 8.0) {
    const GridRef g = grid(n, n, n);
    return sphere_phantom(g, g.center_mm(), radius, 1.0f);
}

LesionTransformParams grow_params(int stages) {
    LesionTransformParams p;
    p.grow_probability = 1.0;
    p.stages_min = p.stages_max = stages;
    return p;
}

bool same_bytes(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

/// Fixed-point inverse of x -> x + u(x) on u's grid.
DisplacementField invert(const DisplacementField& u) {
    DisplacementField v(u.grid);
    for (std::size_t i = 0; i < u.grid.size(); ++i) {
        const auto p = u.grid.unravel(i);
        const Vec3 x = u.grid.voxel_center(p[0], p[1], p[2]);
        Vec3 w = -u.at(i);
        for (int it = 0; it < 30; ++it) w = -u.sample_mm(x + w);
        v.set(i, w);
    }
    return v;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("lesion field points outwards for positive amplitude") {
    const Phantom ph = sphere();
    const BinaryMask s = binary_of(ph.mask, 1);
    const DisplacementField u = lesion_field(s, 4.5, 10.0, {});
    const GridRef& g = u.grid;
    const Vec3 c = g.center_mm();
    const BinaryMask surf = surface(s);
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!surf.data[i]) continue;
        const auto p = g.unravel(i);
        const Vec3 out = g.voxel_center(p[0], p[1], p[2]) - c;
        const Vec3 f = u.at(i);
        CHECK(f.x * out.x + f.y * out.y + f.z * out.z > 0.0);
        ++n;
    }
    CHECK(n > 100);
    CHECK(lesion_field(s, 4.5, 0.0, {}).is_zero());
    CHECK(lesion_field(BinaryMask(g), 4.5, 10.0, {}).is_zero());

    // locality: nothing beyond 4 sigma_s + 4 sigma_r of the lesion
    LesionTransformParams p;
    p.sigma_s = 4.0;
    p.fixed_amplitude = 20.0;
    const DisplacementField d = lesion_deformation_field(ph.mask, 1, p, Rng(3));
    const auto dist = distance_transform(s);
    for (std::size_t i = 0; i < g.size(); ++i)
        if (dist[i] > 4 * p.sigma_s + 4 * p.sigma_r) CHECK(d.at(i).norm() == 0.0);
}

TEST_CASE("deformation field with zero amplitude is zero") {
    const Phantom ph = sphere();
    LesionTransformParams p;
    p.fixed_amplitude = 0.0;
    CHECK(lesion_deformation_field(ph.mask, 1, p, Rng(1)).is_zero());
    CHECK_THROWS_AS(lesion_deformation_field(ph.mask, 2, p, Rng(1)), InvalidArgument);
}

TEST_CASE("sigma from size and amplitude sampling") {
    LesionTransformParams p;
    const GridRef g = grid(8, 8, 8);
    CHECK(sigma_from_size(1, g, p) == doctest::Approx(4.0));
    CHECK(sigma_from_size(10000000, g, p) == doctest::Approx(5.5));
    const double mid = sigma_from_size(8000, g, p);
    CHECK(mid > 4.0);
    CHECK(mid < 5.5);

    Rng rng(5);
    int grows = 0;
    for (int n = 0; n < 400; ++n) {
        const double a = sample_amplitude(p, rng);
        const bool grow = a > 0;
        grows += grow;
        if (grow) CHECK((a >= 15.0 && a < 25.0));
        else CHECK((a >= -22.0 && a < -18.0));
    }
    CHECK(grows > 150);
    CHECK(grows < 250);

    p.amplitude_mode = AmplitudeMode::DiscreteSet;
    for (int n = 0; n < 50; ++n) {
        const double a = sample_amplitude(p, rng);
        CHECK((a == -22.0 || a == -18.0 || a == 15.0 || a == 25.0));
    }
}

TEST_CASE("progression grows and shrinks the lesion") {
    const Phantom ph = sphere();
    const std::size_t before = ph.mask.count(1);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto g = apply_lesion_progression(ph.image, ph.mask, grow_params(3), Rng(seed));
        CHECK(g.mask.count(1) >= before * 105 / 100);
        CHECK(g.record[0]["voxels_after"].get<std::size_t>() == g.mask.count(1));

        LesionTransformParams s = grow_params(3);
        s.grow_probability = 0.0;
        const auto sh = apply_lesion_progression(ph.image, ph.mask, s, Rng(seed));
        CHECK(sh.mask.count(1) < before);
    }
}

TEST_CASE("monotone stages with unit modulation") {
    const Phantom ph = sphere();
    for (double amp : {18.0, -18.0}) {
        std::size_t last = ph.mask.count(1);
        for (int stages = 1; stages <= 3; ++stages) {
            LesionTransformParams p;
            p.fixed_amplitude = amp * stages;  // equal per-stage amplitude
            p.fixed_modulation = 1.0;
            p.stages_min = p.stages_max = stages;
            const std::size_t now = apply_lesion_progression(ph.image, ph.mask, p, Rng(2)).mask.count(1);
            if (amp > 0) CHECK(now >= last);
            else CHECK(now <= last);
            last = now;
        }
    }
}

TEST_CASE("zero amplitude and disabled augmentation are the identity") {
    PhantomSpec spec;
    spec.shape = {40, 40, 40};
    spec.seed = 4;
    const Phantom ph = make_phantom(spec);
    LesionTransformParams p;
    p.fixed_amplitude = 0.0;
    const auto s = synthesize_followup(ph.image, ph.mask, p, ImageAugParams::off(), Rng(9));
    CHECK(same_bytes(s.image.data, ph.image.data));
    CHECK(s.mask.labels == ph.mask.labels);
    CHECK(s.total_field.is_zero());

    const auto a = image_level_augment(ph.image, ph.mask, ImageAugParams::off(), Rng(1));
    CHECK(same_bytes(a.image.data, ph.image.data));
    CHECK(a.field.is_zero());
}

TEST_CASE("synthesis is deterministic in the seed") {
    PhantomSpec spec;
    spec.shape = {40, 40, 40};
    spec.seed = 2;
    const Phantom ph = make_phantom(spec);
    const auto a = synthesize_followup(ph.image, ph.mask, {}, {}, Rng(11));
    const auto b = synthesize_followup(ph.image, ph.mask, {}, {}, Rng(11));
    CHECK(same_bytes(a.image.data, b.image.data));
    CHECK(a.mask.labels == b.mask.labels);
    for (int c = 0; c < 3; ++c) CHECK(a.total_field.comp[c] == b.total_field.comp[c]);
    CHECK(a.params_used.dump() == b.params_used.dump());
    CHECK(a.params_used["seed"] == 11);
    const auto c = synthesize_followup(ph.image, ph.mask, {}, {}, Rng(12));
    CHECK_FALSE(same_bytes(a.image.data, c.image.data));
}

TEST_CASE("default synthesis on a two-lesion phantom") {
    PhantomSpec spec;
    spec.seed = 7;
    const Phantom ph = make_phantom(spec);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto s = synthesize_followup(ph.image, ph.mask, {}, {}, Rng(seed));
        const int k = s.mask.num_instances();
        CHECK((k == 1 || k == 2));
        for (auto label : s.mask.present_labels())
            CHECK((centroid(s.mask, label) - centroid(ph.mask, label)).norm() < 15.0);

        // the recorded forward field explains the output mask
        const InstanceMask back = warp(ph.mask, invert(s.total_field));
        CHECK(dice(binary_of(back), binary_of(s.mask)) > 0.85);
    }
}

TEST_CASE("augmentation pieces") {
    const Phantom ph = sphere(32, 7.0);
    ImageAugParams rot = ImageAugParams::off();
    rot.rotation_prob = 1.0;
    const auto r = image_level_augment(ph.image, ph.mask, rot, Rng(5));
    const double ratio = static_cast<double>(r.mask.count(1)) / ph.mask.count(1);
    CHECK(std::abs(ratio - 1.0) < 0.05);

    ImageAugParams bright = ImageAugParams::off();
    bright.brightness_prob = 1.0;
    const auto b = image_level_augment(ph.image, ph.mask, bright, Rng(5));
    const double m = b.record["brightness"].get<double>();
    for (std::size_t i = 0; i < ph.image.data.size(); ++i)
        CHECK(b.image.data[i] == static_cast<float>(ph.image.data[i] * m));
    CHECK(b.mask.labels == ph.mask.labels);

    ImageAugParams intensity = ImageAugParams::off();
    intensity.noise_prob = intensity.blur_prob = intensity.contrast_prob = 1.0;
    const auto n = image_level_augment(ph.image, ph.mask, intensity, Rng(5));
    CHECK(n.mask.labels == ph.mask.labels);
    CHECK(n.field.is_zero());
}

TEST_CASE("parameter json") {
    LesionTransformParams p;
    update_from_json(p, {{"stages", 2}, {"fixed_amplitude", 5.0}, {"amplitude_mode", "discrete"}});
    CHECK(p.stages_min == 2);
    CHECK(p.stages_max == 2);
    CHECK(*p.fixed_amplitude == 5.0);
    LesionTransformParams q;
    update_from_json(q, to_json(p));
    CHECK(to_json(q) == to_json(p));
    CHECK_THROWS_AS(update_from_json(p, {{"amplitude", 1}}), InvalidArgument);
    CHECK_THROWS_AS(update_from_json(p, {{"stages", {3, 1}}}), InvalidArgument);

    ImageAugParams a;
    update_from_json(a, {{"rotation_deg", 2.0}});
    ImageAugParams b;
    update_from_json(b, to_json(a));
    CHECK(to_json(a) == to_json(b));
    CHECK_THROWS_AS(update_from_json(a, {{"noise_prob", 2.0}}), InvalidArgument);
}

TEST_CASE("degenerate mask") {
    const GridRef g = grid(8, 8, 8);
    CHECK_THROWS_AS(apply_lesion_progression(Volume(g), InstanceMask(g), {}, Rng(1)), DegenerateInput);
}

}
