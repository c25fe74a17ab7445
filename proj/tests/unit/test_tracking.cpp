#include <doctest.h>

#include "../support/test_util.hpp"
#include "lesiontrack/error.hpp"
#include "lesiontrack/metrics.hpp"
#include "lesiontrack/nifti.hpp"
#include "lesiontrack/phantom.hpp"
#include "lesiontrack/tracking.hpp"

using namespace lesiontrack;
using testutil::grid;

namespace {

RegistrationConfig small_registration(int n) {
    RegistrationConfig c;
    c.work_shape = {n, n, n};
    c.levels = {2, 1};
    c.iters_per_level = {40, 20};
    return c;
}

TimeSeries series_of(const std::vector<Volume>& images) {
    TimeSeries s;
    s.patient_id = "P";
    for (std::size_t i = 0; i < images.size(); ++i) {
        s.scans.push_back({static_cast<int>(i), "mem", std::nullopt, std::nullopt});
        s.images.push_back(images[i]);
    }
    return s;
}

/// Echoes the prompt when the patch holds bright voxels and predicts nothing otherwise.
class BrightOnlySegmenter : public Segmenter {
public:
    std::string name() const override { return "bright"; }
    SegmentOutput segment(const Volume& patch, const PromptChannel& channel) const override {
        if (patch.max_value() < 0.5f) return {BinaryMask(patch.grid), {"empty"}};
        return {channel, {}};
    }
};

}  // namespace

TEST_SUITE("tracking") {

TEST_CASE("baseline segmenter on a bright sphere") {
    const GridRef g = grid(40, 40, 40);
    const Phantom ph = sphere_phantom(g, g.center_mm(), 7.0, 1.0f);
    const BaselineSegmenter seg;
    const auto r = segment_single(ph.image, PointPrompt{g.center_mm()}, seg, {32, 32, 32});
    CHECK(dice(r.mask, binary_of(ph.mask)) > 0.95);
    CHECK(r.flags.empty());
    CHECK(r.mask.grid == g);
}

TEST_CASE("baseline segmenter with a sampled point on a noisy phantom") {
    PhantomSpec spec;
    spec.lesions = 1;
    spec.radius_mm = {7, 8};
    spec.seed = 3;
    const Phantom ph = make_phantom(spec);
    Rng rng(5);
    const auto sp = simulate_point(ph.mask, 1, rng);
    const auto r = segment_single(ph.image, PointPrompt{sp.point}, BaselineSegmenter{}, {48, 48, 48});
    CHECK(dice(r.mask, binary_of(ph.mask, 1)) > 0.85);
}

TEST_CASE("degenerate prompts are flagged") {
    const GridRef g = grid(16, 16, 16);
    const BaselineSegmenter seg;
    const auto uniform = seg.segment(Volume(g, 2.0f), ball_channel(g, g.center_mm()));
    CHECK(uniform.mask.count() == g.size());
    CHECK(std::find(uniform.flags.begin(), uniform.flags.end(), "low_confidence") != uniform.flags.end());

    PhantomSpec spec;
    spec.lesions = 1;
    spec.seed = 3;
    const Phantom ph = make_phantom(spec);
    // body tissue well away from the lesion
    Point3 p = ph.image.grid.center_mm();
    const Point3 c = centroid(ph.mask, 1);
    p = p - (c - p) * (12.0 / std::max(1.0, (c - p).norm()));
    const auto bg = segment_single(ph.image, PointPrompt{p}, seg, {32, 32, 32});
    CHECK(bg.mask.count() < 200);
    CHECK(std::find(bg.flags.begin(), bg.flags.end(), "low_confidence") != bg.flags.end());

    const auto none = seg.segment(Volume(g, 1.0f), BinaryMask(g));
    CHECK(none.mask.empty());
    CHECK(std::find(none.flags.begin(), none.flags.end(), "empty_prompt") != none.flags.end());
}

TEST_CASE("segment_single with the echo segmenter returns the prior mask") {
    const GridRef g = grid(30, 30, 30);
    InstanceMask m(g);
    for (int k = 10; k < 15; ++k)
        for (int j = 12; j < 16; ++j)
            for (int i = 5; i < 11; ++i) m.at(i, j, k) = 2;
    const auto r = segment_single(Volume(g, 0.0f), MaskPrompt{m, 2, ""}, ChannelEchoSegmenter{}, {16, 16, 16});
    CHECK(r.mask.data == binary_of(m, 2).data);
    CHECK_THROWS_AS(segment_single(Volume(g), PointPrompt{{-40, 0, 0}}, ChannelEchoSegmenter{}, {8, 8, 8}),
                    InvalidArgument);
    CHECK_THROWS_AS(make_segmenter("unet"), InvalidArgument);
}

TEST_CASE("track on a single scan and on a duplicated scan") {
    PhantomSpec spec;
    spec.shape = {32, 32, 32};
    spec.lesions = 1;
    spec.radius_mm = {4, 5};
    spec.seed = 1;
    const Phantom ph = make_phantom(spec);
    TrackConfig cfg;
    cfg.patch_size = {24, 24, 24};
    cfg.registration = small_registration(32);
    const std::vector<InitialPrompt> prompts{{1, MaskPrompt{ph.mask, 1, "gt"}}};

    const auto one = track(series_of({ph.image}), prompts, ChannelEchoSegmenter{}, cfg);
    REQUIRE(one.timepoints.size() == 1);
    CHECK(one.timepoints[0].lesions[0].mask.data == binary_of(ph.mask, 1).data);
    CHECK_FALSE(one.timepoints[0].registration.has_value());

    const auto two = track(series_of({ph.image, ph.image, ph.image}), prompts, ChannelEchoSegmenter{}, cfg);
    REQUIRE(two.timepoints.size() == 3);
    for (const auto& tp : two.timepoints) {
        CHECK(tp.lesions[0].mask.data == binary_of(ph.mask, 1).data);
        CHECK_FALSE(tp.lesions[0].empty);
    }
    const auto& d = *two.timepoints[1].registration;
    CHECK((d.final_objective <= d.initial_objective || d.identity_fallback));

    const auto baseline = track(series_of({ph.image, ph.image}), prompts, BaselineSegmenter{}, cfg);
    const auto& y0 = baseline.timepoints[0].lesions[0].mask;
    const auto& y1 = baseline.timepoints[1].lesions[0].mask;
    CHECK(dice(y0, y1) > 0.95);
    CHECK((centroid(y0) - centroid(y1)).norm() < 1.0);

    const auto report = to_json(two);
    CHECK(report["format"] == "lesiontrack-tracking-report");
    CHECK(report["timepoints"].size() == 3);
}

TEST_CASE("empty predictions fall back to a point prompt") {
    PhantomSpec spec;
    spec.shape = {32, 32, 32};
    spec.lesions = 1;
    spec.radius_mm = {4, 5};
    spec.seed = 1;
    const Phantom ph = make_phantom(spec);
    TrackConfig cfg;
    cfg.patch_size = {24, 24, 24};
    cfg.registration = small_registration(32);

    // nothing bright at t=1; the lesion is back at t=2
    const Volume flat(ph.image.grid, 0.0f);
    const auto r = track(series_of({ph.image, flat, ph.image}), {{1, MaskPrompt{ph.mask, 1, "gt"}}},
                         BrightOnlySegmenter{}, cfg);
    REQUIRE(r.timepoints.size() == 3);
    CHECK(r.timepoints[1].lesions[0].empty);
    CHECK(r.timepoints[2].lesions[0].fallback_prompt);
    CHECK(r.timepoints[2].lesions[0].prompt["type"] == "point");
    CHECK_FALSE(r.timepoints[2].lesions[0].empty);
}

TEST_CASE("point and box modes") {
    const GridRef g = grid(32, 32, 32);
    const Phantom ph = sphere_phantom(g, g.center_mm(), 5.0, 1.0f);
    TrackConfig cfg;
    cfg.patch_size = {24, 24, 24};
    cfg.registration = small_registration(32);
    for (TrackMode mode : {TrackMode::Point, TrackMode::Box}) {
        cfg.mode = mode;
        const Prompt p = mode == TrackMode::Point ? Prompt{PointPrompt{g.center_mm()}}
                                                  : Prompt{BoxPrompt{{g.center_mm() - Vec3{6, 6, 6}, g.center_mm() + Vec3{6, 6, 6}}}};
        const auto r = track(series_of({ph.image, ph.image}), {{1, p}}, BaselineSegmenter{}, cfg);
        CHECK(r.timepoints[1].lesions[0].prompt["type"] == to_string(mode));
        CHECK(dice(r.timepoints[1].lesions[0].mask, binary_of(ph.mask)) > 0.9);
    }
    CHECK(parse_track_mode("box") == TrackMode::Box);
    CHECK_THROWS_AS(parse_track_mode("scribble"), InvalidArgument);
}

TEST_CASE("manifest loading") {
    const auto dir = testutil::scratch_dir("manifest");
    save_nifti(Volume(grid(4, 4, 4), 1.0f), dir / "a.nii.gz");
    {
        std::ofstream(dir / "m.json") << R"({"patient_id": "X", "scans": [{"t": 0, "image": "a.nii.gz"},
            {"t": 3, "image": "a.nii.gz", "gt_mask": "g.nii.gz", "pred_mask": "p.nii.gz"}]})";
    }
    const auto s = load_manifest(dir / "m.json");
    CHECK(s.patient_id == "X");
    CHECK(s.images.size() == 2);
    CHECK(s.scans[1].t == 3);
    CHECK(*s.scans[1].gt_mask_path == dir / "g.nii.gz");
    CHECK(*s.scans[1].pred_mask_path == dir / "p.nii.gz");
    CHECK(manifest_json(s)["scans"][1]["pred_mask"] == (dir / "p.nii.gz").string());

    std::ofstream(dir / "bad.json") << R"({"patient_id": "X", "scans": [{"t": 1, "image": "a.nii.gz"}, {"t": 0, "image": "a.nii.gz"}]})";
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), InvalidArgument);
    std::ofstream(dir / "broken.json") << "{";
    CHECK_THROWS_AS(load_manifest(dir / "broken.json"), FormatError);
    CHECK_THROWS_AS(load_manifest(dir / "none.json"), IoError);
}

}
