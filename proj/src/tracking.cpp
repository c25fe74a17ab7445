#include "lesiontrack/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "lesiontrack/error.hpp"

namespace lesiontrack {

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

constexpr std::array<std::array<int, 3>, 6> kFace{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

/// One 6-connected dilation (outside = background) or erosion (outside = foreground).
std::vector<std::uint8_t> morph_step(const GridRef& g, const std::vector<std::uint8_t>& in, bool dilate) {
    std::vector<std::uint8_t> out(in.size());
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                bool v = in[idx] != 0;
                for (const auto& d : kFace) {
                    const int a = i + d[0], b = j + d[1], c = k + d[2];
                    const bool inside = a >= 0 && b >= 0 && c >= 0 && a < g.shape[0] && b < g.shape[1] && c < g.shape[2];
                    const bool n = inside ? in[g.index(a, b, c)] != 0 : !dilate;
                    if (dilate) v = v || n;
                    else v = v && n;
                }
                out[idx] = v ? 1 : 0;
            }
    return out;
}

void add_flag(std::vector<std::string>& flags, const std::string& f) {
    if (std::find(flags.begin(), flags.end(), f) == flags.end()) flags.push_back(f);
}

}  // namespace

SegmentOutput BaselineSegmenter::segment(const Volume& patch, const PromptChannel& channel) const {
    require_same_grid(patch.grid, channel.grid, "baseline segmenter");
    const GridRef& g = patch.grid;
    SegmentOutput out{BinaryMask(g), {}};
    std::vector<std::size_t> seeds;
    Vec3 c{};
    for (std::size_t i = 0; i < channel.data.size(); ++i)
        if (channel.data[i]) {
            seeds.push_back(i);
            const auto p = g.unravel(i);
            c += Vec3{double(p[0]), double(p[1]), double(p[2])};
        }
    if (seeds.empty()) {
        out.flags = {"empty_prompt", "empty"};
        return out;
    }
    c *= 1.0 / static_cast<double>(seeds.size());
    auto dist = [&](std::size_t idx) {
        const auto p = g.unravel(idx);
        return (Vec3{double(p[0]), double(p[1]), double(p[2])} - c).norm();
    };
    double radius = 0.0;
    for (auto s : seeds) radius = std::max(radius, dist(s));

    // lesion statistics from the prompt core, background level from a surrounding shell
    std::vector<double> core, all;
    for (auto s : seeds) {
        all.push_back(patch.data[s]);
        if (dist(s) <= 0.5 * radius) core.push_back(patch.data[s]);
    }
    if (core.size() < 8) core = all;
    const double m = median_of(core);
    std::vector<double> dev;
    dev.reserve(core.size());
    for (double v : core) dev.push_back(std::abs(v - m));
    const double robust_sd = 1.4826 * median_of(dev);
    std::vector<double> shell;
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        const double d = dist(idx);
        if (d > radius + 2.0 && d <= radius + 6.0) shell.push_back(patch.data[idx]);
    }
    const double bg = shell.empty() ? m : median_of(shell);
    if (!shell.empty() && robust_sd > 0.0 && std::abs(m - bg) < cfg_.min_contrast * robust_sd) {
        // prompt sits on tissue indistinguishable from its surroundings
        out.flags = {"low_confidence", "empty"};
        return out;
    }
    const double sd = std::max(robust_sd, std::abs(m - bg) / (2.0 * cfg_.k));
    const double lo = m - cfg_.k * sd, hi = m + cfg_.k * sd;
    if (!(sd > 0.0)) add_flag(out.flags, "low_confidence");

    auto in_band = [&](std::size_t idx) { return patch.data[idx] >= lo && patch.data[idx] <= hi; };
    std::vector<std::uint8_t> grown(g.size(), 0);
    std::deque<std::size_t> queue;
    for (auto s : seeds)
        if (in_band(s)) {
            grown[s] = 1;
            queue.push_back(s);
        }
    while (!queue.empty()) {
        const std::size_t idx = queue.front();
        queue.pop_front();
        const auto p = g.unravel(idx);
        for (const auto& d : kFace) {
            const int a = p[0] + d[0], b = p[1] + d[1], cc = p[2] + d[2];
            if (a < 0 || b < 0 || cc < 0 || a >= g.shape[0] || b >= g.shape[1] || cc >= g.shape[2]) continue;
            const std::size_t n = g.index(a, b, cc);
            if (!grown[n] && in_band(n)) {
                grown[n] = 1;
                queue.push_back(n);
            }
        }
    }
    for (int r = 0; r < cfg_.closing_radius; ++r) grown = morph_step(g, grown, true);
    for (int r = 0; r < cfg_.closing_radius; ++r) grown = morph_step(g, grown, false);

    const InstanceMask comps = connected_components(BinaryMask(g, grown), 6);
    std::vector<std::size_t> overlap(1, 0);
    for (auto s : seeds) {
        const auto l = comps.labels[s];
        if (l == 0) continue;
        if (overlap.size() <= l) overlap.resize(l + 1u, 0);
        ++overlap[l];
    }
    std::uint16_t best = 0;
    for (std::size_t l = 1; l < overlap.size(); ++l)
        if (overlap[l] > (best ? overlap[best] : 0)) best = static_cast<std::uint16_t>(l);
    if (best == 0) {
        add_flag(out.flags, "empty");
        return out;
    }
    bool touches = false;
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        if (comps.labels[idx] != best) continue;
        out.mask.data[idx] = 1;
        const auto p = g.unravel(idx);
        for (int a = 0; a < 3; ++a) touches = touches || p[a] == 0 || p[a] == g.shape[a] - 1;
    }
    if (touches) add_flag(out.flags, "low_confidence");
    return out;
}

SegmentOutput ChannelEchoSegmenter::segment(const Volume& patch, const PromptChannel& channel) const {
    require_same_grid(patch.grid, channel.grid, "echo segmenter");
    SegmentOutput out{channel, {}};
    if (channel.empty()) out.flags.push_back("empty");
    return out;
}

std::unique_ptr<Segmenter> make_segmenter(const std::string& name) {
    if (name == "baseline") return std::make_unique<BaselineSegmenter>();
    if (name == "echo") return std::make_unique<ChannelEchoSegmenter>();
    throw InvalidArgument("unknown segmenter '" + name + "' (expected baseline or echo)");
}

SegmentResult segment_single(const Volume& img, const Prompt& p, const Segmenter& seg, const Shape3& patch_size) {
    const Point3 center = prompt_center(p);
    if (!img.grid.contains_mm(center))
        throw InvalidArgument("segment_single: prompt centre " + to_string(center) + " is outside the image " +
                              to_string(img.grid));
    auto [patch, place] = crop_roi(img, center, patch_size);
    const PromptChannel channel = rasterize(p, patch.grid);
    SegmentOutput out = seg.segment(patch, channel);
    if (!(out.mask.grid == patch.grid))
        throw Error("segmenter '" + seg.name() + "' returned a mask on the wrong grid");
    for (auto v : out.mask.data)
        if (v > 1) throw Error("segmenter '" + seg.name() + "' returned a non-binary mask");
    SegmentResult r;
    r.mask = paste_back(out.mask, place);
    r.placement = place;
    r.flags = std::move(out.flags);
    return r;
}

// ---------------------------------------------------------------------------
// tracking

TrackMode parse_track_mode(const std::string& s) {
    if (s == "mask") return TrackMode::Mask;
    if (s == "point") return TrackMode::Point;
    if (s == "box") return TrackMode::Box;
    throw InvalidArgument("unknown tracking mode '" + s + "' (expected mask, point or box)");
}

std::string to_string(TrackMode m) {
    switch (m) {
        case TrackMode::Mask: return "mask";
        case TrackMode::Point: return "point";
        case TrackMode::Box: return "box";
    }
    return "mask";
}

InstanceMask TimepointResult::combined() const {
    if (lesions.empty()) return {};
    InstanceMask out(lesions.front().mask.grid);
    for (const auto& l : lesions)
        for (std::size_t i = 0; i < l.mask.data.size(); ++i)
            if (l.mask.data[i] && out.labels[i] == 0) out.labels[i] = l.lesion_id;
    return out;
}

namespace {

/// Clamps a point onto the span of voxel centres; returns true when it moved.
bool clip_to_grid(Point3& p, const GridRef& g) {
    bool moved = false;
    for (int a = 0; a < 3; ++a) {
        const double lo = g.origin[a], hi = g.origin[a] + (g.shape[a] - 1) * g.spacing[a];
        const double c = std::clamp(p[a], lo, hi);
        moved = moved || c != p[a];
        p[a] = c;
    }
    return moved;
}

struct LesionState {
    std::uint16_t id = 0;
    BinaryMask last;       ///< prediction on the previous scan's grid
    Point3 anchor;         ///< centroid of the last non-empty prediction, carried forward
    Point3 point;          ///< chained point (point mode)
    Box3 box;              ///< chained box (box mode)
};

nlohmann::json prompt_report(const Prompt& p, int t) {
    nlohmann::json j = prompt_to_json(p, t);
    if (const auto* m = std::get_if<MaskPrompt>(&p)) {
        if (m->path.empty()) {
            j["mask_path"] = "";
            j["source"] = "propagated";
        }
        j["voxels"] = m->mask.count(m->label);
    }
    return j;
}

}  // namespace

TrackingResult track(const TimeSeries& series, const std::vector<InitialPrompt>& prompts, const Segmenter& seg,
                     const TrackConfig& cfg) {
    if (series.scans.empty() || series.images.size() != series.scans.size())
        throw InvalidArgument("track: series needs at least one loaded scan");
    cfg.registration.validate();
    TrackingResult result;
    result.patient_id = series.patient_id;
    result.mode = cfg.mode;
    result.segmenter = seg.name();

    std::vector<LesionState> states;
    {
        TimepointResult tp;
        tp.t = series.scans[0].t;
        const Volume& img = series.images[0];
        for (const auto& ip : prompts) {
            for (const auto& s : states)
                if (s.id == ip.lesion_id) throw InvalidArgument("track: duplicate lesion id " + std::to_string(ip.lesion_id));
            LesionState st;
            st.id = ip.lesion_id;
            auto seg_out = segment_single(img, ip.prompt, seg, cfg.patch_size);
            LesionTimepoint lt{ip.lesion_id, seg_out.mask, prompt_report(ip.prompt, tp.t), seg_out.mask.empty(), false,
                               seg_out.flags};
            st.last = seg_out.mask;
            st.anchor = lt.empty ? prompt_center(ip.prompt) : centroid(seg_out.mask);
            st.point = prompt_center(ip.prompt);
            if (const auto* b = std::get_if<BoxPrompt>(&ip.prompt)) {
                st.box = b->box;
            } else if (const auto* m = std::get_if<MaskPrompt>(&ip.prompt)) {
                st.box = simulate_box(m->mask, m->label, std::array<int, 6>{}).box;
            } else {
                const Vec3 r = img.grid.spacing * static_cast<double>(kBallRadius);
                st.box = {st.point - r, st.point + r};
            }
            tp.lesions.push_back(std::move(lt));
            states.push_back(std::move(st));
        }
        result.timepoints.push_back(std::move(tp));
    }

    for (std::size_t n = 1; n < series.scans.size(); ++n) {
        const Volume& prev = series.images[n - 1];
        const Volume& cur = series.images[n];
        TimepointResult tp;
        tp.t = series.scans[n].t;
        PairDiagnostics diag;
        diag.from_t = series.scans[n - 1].t;
        diag.to_t = tp.t;
        DisplacementField u_fwd(prev.grid), u_bwd(cur.grid);
        try {
            const RegistrationResult reg = register_pair(cur, prev, cfg.registration);
            diag.initial_objective = reg.initial_objective;
            diag.final_objective = reg.final_objective;
            diag.ncc_fwd = reg.ncc_fwd;
            diag.ncc_bwd = reg.ncc_bwd;
            diag.gradicon_residual = reg.gradicon_residual;
            diag.seconds = reg.seconds;
            diag.iterations = reg.iterations;
            if (reg.final_objective <= reg.initial_objective) {
                u_fwd = reg.u_fwd;
                u_bwd = reg.u_bwd;
            } else {
                diag.identity_fallback = true;
                diag.warning = "objective increased; identity field used";
            }
        } catch (const RegistrationDiverged& e) {
            diag.identity_fallback = true;
            diag.warning = e.what();
            diag.initial_objective = e.partial().initial_objective;
            diag.final_objective = e.partial().final_objective;
        } catch (const DegenerateInput& e) {
            diag.identity_fallback = true;
            diag.warning = e.what();
        }
        tp.registration = diag;

        for (auto& st : states) {
            LesionTimepoint lt;
            lt.lesion_id = st.id;
            std::optional<Prompt> prompt;
            auto propagated_point = [&](Point3 p) {
                clip_to_grid(p, prev.grid);
                Point3 q = propagate_point(p, u_fwd);
                if (clip_to_grid(q, cur.grid)) add_flag(lt.flags, "prompt_clipped");
                return q;
            };
            switch (cfg.mode) {
                case TrackMode::Mask: {
                    if (!st.last.empty()) {
                        auto pm = propagate_mask(instance_of(st.last, st.id), st.id, u_bwd);
                        if (!pm.empty) prompt = MaskPrompt{std::move(pm.mask), st.id, ""};
                    }
                    if (!prompt) {
                        prompt = PointPrompt{propagated_point(st.anchor)};
                        lt.fallback_prompt = true;
                    }
                    break;
                }
                case TrackMode::Point:
                    st.point = propagated_point(st.point);
                    prompt = PointPrompt{st.point};
                    break;
                case TrackMode::Box:
                    try {
                        st.box = propagate_box(st.box, u_fwd, &cur.grid);
                        prompt = BoxPrompt{st.box};
                    } catch (const InvalidArgument&) {
                        const Point3 c = propagated_point(st.box.center());
                        st.box = {c, c};
                        prompt = PointPrompt{c};
                        lt.fallback_prompt = true;
                    }
                    break;
            }
            auto seg_out = segment_single(cur, *prompt, seg, cfg.patch_size);
            for (const auto& f : seg_out.flags) add_flag(lt.flags, f);
            lt.mask = std::move(seg_out.mask);
            lt.empty = lt.mask.empty();
            lt.prompt = prompt_report(*prompt, tp.t);
            st.last = lt.mask;
            st.anchor = lt.empty ? prompt_center(*prompt) : centroid(lt.mask);
            tp.lesions.push_back(std::move(lt));
        }
        result.timepoints.push_back(std::move(tp));
    }
    return result;
}

nlohmann::json to_json(const TrackingResult& r) {
    nlohmann::json tps = nlohmann::json::array();
    for (const auto& tp : r.timepoints) {
        nlohmann::json lesions = nlohmann::json::array();
        for (const auto& l : tp.lesions) {
            nlohmann::json c = nullptr;
            if (!l.empty) {
                const Point3 p = centroid(l.mask);
                c = {p.x, p.y, p.z};
            }
            lesions.push_back({{"lesion_id", l.lesion_id},
                               {"prompt", l.prompt},
                               {"empty", l.empty},
                               {"fallback_prompt", l.fallback_prompt},
                               {"flags", l.flags},
                               {"voxels", l.mask.count()},
                               {"centroid_mm", c}});
        }
        nlohmann::json reg = nullptr;
        if (tp.registration) {
            const auto& d = *tp.registration;
            reg = {{"from_t", d.from_t},
                   {"to_t", d.to_t},
                   {"initial_objective", d.initial_objective},
                   {"final_objective", d.final_objective},
                   {"ncc_fwd", d.ncc_fwd},
                   {"ncc_bwd", d.ncc_bwd},
                   {"gradicon_residual", d.gradicon_residual},
                   {"seconds", d.seconds},
                   {"iterations", d.iterations},
                   {"identity_fallback", d.identity_fallback},
                   {"warning", d.warning}};
        }
        tps.push_back({{"t", tp.t}, {"registration", reg}, {"lesions", lesions}});
    }
    return {{"format", "lesiontrack-tracking-report"},
            {"version", 1},
            {"patient_id", r.patient_id},
            {"mode", to_string(r.mode)},
            {"segmenter", r.segmenter},
            {"timepoints", tps}};
}

}  // namespace lesiontrack
