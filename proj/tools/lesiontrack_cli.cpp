// lesiontrack command-line front end.
//
// Exit codes:
//   0  success
//   1  I/O or data error (missing/unreadable file, bad file contents, grid mismatch)
//   2  invalid arguments, configuration or specification
//   3  degenerate input (e.g. a mask without lesions)
//   4  registration diverged (`register` only; diagnostics are still written)
//
// Diagnostics go to stderr; `eval` prints its report to stdout.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lesiontrack/error.hpp"
#include "lesiontrack/metrics.hpp"
#include "lesiontrack/nifti.hpp"
#include "lesiontrack/parallel.hpp"
#include "lesiontrack/phantom.hpp"
#include "lesiontrack/prompt.hpp"
#include "lesiontrack/registration.hpp"
#include "lesiontrack/synth.hpp"
#include "lesiontrack/tracking.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lesiontrack;

namespace {

enum ExitCode : int { kOk = 0, kIo = 1, kInvalid = 2, kDegenerate = 3, kDiverged = 4 };

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out;
    json config = json::object();
};

const std::vector<std::string> kConfigSections{"seed",    "threads",      "out",   "phantom", "lesion",
                                               "augment", "registration", "track", "metrics"};

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw FormatError(p.string() + " is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + p.string());
}

void require_file(const std::string& what, const fs::path& p) {
    if (!fs::is_regular_file(p)) throw IoError(what + " not found: " + p.string());
}

fs::path output_dir(const Globals& g) {
    fs::path dir = g.out.empty() ? fs::path(g.config.value("out", std::string("."))) : fs::path(g.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
    return dir;
}

std::optional<std::uint64_t> resolve_seed(const Globals& g) {
    if (g.seed) return g.seed;
    if (g.config.contains("seed")) {
        if (!g.config["seed"].is_number_unsigned()) throw InvalidArgument("config: 'seed' must be a non-negative integer");
        return g.config["seed"].get<std::uint64_t>();
    }
    return std::nullopt;
}

std::uint64_t required_seed(const Globals& g, const std::string& cmd) {
    auto s = resolve_seed(g);
    if (!s) throw InvalidArgument(cmd + " needs --seed (or 'seed' in the config) for reproducible output");
    return *s;
}

const json& section(const Globals& g, const std::string& name) {
    static const json empty = json::object();
    if (!g.config.contains(name)) return empty;
    const json& s = g.config[name];
    if (!s.is_object()) throw InvalidArgument("config: '" + name + "' must be an object");
    return s;
}

Shape3 shape_from(const std::vector<int>& v, const std::string& what) {
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() == 3) return {v[0], v[1], v[2]};
    throw InvalidArgument(what + " takes 1 or 3 values");
}

Vec3 vec_from(const std::vector<double>& v, const std::string& what) {
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() == 3) return {v[0], v[1], v[2]};
    throw InvalidArgument(what + " takes 1 or 3 values");
}

json grid_summary(const GridRef& g) {
    return {{"shape", {g.shape[0], g.shape[1], g.shape[2]}},
            {"spacing", {g.spacing.x, g.spacing.y, g.spacing.z}},
            {"origin", {g.origin.x, g.origin.y, g.origin.z}}};
}

json lesion_summary(const InstanceMask& m) {
    json out = json::array();
    for (auto label : m.present_labels()) {
        const Point3 c = centroid(m, label);
        out.push_back({{"label", label}, {"voxels", m.count(label)}, {"centroid_mm", {c.x, c.y, c.z}}});
    }
    return out;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
    std::vector<int> shape;
    std::vector<double> spacing;
    std::optional<int> lesions;
    std::vector<double> radius;
    std::optional<double> contrast;
    std::optional<double> noise;
    std::optional<double> texture;
};

void update_phantom(PhantomSpec& s, const json& j) {
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "shape") s.shape = v.is_number_integer() ? Shape3{v.get<int>(), v.get<int>(), v.get<int>()}
                                                                : shape_from(v.get<std::vector<int>>(), "shape");
            else if (key == "spacing") s.spacing = v.is_number() ? Vec3{v.get<double>(), v.get<double>(), v.get<double>()}
                                                                 : vec_from(v.get<std::vector<double>>(), "spacing");
            else if (key == "origin") s.origin = vec_from(v.get<std::vector<double>>(), "origin");
            else if (key == "lesions") s.lesions = v.get<int>();
            else if (key == "radius_mm") {
                if (v.is_number()) s.radius_mm = {v.get<double>(), v.get<double>()};
                else {
                    auto r = v.get<std::vector<double>>();
                    if (r.size() != 2) throw InvalidArgument("phantom: radius_mm takes [lo, hi]");
                    s.radius_mm = {r[0], r[1]};
                }
            } else if (key == "contrast") s.contrast = v.get<double>();
            else if (key == "noise_std") s.noise_std = v.get<double>();
            else if (key == "texture") s.texture = v.get<double>();
            else throw InvalidArgument("unknown phantom parameter '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("phantom config: ") + e.what());
    }
}

json phantom_spec_json(const PhantomSpec& s) {
    return {{"shape", {s.shape[0], s.shape[1], s.shape[2]}},
            {"spacing", {s.spacing.x, s.spacing.y, s.spacing.z}},
            {"origin", {s.origin.x, s.origin.y, s.origin.z}},
            {"lesions", s.lesions},
            {"radius_mm", {s.radius_mm.lo, s.radius_mm.hi}},
            {"contrast", s.contrast},
            {"noise_std", s.noise_std},
            {"texture", s.texture}};
}

int cmd_phantom(const Globals& g, const PhantomArgs& a) {
    PhantomSpec spec;
    update_phantom(spec, section(g, "phantom"));
    if (!a.shape.empty()) spec.shape = shape_from(a.shape, "--shape");
    if (!a.spacing.empty()) spec.spacing = vec_from(a.spacing, "--spacing");
    if (a.lesions) spec.lesions = *a.lesions;
    if (a.radius.size() == 1) spec.radius_mm = {a.radius[0], a.radius[0]};
    else if (a.radius.size() == 2) spec.radius_mm = {a.radius[0], a.radius[1]};
    else if (!a.radius.empty()) throw InvalidArgument("--radius takes 1 or 2 values");
    if (a.contrast) spec.contrast = *a.contrast;
    if (a.noise) spec.noise_std = *a.noise;
    if (a.texture) spec.texture = *a.texture;
    spec.seed = resolve_seed(g).value_or(0);
    spec.validate();

    const fs::path dir = output_dir(g);
    const Phantom ph = make_phantom(spec);
    save_nifti(ph.image, dir / "image.nii.gz");
    save_nifti(ph.mask, dir / "mask.nii.gz");
    write_json(dir / "phantom.json", {{"format", "lesiontrack-phantom"},
                                      {"version", 1},
                                      {"seed", spec.seed},
                                      {"spec", phantom_spec_json(spec)},
                                      {"image", "image.nii.gz"},
                                      {"mask", "mask.nii.gz"},
                                      {"lesions", lesion_summary(ph.mask)}});
    std::cerr << "phantom: " << ph.mask.num_instances() << " lesion(s) written to " << dir.string() << "\n";
    return kOk;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
    std::string image;
    std::string mask;
    std::optional<double> amplitude;
    std::optional<int> stages;
    std::optional<double> grow_probability;
    std::optional<double> modulation;
    bool aug_off = false;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
    const std::uint64_t seed = required_seed(g, "synth");
    LesionTransformParams lp;
    ImageAugParams ap;
    update_from_json(lp, section(g, "lesion"));
    update_from_json(ap, section(g, "augment"));
    if (a.amplitude) lp.fixed_amplitude = *a.amplitude;
    if (a.stages) lp.stages_min = lp.stages_max = *a.stages;
    if (a.grow_probability) lp.grow_probability = *a.grow_probability;
    if (a.modulation) lp.fixed_modulation = *a.modulation;
    if (a.aug_off) ap = ImageAugParams::off();
    lp.validate();
    ap.validate();

    require_file("image", a.image);
    require_file("mask", a.mask);
    const fs::path dir = output_dir(g);
    const Volume img = load_volume(a.image);
    const InstanceMask mask = load_mask(a.mask);
    if (mask.num_instances() == 0) throw DegenerateInput("mask " + a.mask + " contains no lesions");

    SyntheticTimepoint s = synthesize_followup(img, mask, lp, ap, Rng(seed));
    s.params_used["inputs"] = {{"image", fs::absolute(a.image).string()}, {"mask", fs::absolute(a.mask).string()}};
    save_nifti(s.image, dir / "image.nii.gz");
    save_nifti(s.mask, dir / "mask.nii.gz");
    save_field(s.total_field, dir / "field.json");
    write_json(dir / "params_used.json", s.params_used);
    std::cerr << "synth: " << s.mask.num_instances() << " lesion(s) written to " << dir.string() << "\n";
    return kOk;
}

// ----------------------------------------------------------------- prompt

struct PromptArgs {
    std::string mask;
    std::string type = "point";
    int label = 0;
    int max_offset = 10;
    int timepoint = 0;
};

int cmd_prompt(const Globals& g, const PromptArgs& a) {
    const std::uint64_t seed = required_seed(g, "prompt");
    if (a.type != "point" && a.type != "box" && a.type != "mask")
        throw InvalidArgument("--type must be point, box or mask");
    if (a.label < 0 || a.label > 65535) throw InvalidArgument("--label must be in [0, 65535]");
    if (a.max_offset < 0) throw InvalidArgument("--max-offset must be >= 0");
    require_file("mask", a.mask);
    const fs::path dir = output_dir(g);
    const InstanceMask mask = load_mask(a.mask);

    std::vector<std::uint16_t> labels;
    if (a.label == 0) labels = mask.present_labels();
    else {
        if (!mask.has_label(static_cast<std::uint16_t>(a.label)))
            throw DegenerateInput("label " + std::to_string(a.label) + " is absent from " + a.mask);
        labels.push_back(static_cast<std::uint16_t>(a.label));
    }
    if (labels.empty()) throw DegenerateInput("mask " + a.mask + " contains no lesions");

    const Rng root(seed);
    json prompts = json::array();
    for (auto label : labels) {
        Rng r = root.stream({label, 0, 20});
        Prompt p;
        PromptChannel channel;
        if (a.type == "point") {
            auto sp = simulate_point(mask, label, r);
            p = PointPrompt{sp.point};
            channel = std::move(sp.channel);
        } else if (a.type == "box") {
            auto sb = simulate_box(mask, label, r, a.max_offset);
            p = BoxPrompt{sb.box};
            channel = std::move(sb.channel);
        } else {
            p = MaskPrompt{mask, label, fs::absolute(a.mask).string()};
            channel = binary_of(mask, label);
        }
        const std::string channel_name = "prompt_" + std::to_string(label) + ".nii.gz";
        save_nifti(channel, dir / channel_name);
        prompts.push_back({{"lesion_id", label},
                           {"prompt", prompt_to_json(p, a.timepoint)},
                           {"channel", channel_name},
                           {"channel_voxels", channel.count()}});
    }
    write_json(dir / "prompts.json", {{"format", "lesiontrack-prompts"},
                                      {"version", 1},
                                      {"seed", seed},
                                      {"source_mask", fs::absolute(a.mask).string()},
                                      {"prompts", prompts}});
    std::cerr << "prompt: " << labels.size() << " " << a.type << " prompt(s) written to " << dir.string() << "\n";
    return kOk;
}

// --------------------------------------------------------------- register

struct RegistrationArgs {
    std::vector<int> work_shape;
    std::optional<double> lambda;
    std::vector<int> levels;
    std::vector<int> iters;
    std::string similarity;
};

RegistrationConfig registration_config(const Globals& g, const RegistrationArgs& a) {
    RegistrationConfig c;
    update_from_json(c, section(g, "registration"));
    if (!a.work_shape.empty()) c.work_shape = shape_from(a.work_shape, "--work-shape");
    if (a.lambda) c.lambda = *a.lambda;
    if (!a.levels.empty()) c.levels = a.levels;
    if (!a.iters.empty()) c.iters_per_level = a.iters;
    if (!a.similarity.empty()) update_from_json(c, {{"similarity", a.similarity}});
    c.validate();
    return c;
}

struct RegisterArgs {
    std::string fixed;
    std::string moving;
    RegistrationArgs reg;
};

int cmd_register(const Globals& g, const RegisterArgs& a) {
    const RegistrationConfig cfg = registration_config(g, a.reg);
    require_file("fixed image", a.fixed);
    require_file("moving image", a.moving);
    const fs::path dir = output_dir(g);
    const Volume fixed = load_volume(a.fixed);
    const Volume moving = load_volume(a.moving);

    auto write = [&](const RegistrationResult& r, bool diverged, const std::string& message) {
        save_field(r.u_fwd, dir / "u_fwd.json");
        save_field(r.u_bwd, dir / "u_bwd.json");
        json d = diagnostics_json(r);
        d["format"] = "lesiontrack-registration";
        d["version"] = 1;
        d["diverged"] = diverged;
        if (!message.empty()) d["message"] = message;
        d["fixed"] = fs::absolute(a.fixed).string();
        d["moving"] = fs::absolute(a.moving).string();
        d["u_fwd"] = "u_fwd.json";
        d["u_bwd"] = "u_bwd.json";
        d["config"] = to_json(cfg);
        write_json(dir / "registration.json", d);
    };
    try {
        const RegistrationResult r = register_pair(fixed, moving, cfg);
        write(r, false, "");
        std::cerr << "register: objective " << r.initial_objective << " -> " << r.final_objective << " in "
                  << r.seconds << " s\n";
        return kOk;
    } catch (const RegistrationDiverged& e) {
        write(e.partial(), true, e.what());
        std::cerr << "register: diverged: " << e.what() << "\n";
        return kDiverged;
    }
}

// ------------------------------------------------------------------ track

struct TrackArgs {
    std::string manifest;
    std::string prompts;
    std::string mode;
    std::string segmenter;
    std::vector<int> patch;
    RegistrationArgs reg;
};

int cmd_track(const Globals& g, const TrackArgs& a) {
    const json& tj = section(g, "track");
    for (const auto& [key, v] : tj.items())
        if (key != "mode" && key != "segmenter" && key != "patch_size")
            throw InvalidArgument("unknown track parameter '" + key + "'");
    TrackConfig cfg;
    std::string segmenter_name = "baseline";
    try {
        if (tj.contains("mode")) cfg.mode = parse_track_mode(tj["mode"].get<std::string>());
        if (tj.contains("segmenter")) segmenter_name = tj["segmenter"].get<std::string>();
        if (tj.contains("patch_size")) {
            const json& ps = tj["patch_size"];
            cfg.patch_size = shape_from(ps.is_array() ? ps.get<std::vector<int>>() : std::vector<int>{ps.get<int>()},
                                        "patch_size");
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("track config: ") + e.what());
    }
    if (!a.mode.empty()) cfg.mode = parse_track_mode(a.mode);
    if (!a.segmenter.empty()) segmenter_name = a.segmenter;
    if (!a.patch.empty()) cfg.patch_size = shape_from(a.patch, "--patch");
    cfg.registration = registration_config(g, a.reg);
    const auto seg = make_segmenter(segmenter_name);

    require_file("manifest", a.manifest);
    require_file("prompts", a.prompts);
    TimeSeries series = load_manifest(a.manifest, false);
    for (const auto& s : series.scans) require_file("image for t=" + std::to_string(s.t), s.image_path);

    const json pj = read_json(a.prompts);
    if (!pj.is_object() || !pj.contains("prompts") || !pj["prompts"].is_array() || pj["prompts"].empty())
        throw InvalidArgument(a.prompts + ": expected a non-empty 'prompts' array");
    const fs::path base = fs::path(a.prompts).parent_path();
    std::vector<InitialPrompt> initial;
    for (const auto& e : pj["prompts"]) {
        if (!e.is_object() || !e.contains("lesion_id") || !e["lesion_id"].is_number_integer() || !e.contains("prompt"))
            throw InvalidArgument(a.prompts + ": each entry needs 'lesion_id' and 'prompt'");
        const int id = e["lesion_id"].get<int>();
        if (id < 1 || id > 65535) throw InvalidArgument(a.prompts + ": lesion_id must be in [1, 65535]");
        initial.push_back({static_cast<std::uint16_t>(id), prompt_from_json(e["prompt"], base)});
    }

    const fs::path dir = output_dir(g);
    for (const auto& s : series.scans) series.images.push_back(load_volume(s.image_path));
    const TrackingResult result = track(series, initial, *seg, cfg);

    json report = to_json(result);
    json pred_manifest = manifest_json(series);
    for (std::size_t i = 0; i < result.timepoints.size(); ++i) {
        const auto& tp = result.timepoints[i];
        const std::string name = "t" + std::to_string(tp.t) + "_pred.nii.gz";
        save_nifti(tp.combined(), dir / name);
        report["timepoints"][i]["pred_mask"] = name;
        pred_manifest["scans"][i]["pred_mask"] = name;
        for (auto& key : {"image", "gt_mask"})
            if (pred_manifest["scans"][i].contains(key))
                pred_manifest["scans"][i][key] = fs::absolute(pred_manifest["scans"][i][key].get<std::string>()).string();
    }
    report["config"] = {{"mode", to_string(cfg.mode)},
                        {"segmenter", seg->name()},
                        {"patch_size", cfg.patch_size},
                        {"registration", to_json(cfg.registration)}};
    write_json(dir / "tracking_report.json", report);
    write_json(dir / "predictions.json", pred_manifest);

    std::size_t empty = 0;
    for (const auto& tp : result.timepoints)
        for (const auto& l : tp.lesions) empty += l.empty ? 1 : 0;
    std::cerr << "track: " << result.timepoints.size() << " timepoint(s), " << empty << " empty lesion result(s)\n";
    return kOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::vector<std::string> manifests;
    std::optional<double> threshold;
    std::optional<double> nsd_tolerance;
    std::string total_dice;
    std::string aggregation;
    bool follow_ups_only = false;
    std::string csv = "lesions.csv";
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
    const json& mj = section(g, "metrics");
    MetricOptions opts;
    Aggregation agg = Aggregation::PatientMean;
    std::string total = a.total_dice, aggregation = a.aggregation;
    try {
        for (const auto& [key, v] : mj.items()) {
            if (key == "threshold_mm") opts.threshold_mm = v.get<double>();
            else if (key == "nsd_tolerance_mm") opts.nsd_tolerance_mm = v.get<double>();
            else if (key == "total_dice") { if (total.empty()) total = v.get<std::string>(); }
            else if (key == "aggregation") { if (aggregation.empty()) aggregation = v.get<std::string>(); }
            else throw InvalidArgument("unknown metrics parameter '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("metrics config: ") + e.what());
    }
    if (a.threshold) opts.threshold_mm = *a.threshold;
    if (a.nsd_tolerance) opts.nsd_tolerance_mm = *a.nsd_tolerance;
    if (!(opts.threshold_mm > 0.0) || !(opts.nsd_tolerance_mm >= 0.0))
        throw InvalidArgument("threshold must be > 0 and nsd tolerance >= 0");
    if (total == "pooled") opts.total_dice_mode = TotalDiceMode::Pooled;
    else if (!total.empty() && total != "per_lesion") throw InvalidArgument("total_dice must be per_lesion or pooled");
    if (aggregation == "scan") agg = Aggregation::ScanMean;
    else if (!aggregation.empty() && aggregation != "patient") throw InvalidArgument("aggregation must be patient or scan");

    std::vector<TimeSeries> all;
    for (const auto& m : a.manifests) {
        require_file("manifest", m);
        all.push_back(load_manifest(m, false));
        for (const auto& s : all.back().scans) {
            const std::string where = all.back().patient_id + " t=" + std::to_string(s.t);
            if (!s.gt_mask_path || !s.pred_mask_path)
                throw InvalidArgument("manifest " + m + ": scan " + where + " needs both 'gt_mask' and 'pred_mask'");
            require_file("gt mask for " + where, *s.gt_mask_path);
            require_file("predicted mask for " + where, *s.pred_mask_path);
        }
    }
    const fs::path dir = output_dir(g);

    std::vector<ScanMetrics> scans;
    for (const auto& series : all) {
        for (std::size_t i = 0; i < series.scans.size(); ++i) {
            if (a.follow_ups_only && i == 0) continue;
            const auto& s = series.scans[i];
            const InstanceMask gt = load_mask(*s.gt_mask_path);
            const InstanceMask pred = load_mask(*s.pred_mask_path);
            scans.push_back(evaluate_scan(series.patient_id, "t" + std::to_string(s.t), gt, pred, opts));
        }
    }
    if (scans.empty()) throw InvalidArgument("eval: no scans to evaluate");
    const MetricReport report = aggregate(std::move(scans), agg, opts);
    const json j = to_json(report);
    write_json(dir / "metrics.json", j);
    {
        std::ofstream out(dir / a.csv);
        if (!out) throw IoError("cannot write " + (dir / a.csv).string());
        out << lesion_csv(report);
    }
    std::cout << j.dump(2) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lesiontrack: longitudinal lesion tracking toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON configuration file");
    app.add_option("--seed", g.seed, "Random seed (required by synth and prompt)");
    app.add_option("--threads", g.threads, "Worker threads (default: LL_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output directory (default: current directory)");

    PhantomArgs pa;
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic CT-like phantom with ellipsoidal lesions");
    phantom->add_option("--shape", pa.shape, "Voxels per axis (1 or 3 values)")->expected(1, 3);
    phantom->add_option("--spacing", pa.spacing, "Voxel spacing in mm (1 or 3 values)")->expected(1, 3);
    phantom->add_option("--lesions", pa.lesions, "Number of lesions");
    phantom->add_option("--radius", pa.radius, "Lesion radius in mm (value or lo hi)")->expected(1, 2);
    phantom->add_option("--contrast", pa.contrast, "Lesion contrast above the body");
    phantom->add_option("--noise", pa.noise, "Gaussian noise standard deviation");
    phantom->add_option("--texture", pa.texture, "Peak body texture amplitude");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Synthesise a follow-up scan from a baseline image and mask");
    synth->add_option("--image", sa.image, "Baseline image (NIfTI)")->required();
    synth->add_option("--mask", sa.mask, "Baseline instance mask (NIfTI)")->required();
    synth->add_option("--lesion.amplitude", sa.amplitude, "Fixed base amplitude (overrides sampling)");
    synth->add_option("--lesion.stages", sa.stages, "Fixed number of stages");
    synth->add_option("--lesion.grow-probability", sa.grow_probability, "Probability of growth");
    synth->add_option("--lesion.modulation", sa.modulation, "Fixed modulation multiplier");
    synth->add_flag("--aug.off", sa.aug_off, "Disable image-level augmentation");

    PromptArgs qa;
    auto* prompt = app.add_subcommand("prompt", "Simulate point, box or mask prompts from an instance mask");
    prompt->add_option("--mask", qa.mask, "Instance mask (NIfTI)")->required();
    prompt->add_option("--type", qa.type, "point, box or mask")->capture_default_str();
    prompt->add_option("--label", qa.label, "Lesion label (0 = every lesion)")->capture_default_str();
    prompt->add_option("--max-offset", qa.max_offset, "Largest box face offset in voxels")->capture_default_str();
    prompt->add_option("--timepoint", qa.timepoint, "Timepoint recorded with the prompt")->capture_default_str();

    auto add_registration = [](CLI::App* sub, RegistrationArgs& r) {
        sub->add_option("--work-shape", r.work_shape, "Registration grid voxels (1 or 3 values)")->expected(1, 3);
        sub->add_option("--lambda", r.lambda, "GradICON weight");
        sub->add_option("--levels", r.levels, "Downsampling factors, coarse to fine");
        sub->add_option("--iters", r.iters, "Iterations per level");
        sub->add_option("--similarity", r.similarity, "global_ncc or local_ncc");
    };

    RegisterArgs ra;
    auto* reg = app.add_subcommand("register", "Symmetric deformable registration of a baseline onto a follow-up");
    reg->add_option("--fixed", ra.fixed, "Follow-up image (NIfTI)")->required();
    reg->add_option("--moving", ra.moving, "Baseline image (NIfTI)")->required();
    add_registration(reg, ra.reg);

    TrackArgs ta;
    auto* trk = app.add_subcommand("track", "Track prompted lesions through a series of scans");
    trk->add_option("--manifest", ta.manifest, "Series manifest (JSON)")->required();
    trk->add_option("--prompts", ta.prompts, "Prompts file written by `prompt`")->required();
    trk->add_option("--mode", ta.mode, "Propagation mode: mask, point or box");
    trk->add_option("--segmenter", ta.segmenter, "baseline or echo");
    trk->add_option("--patch", ta.patch, "Patch size in voxels (1 or 3 values)")->expected(1, 3);
    add_registration(trk, ta.reg);

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Score predicted masks against ground truth");
    ev->add_option("--manifest", ea.manifests, "Manifest(s) with gt_mask and pred_mask per scan")->required();
    ev->add_option("--threshold", ea.threshold, "Centre matching threshold in mm");
    ev->add_option("--nsd-tolerance", ea.nsd_tolerance, "NSD tolerance in mm");
    ev->add_option("--total-dice", ea.total_dice, "per_lesion or pooled");
    ev->add_option("--aggregation", ea.aggregation, "patient or scan");
    ev->add_flag("--follow-ups-only", ea.follow_ups_only, "Skip the first scan of every series");
    ev->add_option("--csv", ea.csv, "Per-lesion CSV file name")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInvalid;
    }

    try {
        if (!g.config_path.empty()) {
            g.config = read_json(g.config_path);
            if (!g.config.is_object()) throw InvalidArgument("config must be a JSON object");
            for (const auto& [key, v] : g.config.items())
                if (std::find(kConfigSections.begin(), kConfigSections.end(), key) == kConfigSections.end())
                    throw InvalidArgument("config: unknown key '" + key + "'");
        }
        if (g.threads) set_num_threads(*g.threads);
        else if (g.config.contains("threads")) {
            if (!g.config["threads"].is_number_integer() || g.config["threads"].get<int>() < 1)
                throw InvalidArgument("config: 'threads' must be a positive integer");
            set_num_threads(g.config["threads"].get<int>());
        }

        if (*phantom) return cmd_phantom(g, pa);
        if (*synth) return cmd_synth(g, sa);
        if (*prompt) return cmd_prompt(g, qa);
        if (*reg) return cmd_register(g, ra);
        if (*trk) return cmd_track(g, ta);
        if (*ev) return cmd_eval(g, ea);
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const DegenerateInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDegenerate;
    } catch (const RegistrationDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const std::exception& e) {
        // IoError, FormatError, GridMismatch and anything unexpected
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kInvalid;
}
