#include "lesiontrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>

#include "lesiontrack/error.hpp"

namespace lesiontrack {

namespace {

// stream purposes; lesion streams are keyed {label, stage, purpose}, image-level ones {0, 0, purpose}
enum Purpose : std::uint64_t {
    kAmplitude = 1,
    kStages = 2,
    kModulation = 3,
    kElastic = 10,
    kRotation = 11,
    kScaling = 12,
    kTranslation = 13,
    kNoise = 14,
    kBlur = 15,
    kBrightness = 16,
    kContrast = 17,
};

void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument(std::string(name) + " must be a probability in [0, 1]");
}

void check_range(const Range& r, const char* name) {
    if (!(r.lo <= r.hi)) throw InvalidArgument(std::string(name) + " range must be ordered (lo <= hi)");
}

}  // namespace

void LesionTransformParams::validate() const {
    if (sigma_s < 0.0) throw InvalidArgument("sigma_s must be >= 0");
    check_range(sigma_s_range, "sigma_s");
    if (sigma_s_range.lo <= 0.0) throw InvalidArgument("sigma_s range must be positive");
    check_range(diameter_range_mm, "diameter");
    if (!(diameter_range_mm.lo < diameter_range_mm.hi)) throw InvalidArgument("diameter range must be non-empty");
    check_range(amplitude_shrink, "amplitude_shrink");
    check_range(amplitude_grow, "amplitude_grow");
    check_range(r_range, "r");
    if (sigma_r < 0.0) throw InvalidArgument("sigma_r must be >= 0");
    if (stages_min < 1 || stages_max < stages_min) throw InvalidArgument("stages must satisfy 1 <= min <= max");
    check_prob(grow_probability, "grow_probability");
}

ImageAugParams ImageAugParams::off() {
    ImageAugParams p;
    p.elastic_prob = p.rotation_prob = p.scaling_prob = p.translation_prob = 0.0;
    p.noise_prob = p.blur_prob = p.brightness_prob = p.contrast_prob = 0.0;
    return p;
}

void ImageAugParams::validate() const {
    check_prob(elastic_prob, "elastic_prob");
    check_prob(rotation_prob, "rotation_prob");
    check_prob(scaling_prob, "scaling_prob");
    check_prob(translation_prob, "translation_prob");
    check_prob(noise_prob, "noise_prob");
    check_prob(blur_prob, "blur_prob");
    check_prob(brightness_prob, "brightness_prob");
    check_prob(contrast_prob, "contrast_prob");
    check_range(scaling, "scaling");
    check_range(noise_variance, "noise_variance");
    check_range(blur_sigma, "blur_sigma");
    check_range(brightness, "brightness");
    check_range(contrast, "contrast");
    if (elastic_scale < 0.0 || elastic_magnitude < 0.0 || rotation_deg < 0.0 || translation_vox < 0.0)
        throw InvalidArgument("augmentation magnitudes must be >= 0");
    if (scaling.lo <= 0.0) throw InvalidArgument("scaling factors must be positive");
    if (noise_variance.lo < 0.0 || blur_sigma.lo < 0.0) throw InvalidArgument("noise variance and blur sigma must be >= 0");
}

// ---------------------------------------------------------------------------
// lesion-level transform

std::vector<double> modulation_field(const GridRef& g, const LesionTransformParams& p, Rng rng) {
    if (p.fixed_modulation) return std::vector<double>(g.size(), *p.fixed_modulation);
    std::vector<double> r(g.size());
    for (auto& v : r) v = rng.uniform(p.r_range.lo, p.r_range.hi);
    if (p.sigma_r > 0.0)
        gaussian_blur_inplace(r, g.shape, divide(Vec3{p.sigma_r, p.sigma_r, p.sigma_r}, g.spacing));
    if (p.modulation == ModulationMode::OnePlus)
        for (auto& v : r) v += 1.0;
    return r;
}

DisplacementField lesion_field(const BinaryMask& indicator, double sigma_s_mm, double amplitude,
                               const std::vector<double>& modulation) {
    const GridRef& g = indicator.grid;
    DisplacementField out(g);
    if (!modulation.empty() && modulation.size() != g.size())
        throw GridMismatch("lesion_field: modulation field does not match the mask grid");
    if (amplitude == 0.0 || indicator.empty()) return out;

    // Work on the indicator's bounding box plus the blur radius and one voxel for the gradient;
    // the blurred indicator is exactly zero outside it.
    const Vec3 sigma_vox = divide(Vec3{sigma_s_mm, sigma_s_mm, sigma_s_mm}, g.spacing);
    std::array<int, 3> lo{g.shape[0], g.shape[1], g.shape[2]}, hi{-1, -1, -1};
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i)
                if (indicator.at(i, j, k)) {
                    const std::array<int, 3> p{i, j, k};
                    for (int a = 0; a < 3; ++a) {
                        lo[a] = std::min(lo[a], p[a]);
                        hi[a] = std::max(hi[a], p[a]);
                    }
                }
    Shape3 cs{};
    for (int a = 0; a < 3; ++a) {
        const int margin = static_cast<int>(std::ceil(4.0 * sigma_vox[a])) + 2;
        lo[a] = std::max(0, lo[a] - margin);
        hi[a] = std::min(g.shape[a] - 1, hi[a] + margin);
        cs[a] = hi[a] - lo[a] + 1;
    }
    auto cidx = [&](int i, int j, int k) {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(cs[0]) * (j + static_cast<std::size_t>(cs[1]) * k);
    };
    std::vector<double> blurred(static_cast<std::size_t>(cs[0]) * cs[1] * cs[2]);
    for (int k = 0; k < cs[2]; ++k)
        for (int j = 0; j < cs[1]; ++j)
            for (int i = 0; i < cs[0]; ++i)
                blurred[cidx(i, j, k)] = indicator.at(i + lo[0], j + lo[1], k + lo[2]) ? 1.0 : 0.0;
    gaussian_blur_inplace(blurred, cs, sigma_vox);

    for (int k = 0; k < cs[2]; ++k)
        for (int j = 0; j < cs[1]; ++j)
            for (int i = 0; i < cs[0]; ++i) {
                const std::array<int, 3> p{i, j, k};
                const std::size_t gi = g.index(i + lo[0], j + lo[1], k + lo[2]);
                const double scale = -amplitude * (modulation.empty() ? 1.0 : modulation[gi]);
                for (int a = 0; a < 3; ++a) {
                    // central inside the image, one-sided at the image border
                    std::array<int, 3> pl = p, ph = p;
                    double h = g.spacing[a];
                    const int gpos = p[a] + lo[a];
                    if (g.shape[a] < 2) continue;
                    if (gpos == 0) {
                        ph[a] += 1;
                    } else if (gpos == g.shape[a] - 1) {
                        pl[a] -= 1;
                    } else if (p[a] == 0 || p[a] == cs[a] - 1) {
                        continue;  // crop border away from the image border: blurred values are zero here
                    } else {
                        pl[a] -= 1;
                        ph[a] += 1;
                        h *= 2.0;
                    }
                    const double d = (blurred[cidx(ph[0], ph[1], ph[2])] - blurred[cidx(pl[0], pl[1], pl[2])]) / h;
                    out.comp[a][gi] = scale * d;
                }
            }
    return out;
}

double sigma_from_size(std::size_t voxels, const GridRef& g, const LesionTransformParams& p) {
    const double volume = static_cast<double>(voxels) * g.spacing.x * g.spacing.y * g.spacing.z;
    double d = std::cbrt(6.0 * volume / std::numbers::pi);
    d = std::clamp(d, p.diameter_range_mm.lo, p.diameter_range_mm.hi);
    const double t = (d - p.diameter_range_mm.lo) / (p.diameter_range_mm.hi - p.diameter_range_mm.lo);
    return p.sigma_s_range.lo + t * (p.sigma_s_range.hi - p.sigma_s_range.lo);
}

double sample_amplitude(const LesionTransformParams& p, Rng& rng) {
    if (p.fixed_amplitude) return *p.fixed_amplitude;
    const bool grow = rng.bernoulli(p.grow_probability);
    const Range& r = grow ? p.amplitude_grow : p.amplitude_shrink;
    if (p.amplitude_mode == AmplitudeMode::DiscreteSet) return rng.bernoulli(0.5) ? r.hi : r.lo;
    return rng.uniform(r.lo, r.hi);
}

DisplacementField lesion_deformation_field(const InstanceMask& mask, std::uint16_t label,
                                           const LesionTransformParams& p, const Rng& rng) {
    p.validate();
    if (label == 0 || !mask.has_label(label))
        throw InvalidArgument("lesion_deformation_field: label " + std::to_string(label) + " is not present");
    const BinaryMask s = binary_of(mask, label);
    const double sigma = p.sigma_s > 0.0 ? p.sigma_s : sigma_from_size(s.count(), mask.grid, p);
    Rng amp_rng = rng.stream({p.per_lesion_amplitude ? label : 0u, 0, kAmplitude});
    const double amplitude = sample_amplitude(p, amp_rng);
    return lesion_field(s, sigma, amplitude, modulation_field(mask.grid, p, rng.stream({0, 1, kModulation})));
}

ProgressionResult apply_lesion_progression(const Volume& img, const InstanceMask& mask, const LesionTransformParams& p,
                                           const Rng& rng) {
    p.validate();
    require_same_grid(img.grid, mask.grid, "apply_lesion_progression");
    const auto labels = mask.present_labels();
    if (labels.empty()) throw DegenerateInput("apply_lesion_progression: mask has no lesion instances");

    struct Plan {
        std::uint16_t label;
        int stages;
        double sigma;
        double amplitude;
    };
    Rng image_amp = rng.stream({0, 0, kAmplitude});
    const double image_amplitude = sample_amplitude(p, image_amp);
    std::vector<Plan> plans;
    int n_stages = 0;
    ProgressionResult out;
    out.record = nlohmann::json::array();
    for (auto label : labels) {
        Plan plan{label, 0, 0.0, image_amplitude};
        plan.stages = rng.stream({label, 0, kStages}).uniform_int(p.stages_min, p.stages_max);
        plan.sigma = p.sigma_s > 0.0 ? p.sigma_s : sigma_from_size(mask.count(label), mask.grid, p);
        if (p.per_lesion_amplitude) {
            Rng a = rng.stream({label, 0, kAmplitude});
            plan.amplitude = sample_amplitude(p, a);
        }
        n_stages = std::max(n_stages, plan.stages);
        plans.push_back(plan);
        out.record.push_back({{"label", label},
                              {"stages", plan.stages},
                              {"sigma_s_mm", plan.sigma},
                              {"amplitude", plan.amplitude},
                              {"voxels_before", mask.count(label)}});
    }

    out.image = img;
    out.mask = mask;
    out.field = DisplacementField(img.grid);
    DisplacementField pull(img.grid);
    for (int s = 0; s < n_stages; ++s) {
        const auto mod = modulation_field(img.grid, p, rng.stream({0, static_cast<std::uint64_t>(s + 1), kModulation}));
        DisplacementField u(img.grid);
        for (const auto& plan : plans) {
            if (s >= plan.stages || !out.mask.has_label(plan.label)) continue;
            const auto f = lesion_field(binary_of(out.mask, plan.label), plan.sigma, plan.amplitude / plan.stages, mod);
            for (int a = 0; a < 3; ++a)
                for (std::size_t i = 0; i < u.comp[a].size(); ++i) u.comp[a][i] += f.comp[a][i];
        }
        if (u.is_zero()) continue;
        // First-order inverse of each small stage, chained and applied to the originals in
        // one resampling so sub-voxel stage motions are not rounded away by nearest neighbour.
        pull = compose(pull, negated(u));
        out.image = warp(img, pull);
        out.mask = warp(mask, pull);
        out.field = compose(u, out.field);
    }
    for (std::size_t i = 0; i < plans.size(); ++i) out.record[i]["voxels_after"] = out.mask.count(plans[i].label);
    return out;
}

// ---------------------------------------------------------------------------
// image-level augmentation

namespace {

Mat3 rotation_matrix(double ax, double ay, double az) {
    const double cx = std::cos(ax), sx = std::sin(ax);
    const double cy = std::cos(ay), sy = std::sin(ay);
    const double cz = std::cos(az), sz = std::sin(az);
    const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
    const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
    const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
    auto mul = [](const Mat3& a, const Mat3& b) {
        Mat3 c{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
        return c;
    };
    return mul(rz, mul(ry, rx));
}

Vec3 mat_vec(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z, m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Vec3 mat_t_vec(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z, m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z};
}

}  // namespace

AugmentResult image_level_augment(const Volume& img, const InstanceMask& mask, const ImageAugParams& p, const Rng& rng) {
    p.validate();
    require_same_grid(img.grid, mask.grid, "image_level_augment");
    const GridRef& g = img.grid;
    AugmentResult out;
    out.record = nlohmann::json::object();
    out.field = DisplacementField(g);

    // spatial: phi(x) = c + s R (x - c) + t + e(x)
    bool spatial = false;
    DisplacementField elastic(g);
    {
        Rng r = rng.stream({0, 0, kElastic});
        if (r.bernoulli(p.elastic_prob) && p.elastic_magnitude > 0.0) {
            const Vec3 extent = g.extent_mm();
            const Vec3 sigma_vox = divide(extent * p.elastic_scale, g.spacing);
            for (int a = 0; a < 3; ++a) {
                auto& c = elastic.comp[a];
                for (auto& v : c) v = r.normal();
                gaussian_blur_inplace(c, g.shape, sigma_vox);
                double peak = 0.0;
                for (double v : c) peak = std::max(peak, std::abs(v));
                const double target = p.elastic_magnitude * extent[a] / 2.0;
                if (peak > 0.0)
                    for (auto& v : c) v *= target / peak;
            }
            spatial = true;
            out.record["elastic"] = {{"sigma_vox", {sigma_vox.x, sigma_vox.y, sigma_vox.z}},
                                     {"max_mm", elastic.max_norm()}};
        }
    }
    Mat3 rot = identity3();
    {
        Rng r = rng.stream({0, 0, kRotation});
        if (r.bernoulli(p.rotation_prob) && p.rotation_deg > 0.0) {
            const double lim = p.rotation_deg * std::numbers::pi / 180.0;
            const double ax = r.uniform(-lim, lim), ay = r.uniform(-lim, lim), az = r.uniform(-lim, lim);
            rot = rotation_matrix(ax, ay, az);
            spatial = true;
            const double k = 180.0 / std::numbers::pi;
            out.record["rotation_deg"] = {ax * k, ay * k, az * k};
        }
    }
    double scale = 1.0;
    {
        Rng r = rng.stream({0, 0, kScaling});
        if (r.bernoulli(p.scaling_prob)) {
            scale = r.uniform(p.scaling.lo, p.scaling.hi);
            spatial = true;
            out.record["scale"] = scale;
        }
    }
    Vec3 shift{};
    {
        Rng r = rng.stream({0, 0, kTranslation});
        if (r.bernoulli(p.translation_prob) && p.translation_vox > 0.0) {
            for (int a = 0; a < 3; ++a) shift[a] = r.uniform(-p.translation_vox, p.translation_vox) * g.spacing[a];
            spatial = true;
            out.record["translation_mm"] = {shift.x, shift.y, shift.z};
        }
    }

    out.image = img;
    out.mask = mask;
    if (spatial) {
        const Vec3 c = g.center_mm();
        DisplacementField pull(g);
        for (int k = 0; k < g.shape[2]; ++k)
            for (int j = 0; j < g.shape[1]; ++j)
                for (int i = 0; i < g.shape[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    const Vec3 x = g.voxel_center(i, j, k);
                    const Vec3 phi = c + mat_vec(rot, x - c) * scale + shift + elastic.at(idx);
                    out.field.set(idx, phi - x);
                    // fixed-point inverse: x = c + R^T (y - t - e(x) - c) / s
                    const Vec3& y = x;
                    Vec3 xi = c + mat_t_vec(rot, (y - shift - c) * (1.0 / scale));
                    for (int it = 0; it < 12; ++it)
                        xi = c + mat_t_vec(rot, (y - shift - elastic.sample_mm(xi) - c) * (1.0 / scale));
                    pull.set(idx, xi - y);
                }
        out.image = warp(out.image, pull);
        out.mask = warp(out.mask, pull);
    }

    // intensity, image only
    auto& data = out.image.data;
    {
        Rng r = rng.stream({0, 0, kNoise});
        if (r.bernoulli(p.noise_prob)) {
            const double variance = r.uniform(p.noise_variance.lo, p.noise_variance.hi);
            const double sd = std::sqrt(variance);
            for (auto& v : data) v = static_cast<float>(v + sd * r.normal());
            out.record["noise_variance"] = variance;
        }
    }
    {
        Rng r = rng.stream({0, 0, kBlur});
        if (r.bernoulli(p.blur_prob)) {
            Vec3 sigma_vox;
            for (int a = 0; a < 3; ++a) sigma_vox[a] = r.uniform(p.blur_sigma.lo, p.blur_sigma.hi);
            out.image = gaussian_blur(out.image, {hadamard(sigma_vox, g.spacing), 4.0});
            out.record["blur_sigma_vox"] = {sigma_vox.x, sigma_vox.y, sigma_vox.z};
        }
    }
    {
        Rng r = rng.stream({0, 0, kBrightness});
        if (r.bernoulli(p.brightness_prob)) {
            const double m = r.uniform(p.brightness.lo, p.brightness.hi);
            for (auto& v : data) v = static_cast<float>(v * m);
            out.record["brightness"] = m;
        }
    }
    {
        Rng r = rng.stream({0, 0, kContrast});
        if (r.bernoulli(p.contrast_prob)) {
            const double f = r.uniform(p.contrast.lo, p.contrast.hi);
            double mean = 0.0;
            for (float v : data) mean += v;
            mean /= static_cast<double>(data.size());
            const double lo = out.image.min_value(), hi = out.image.max_value();
            for (auto& v : data) v = static_cast<float>(std::clamp((v - mean) * f + mean, lo, hi));
            out.record["contrast"] = f;
        }
    }
    return out;
}

SyntheticTimepoint synthesize_followup(const Volume& img, const InstanceMask& mask, const LesionTransformParams& lesion_p,
                                       const ImageAugParams& aug_p, const Rng& rng) {
    auto prog = apply_lesion_progression(img, mask, lesion_p, rng);
    auto aug = image_level_augment(prog.image, prog.mask, aug_p, rng);
    SyntheticTimepoint out;
    out.image = std::move(aug.image);
    out.mask = std::move(aug.mask);
    out.total_field = compose(aug.field, prog.field);
    out.seed = rng.seed();
    out.params_used = {{"seed", rng.seed()},
                       {"lesion", to_json(lesion_p)},
                       {"augment", to_json(aug_p)},
                       {"sampled", {{"lesions", prog.record}, {"augment", aug.record}}}};
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range range_from(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw InvalidArgument(key + ": expected [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

double number_from(const nlohmann::json& j, const std::string& key) {
    if (!j.is_number()) throw InvalidArgument(key + ": expected a number");
    return j.get<double>();
}

template <class P>
using Setter = std::function<void(P&, const nlohmann::json&, const std::string&)>;

template <class P>
void apply_keys(P& p, const nlohmann::json& j, const std::map<std::string, Setter<P>>& setters, const char* what) {
    if (!j.is_object()) throw InvalidArgument(std::string(what) + " parameters must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw InvalidArgument(std::string("unknown ") + what + " parameter '" + key + "'");
        it->second(p, value, key);
    }
}

}  // namespace

nlohmann::json to_json(const LesionTransformParams& p) {
    nlohmann::json j = {{"sigma_s", p.sigma_s},
                        {"sigma_s_range", range_json(p.sigma_s_range)},
                        {"diameter_range_mm", range_json(p.diameter_range_mm)},
                        {"amplitude_shrink", range_json(p.amplitude_shrink)},
                        {"amplitude_grow", range_json(p.amplitude_grow)},
                        {"amplitude_mode", p.amplitude_mode == AmplitudeMode::Intervals ? "intervals" : "discrete"},
                        {"fixed_amplitude", nullptr},
                        {"r_range", range_json(p.r_range)},
                        {"sigma_r", p.sigma_r},
                        {"modulation", p.modulation == ModulationMode::OnePlus ? "one_plus" : "product"},
                        {"fixed_modulation", nullptr},
                        {"stages", {p.stages_min, p.stages_max}},
                        {"grow_probability", p.grow_probability},
                        {"per_lesion_amplitude", p.per_lesion_amplitude}};
    if (p.fixed_amplitude) j["fixed_amplitude"] = *p.fixed_amplitude;
    if (p.fixed_modulation) j["fixed_modulation"] = *p.fixed_modulation;
    return j;
}

nlohmann::json to_json(const ImageAugParams& p) {
    return {{"elastic_prob", p.elastic_prob},
            {"elastic_scale", p.elastic_scale},
            {"elastic_magnitude", p.elastic_magnitude},
            {"rotation_prob", p.rotation_prob},
            {"rotation_deg", p.rotation_deg},
            {"scaling_prob", p.scaling_prob},
            {"scaling", range_json(p.scaling)},
            {"translation_prob", p.translation_prob},
            {"translation_vox", p.translation_vox},
            {"noise_prob", p.noise_prob},
            {"noise_variance", range_json(p.noise_variance)},
            {"blur_prob", p.blur_prob},
            {"blur_sigma", range_json(p.blur_sigma)},
            {"brightness_prob", p.brightness_prob},
            {"brightness", range_json(p.brightness)},
            {"contrast_prob", p.contrast_prob},
            {"contrast", range_json(p.contrast)}};
}

void update_from_json(LesionTransformParams& p, const nlohmann::json& j) {
    using P = LesionTransformParams;
    using J = nlohmann::json;
    const std::map<std::string, Setter<P>> setters = {
        {"sigma_s", [](P& p, const J& v, const std::string& k) { p.sigma_s = number_from(v, k); }},
        {"sigma_s_range", [](P& p, const J& v, const std::string& k) { p.sigma_s_range = range_from(v, k); }},
        {"diameter_range_mm", [](P& p, const J& v, const std::string& k) { p.diameter_range_mm = range_from(v, k); }},
        {"amplitude_shrink", [](P& p, const J& v, const std::string& k) { p.amplitude_shrink = range_from(v, k); }},
        {"amplitude_grow", [](P& p, const J& v, const std::string& k) { p.amplitude_grow = range_from(v, k); }},
        {"amplitude_mode",
         [](P& p, const J& v, const std::string& k) {
             if (v == "intervals") p.amplitude_mode = AmplitudeMode::Intervals;
             else if (v == "discrete") p.amplitude_mode = AmplitudeMode::DiscreteSet;
             else throw InvalidArgument(k + ": expected \"intervals\" or \"discrete\"");
         }},
        {"fixed_amplitude",
         [](P& p, const J& v, const std::string& k) {
             if (v.is_null()) p.fixed_amplitude.reset();
             else p.fixed_amplitude = number_from(v, k);
         }},
        {"r_range", [](P& p, const J& v, const std::string& k) { p.r_range = range_from(v, k); }},
        {"sigma_r", [](P& p, const J& v, const std::string& k) { p.sigma_r = number_from(v, k); }},
        {"modulation",
         [](P& p, const J& v, const std::string& k) {
             if (v == "one_plus") p.modulation = ModulationMode::OnePlus;
             else if (v == "product") p.modulation = ModulationMode::Product;
             else throw InvalidArgument(k + ": expected \"one_plus\" or \"product\"");
         }},
        {"fixed_modulation",
         [](P& p, const J& v, const std::string& k) {
             if (v.is_null()) p.fixed_modulation.reset();
             else p.fixed_modulation = number_from(v, k);
         }},
        {"stages",
         [](P& p, const J& v, const std::string& k) {
             if (v.is_number_integer()) {
                 p.stages_min = p.stages_max = v.get<int>();
             } else {
                 const Range r = range_from(v, k);
                 p.stages_min = static_cast<int>(r.lo);
                 p.stages_max = static_cast<int>(r.hi);
             }
         }},
        {"grow_probability", [](P& p, const J& v, const std::string& k) { p.grow_probability = number_from(v, k); }},
        {"per_lesion_amplitude",
         [](P& p, const J& v, const std::string& k) {
             if (!v.is_boolean()) throw InvalidArgument(k + ": expected a boolean");
             p.per_lesion_amplitude = v.get<bool>();
         }},
    };
    apply_keys(p, j, setters, "lesion");
    p.validate();
}

void update_from_json(ImageAugParams& p, const nlohmann::json& j) {
    using P = ImageAugParams;
    using J = nlohmann::json;
    auto num = [](double P::*m) {
        return Setter<P>([m](P& p, const J& v, const std::string& k) { p.*m = number_from(v, k); });
    };
    auto rng = [](Range P::*m) {
        return Setter<P>([m](P& p, const J& v, const std::string& k) { p.*m = range_from(v, k); });
    };
    const std::map<std::string, Setter<P>> setters = {
        {"elastic_prob", num(&P::elastic_prob)},       {"elastic_scale", num(&P::elastic_scale)},
        {"elastic_magnitude", num(&P::elastic_magnitude)}, {"rotation_prob", num(&P::rotation_prob)},
        {"rotation_deg", num(&P::rotation_deg)},       {"scaling_prob", num(&P::scaling_prob)},
        {"scaling", rng(&P::scaling)},                 {"translation_prob", num(&P::translation_prob)},
        {"translation_vox", num(&P::translation_vox)}, {"noise_prob", num(&P::noise_prob)},
        {"noise_variance", rng(&P::noise_variance)},   {"blur_prob", num(&P::blur_prob)},
        {"blur_sigma", rng(&P::blur_sigma)},           {"brightness_prob", num(&P::brightness_prob)},
        {"brightness", rng(&P::brightness)},           {"contrast_prob", num(&P::contrast_prob)},
        {"contrast", rng(&P::contrast)},
    };
    apply_keys(p, j, setters, "augment");
    p.validate();
}

}  // namespace lesiontrack
