#pragma once

#include <cstdint>
#include <optional>

#include <json.hpp>

#include "lesiontrack/field.hpp"
#include "lesiontrack/rng.hpp"

namespace lesiontrack {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

enum class AmplitudeMode {
    Intervals,    ///< shrink ~ U(shrink), grow ~ U(grow), chosen by grow_probability
    DiscreteSet,  ///< one of {shrink.lo, shrink.hi, grow.lo, grow.hi}, same sign rule
};

enum class ModulationMode {
    OnePlus,  ///< A(x) = A * (1 + G_r * r)
    Product,  ///< A(x) = A * (G_r * r), the literal form; zero-mean for symmetric r
};

struct LesionTransformParams {
    /// 0 derives sigma_s per lesion from its equivalent diameter.
    double sigma_s = 0.0;
    Range sigma_s_range{4.0, 5.5};
    Range diameter_range_mm{5.0, 60.0};
    Range amplitude_shrink{-22.0, -18.0};
    Range amplitude_grow{15.0, 25.0};
    AmplitudeMode amplitude_mode = AmplitudeMode::Intervals;
    /// Replaces the sampled base amplitude (sign included) when set.
    std::optional<double> fixed_amplitude;
    Range r_range{-3.5, 3.5};
    double sigma_r = 3.0;  ///< mm
    ModulationMode modulation = ModulationMode::OnePlus;
    /// Replaces the whole multiplier A(x) / A by a constant when set.
    std::optional<double> fixed_modulation;
    int stages_min = 1;
    int stages_max = 3;
    double grow_probability = 0.5;
    /// Draw the base amplitude per lesion instead of once per image.
    bool per_lesion_amplitude = false;

    void validate() const;
};

struct ImageAugParams {
    double elastic_prob = 1.0;
    double elastic_scale = 0.05;      ///< smoothing sigma as a fraction of the image extent
    double elastic_magnitude = 0.05;  ///< peak displacement as a fraction of the half extent
    double rotation_prob = 1.0;
    double rotation_deg = 5.0;        ///< each of three angles ~ U(-deg, deg)
    double scaling_prob = 0.5;
    Range scaling{0.95, 1.05};        ///< one factor shared by all axes
    double translation_prob = 1.0;
    double translation_vox = 5.0;
    double noise_prob = 1.0;
    Range noise_variance{0.0, 0.05};
    double blur_prob = 0.1;
    Range blur_sigma{0.1, 0.2};       ///< voxels, drawn per axis
    double brightness_prob = 0.15;
    Range brightness{0.75, 1.25};
    double contrast_prob = 0.15;
    Range contrast{0.75, 1.25};

    /// Every transform disabled.
    static ImageAugParams off();
    void validate() const;
};

struct SyntheticTimepoint {
    Volume image;
    InstanceMask mask;
    DisplacementField total_field;  ///< forward map baseline -> follow-up, baseline grid
    std::uint64_t seed = 0;
    nlohmann::json params_used;
};

/// Multiplier A(x) / A on `g`: 1 + G_r * r, G_r * r, or the fixed constant.
std::vector<double> modulation_field(const GridRef& g, const LesionTransformParams& p, Rng rng);

/// -A(x) * grad(G_sigma_s * S) for the indicator S. Positive amplitude pushes the
/// boundary outwards. `modulation` may be empty (treated as 1).
DisplacementField lesion_field(const BinaryMask& indicator, double sigma_s_mm, double amplitude,
                               const std::vector<double>& modulation);

/// sigma_s for a lesion of `voxels` voxels on `g` (equivalent-sphere diameter map).
double sigma_from_size(std::size_t voxels, const GridRef& g, const LesionTransformParams& p);

/// Samples a base amplitude according to `p`.
double sample_amplitude(const LesionTransformParams& p, Rng& rng);

/// Single-stage lesion field for `label` with sampled amplitude and modulation.
/// Throws InvalidArgument when the label is absent.
DisplacementField lesion_deformation_field(const InstanceMask& mask, std::uint16_t label,
                                           const LesionTransformParams& p, const Rng& rng);

struct ProgressionResult {
    Volume image;
    InstanceMask mask;
    DisplacementField field;  ///< composed forward field of all stages
    nlohmann::json record;
};

/// Multi-stage growth/shrinkage of every lesion. Throws DegenerateInput without lesions.
ProgressionResult apply_lesion_progression(const Volume& img, const InstanceMask& mask,
                                           const LesionTransformParams& p, const Rng& rng);

struct AugmentResult {
    Volume image;
    InstanceMask mask;
    DisplacementField field;  ///< forward spatial map
    nlohmann::json record;
};

AugmentResult image_level_augment(const Volume& img, const InstanceMask& mask, const ImageAugParams& p,
                                  const Rng& rng);

SyntheticTimepoint synthesize_followup(const Volume& img, const InstanceMask& mask,
                                       const LesionTransformParams& lesion_p, const ImageAugParams& aug_p,
                                       const Rng& rng);

nlohmann::json to_json(const LesionTransformParams& p);
nlohmann::json to_json(const ImageAugParams& p);
/// Keys absent from `j` keep the values already in `p`; unknown keys throw InvalidArgument.
void update_from_json(LesionTransformParams& p, const nlohmann::json& j);
void update_from_json(ImageAugParams& p, const nlohmann::json& j);

}  // namespace lesiontrack
