#pragma once

#include <cstdint>

#include "lesiontrack/synth.hpp"

namespace lesiontrack {

/// Synthetic CT-like test volume: an ellipsoidal body (0) in air (-1) with smooth
/// low-amplitude texture, plus ellipsoidal lesions at `contrast` above the body.
struct PhantomSpec {
    Shape3 shape{64, 64, 64};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    int lesions = 2;
    Range radius_mm{4.0, 8.0};
    double contrast = 1.5;
    double noise_std = 0.05;
    double texture = 0.3;  ///< peak amplitude of the smooth body texture
    std::uint64_t seed = 0;

    /// Throws InvalidArgument when the lesions cannot fit in the body.
    void validate() const;
};

struct Phantom {
    Volume image;
    InstanceMask mask;
};

/// Deterministic in `spec.seed`. Lesions do not overlap and lie inside the body.
Phantom make_phantom(const PhantomSpec& spec);

/// Ball of `radius_mm` (label 1) on a zero background, image = contrast inside.
Phantom sphere_phantom(const GridRef& g, const Vec3& center_mm, double radius_mm, float contrast = 1.0f);

}  // namespace lesiontrack
