#pragma once

#include <vector>

#include <json.hpp>

#include "lesiontrack/error.hpp"
#include "lesiontrack/field.hpp"

namespace lesiontrack {

enum class Similarity {
    GlobalNcc,  ///< zero-mean NCC over the whole grid
    LocalNcc,   ///< Gaussian-windowed NCC averaged over voxels
};

struct RegistrationConfig {
    Shape3 work_shape{175, 175, 175};
    std::vector<int> levels{4, 2, 1};            ///< downsample factors, coarse to fine
    std::vector<int> iters_per_level{100, 100, 50};
    /// GradICON weight. Not stated alongside the loss it comes from; 1.5 is the
    /// usual GradICON setting.
    double lambda = 1.5;
    double step_size = 0.5;           ///< initial max update per step, in level voxels
    double max_step = 2.0;            ///< cap for the adaptive step, in level voxels
    double convergence_tol = 1e-6;    ///< relative objective decrease counted as stalled
    int patience = 8;                 ///< stalled accepted steps before a level stops
    double grad_smoothing = 2.0;      ///< Gaussian sigma (level voxels) applied to raw gradients; 0 = off
    Similarity similarity = Similarity::GlobalNcc;
    double local_window = 2.0;        ///< LocalNcc window sigma in level voxels
    int divergence_patience = 5;      ///< consecutive non-finite trial steps before aborting

    /// Throws InvalidArgument on inconsistent settings.
    void validate() const;
};

struct RegistrationResult {
    DisplacementField u_fwd;  ///< baseline (moving) -> follow-up (fixed), on the moving grid
    DisplacementField u_bwd;  ///< follow-up (fixed) -> baseline (moving), on the fixed grid
    double initial_objective = 0.0;
    double final_objective = 0.0;
    double ncc_fwd = 0.0;  ///< ncc(moving, fixed warped by u_fwd)
    double ncc_bwd = 0.0;  ///< ncc(fixed, moving warped by u_bwd)
    double gradicon_residual = 0.0;
    std::vector<std::vector<double>> per_level_history;
    int iterations = 0;
    double seconds = 0.0;
};

/// Optimisation produced non-finite values; `partial` holds the last good state.
class RegistrationDiverged : public Error {
public:
    RegistrationDiverged(const std::string& msg, RegistrationResult partial)
        : Error(msg), partial_(std::move(partial)) {}
    const RegistrationResult& partial() const { return partial_; }

private:
    RegistrationResult partial_;
};

/// Global zero-mean normalised cross correlation in [-1, 1].
double ncc(const Volume& a, const Volume& b);

/// Per-voxel ||J(phi_ab o phi_ba) - I||_F^2 on u_ba's grid.
std::vector<double> gradicon_residual_map(const DisplacementField& u_ab, const DisplacementField& u_ba);

/// Mean of gradicon_residual_map.
double gradicon_penalty(const DisplacementField& u_ab, const DisplacementField& u_ba);

/// Value and (optionally) gradient of the symmetric registration loss
///   [1 - sim(fixed, moving o u_bwd)] + [1 - sim(moving, fixed o u_fwd)]
///   + lambda * [gradicon(u_fwd, u_bwd) + gradicon(u_bwd, u_fwd)].
/// All four inputs must share one grid. Gradients are d(loss)/d(u) per mm.
struct ObjectiveValue {
    double value = 0.0;
    double sim_bwd = 0.0;  ///< similarity of (fixed, moving o u_bwd)
    double sim_fwd = 0.0;  ///< similarity of (moving, fixed o u_fwd)
    double gradicon = 0.0;  ///< unweighted sum of both penalties
    DisplacementField grad_fwd;
    DisplacementField grad_bwd;
};

struct ObjectiveOptions {
    double lambda = 1.5;
    Similarity similarity = Similarity::GlobalNcc;
    double local_window = 2.0;  ///< voxels
};

ObjectiveValue evaluate_objective(const Volume& fixed, const Volume& moving, const DisplacementField& u_fwd,
                                  const DisplacementField& u_bwd, const ObjectiveOptions& opts, bool with_gradient);

/// Loss value with global NCC.
double objective(const Volume& fixed, const Volume& moving, const DisplacementField& u_fwd,
                 const DisplacementField& u_bwd, double lambda);

/// Grid both images are resampled onto: the union of their physical extents at
/// `work_shape` voxels.
GridRef registration_work_grid(const GridRef& fixed, const GridRef& moving, const Shape3& work_shape);

nlohmann::json to_json(const RegistrationConfig& cfg);
/// Keys absent from `j` keep their current values; unknown keys throw InvalidArgument.
void update_from_json(RegistrationConfig& cfg, const nlohmann::json& j);
/// Diagnostics block written next to the fields (no field data).
nlohmann::json diagnostics_json(const RegistrationResult& r);

/// Symmetric multi-resolution deformable registration of `moving` (baseline) onto
/// `fixed` (follow-up). Throws DegenerateInput on constant images and
/// RegistrationDiverged when the optimiser produces non-finite values.
RegistrationResult register_pair(const Volume& fixed, const Volume& moving, const RegistrationConfig& cfg = {});

}  // namespace lesiontrack
