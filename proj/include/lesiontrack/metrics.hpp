#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesiontrack/field.hpp"

namespace lesiontrack {

/// 2|A and B| / (|A| + |B|); 1 when both are empty, 0 when exactly one is.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Foreground voxels with a 6-neighbour in the background or outside the grid.
BinaryMask surface(const BinaryMask& m);

/// Normalised surface Dice at `tol_mm`, surface points at voxel centres.
double nsd(const BinaryMask& a, const BinaryMask& b, double tol_mm = 2.0);

struct LesionPair {
    std::uint16_t gt = 0;
    std::uint16_t pred = 0;
    double distance_mm = 0.0;
};

struct LesionMatch {
    std::vector<LesionPair> pairs;  ///< ordered by gt label
    std::vector<std::uint16_t> unmatched_gt;
    std::vector<std::uint16_t> unmatched_pred;
    double threshold_mm = 25.0;
};

struct LabelledPoint {
    std::uint16_t label = 0;
    Point3 mm;
};

/// One-to-one assignment with the distance gate: the largest number of pairs within
/// `threshold_mm`, and among those the smallest total distance (Hungarian algorithm).
LesionMatch match_points(const std::vector<LabelledPoint>& gt, const std::vector<LabelledPoint>& pred,
                         double threshold_mm = 25.0);

/// match_points on instance centroids.
LesionMatch match_lesions(const InstanceMask& gt, const InstanceMask& pred, double threshold_mm = 25.0);

/// 100 * pairs / total_gt; absent when total_gt is 0.
std::optional<double> cpm(const LesionMatch& m, std::size_t total_gt);

/// Mean Dice over matched pairs; absent without pairs.
std::optional<double> dice_at_25(const LesionMatch& m, const InstanceMask& gt, const InstanceMask& pred);

/// Mean paired centroid distance in mm; absent without pairs.
std::optional<double> med(const LesionMatch& m);

enum class TotalDiceMode {
    PerLesion,  ///< mean over gt lesions, unmatched lesions count 0
    Pooled,     ///< Dice of all gt voxels against all predicted voxels
};

/// Absent when there are no gt lesions.
std::optional<double> total_dice(const LesionMatch& m, const InstanceMask& gt, const InstanceMask& pred,
                                 TotalDiceMode mode = TotalDiceMode::PerLesion);

struct MetricValues {
    std::optional<double> dice;
    std::optional<double> nsd;
    std::optional<double> cpm_at_25;
    std::optional<double> dice_at_25;
    std::optional<double> med_mm;
    std::optional<double> total_dice;
};

struct LesionRow {
    std::uint16_t gt = 0;
    std::uint16_t pred = 0;  ///< 0 when unmatched
    std::optional<double> distance_mm;
    double dice = 0.0;
};

struct ScanMetrics {
    std::string patient_id;
    std::string scan;
    MetricValues values;
    std::size_t n_gt = 0;
    std::size_t n_pred = 0;
    std::size_t n_pairs = 0;
    std::vector<LesionRow> rows;
};

struct MetricOptions {
    double threshold_mm = 25.0;
    double nsd_tolerance_mm = 2.0;
    TotalDiceMode total_dice_mode = TotalDiceMode::PerLesion;
};

/// All scan-level metrics. dice and nsd compare the union foregrounds.
ScanMetrics evaluate_scan(const std::string& patient_id, const std::string& scan, const InstanceMask& gt,
                          const InstanceMask& pred, const MetricOptions& opts = {});

enum class Aggregation {
    PatientMean,  ///< scan means per patient, then equal patient weights
    ScanMean,     ///< every scan weighted equally
};

struct PatientMetrics {
    std::string patient_id;
    std::size_t n_scans = 0;
    MetricValues values;
};

struct MetricReport {
    std::vector<ScanMetrics> per_scan;        ///< sorted by (patient, scan)
    std::vector<PatientMetrics> per_patient;  ///< sorted by patient
    MetricValues overall;
    std::size_t n_patients = 0;
    std::size_t n_scans = 0;
    std::size_t n_gt_lesions = 0;
    std::size_t n_pred_lesions = 0;
    std::size_t n_pairs = 0;
    /// scans whose value was absent, per metric name
    std::vector<std::pair<std::string, std::size_t>> excluded;
    Aggregation aggregation = Aggregation::PatientMean;
    MetricOptions options;
};

/// Throws InvalidArgument on an empty input. Independent of input order.
MetricReport aggregate(std::vector<ScanMetrics> scans, Aggregation mode = Aggregation::PatientMean,
                       const MetricOptions& opts = {});

nlohmann::json to_json(const MetricValues& v);
nlohmann::json to_json(const MetricReport& r);
/// One row per gt lesion and per unmatched prediction.
std::string lesion_csv(const MetricReport& r);

}  // namespace lesiontrack
