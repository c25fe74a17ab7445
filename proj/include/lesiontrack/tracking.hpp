#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesiontrack/prompt.hpp"
#include "lesiontrack/registration.hpp"

namespace lesiontrack {

/// f_theta: (image patch, prompt channel) -> binary mask on the patch grid.
struct SegmentOutput {
    BinaryMask mask;
    std::vector<std::string> flags;
};

class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual std::string name() const = 0;
    virtual SegmentOutput segment(const Volume& patch, const PromptChannel& channel) const = 0;
};

struct BaselineSegmenterConfig {
    double k = 2.5;         ///< band half-width in robust standard deviations
    int closing_radius = 1; ///< voxels, 6-connected structuring element
    /// |prompt median - surrounding median| below this many robust sds yields an empty mask
    double min_contrast = 1.0;
};

/// Classical stand-in: intensity band from the prompt's robust statistics,
/// 6-connected region growing from the prompt, closing, and the component that
/// overlaps the prompt most. Prompts without contrast to their surroundings give
/// an empty mask flagged low_confidence.
class BaselineSegmenter : public Segmenter {
public:
    explicit BaselineSegmenter(BaselineSegmenterConfig cfg = {}) : cfg_(cfg) {}
    std::string name() const override { return "baseline"; }
    SegmentOutput segment(const Volume& patch, const PromptChannel& channel) const override;

private:
    BaselineSegmenterConfig cfg_;
};

/// Returns its prompt channel unchanged. Useful as an oracle in tests.
class ChannelEchoSegmenter : public Segmenter {
public:
    std::string name() const override { return "echo"; }
    SegmentOutput segment(const Volume& patch, const PromptChannel& channel) const override;
};

/// "baseline" or "echo".
std::unique_ptr<Segmenter> make_segmenter(const std::string& name);

struct SegmentResult {
    BinaryMask mask;  ///< native grid
    Placement placement;
    std::vector<std::string> flags;
};

/// Crop around the prompt centre, rasterise the prompt on the patch, segment, paste back.
/// Throws InvalidArgument when the prompt centre lies outside the image.
SegmentResult segment_single(const Volume& img, const Prompt& p, const Segmenter& seg, const Shape3& patch_size);

struct ScanEntry {
    int t = 0;
    std::filesystem::path image_path;
    std::optional<std::filesystem::path> gt_mask_path;
    std::optional<std::filesystem::path> pred_mask_path;
};

struct TimeSeries {
    std::string patient_id;
    std::vector<ScanEntry> scans;
    std::vector<Volume> images;  ///< loaded images, parallel to scans
};

/// Reads {"patient_id", "scans": [{"t", "image", "gt_mask"?, "pred_mask"?}, ...]}; relative
/// paths resolve against the manifest's directory. Images are loaded; masks are not.
TimeSeries load_manifest(const std::filesystem::path& path, bool load_images = true);
nlohmann::json manifest_json(const TimeSeries& s);

enum class TrackMode { Mask, Point, Box };

TrackMode parse_track_mode(const std::string& s);
std::string to_string(TrackMode m);

struct TrackConfig {
    TrackMode mode = TrackMode::Mask;
    Shape3 patch_size{128, 128, 96};
    RegistrationConfig registration;
};

struct PairDiagnostics {
    int from_t = 0;
    int to_t = 0;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    double ncc_fwd = 0.0;
    double ncc_bwd = 0.0;
    double gradicon_residual = 0.0;
    double seconds = 0.0;
    int iterations = 0;
    bool identity_fallback = false;
    std::string warning;
};

struct LesionTimepoint {
    std::uint16_t lesion_id = 0;
    BinaryMask mask;  ///< native grid of the scan
    nlohmann::json prompt;
    bool empty = false;
    bool fallback_prompt = false;
    std::vector<std::string> flags;
};

struct TimepointResult {
    int t = 0;
    std::optional<PairDiagnostics> registration;
    std::vector<LesionTimepoint> lesions;

    /// Lesions merged into one instance mask (label = lesion id; earlier ids win overlaps).
    InstanceMask combined() const;
};

struct TrackingResult {
    std::string patient_id;
    TrackMode mode = TrackMode::Mask;
    std::string segmenter;
    std::vector<TimepointResult> timepoints;
};

struct InitialPrompt {
    std::uint16_t lesion_id = 1;
    Prompt prompt;
};

/// Autoregressive register -> propagate -> crop -> segment -> paste over consecutive pairs.
TrackingResult track(const TimeSeries& series, const std::vector<InitialPrompt>& prompts, const Segmenter& seg,
                     const TrackConfig& cfg);

nlohmann::json to_json(const TrackingResult& r);

}  // namespace lesiontrack
