#include <fstream>

#include "lesiontrack/error.hpp"
#include "lesiontrack/nifti.hpp"
#include "lesiontrack/tracking.hpp"

namespace lesiontrack {

TimeSeries load_manifest(const std::filesystem::path& path, bool load_images) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    auto bad = [&](const std::string& why) { return InvalidArgument("manifest " + path.string() + ": " + why); };
    if (!j.is_object()) throw bad("expected a JSON object");
    if (!j.contains("patient_id") || !j["patient_id"].is_string()) throw bad("missing string 'patient_id'");
    if (!j.contains("scans") || !j["scans"].is_array() || j["scans"].empty()) throw bad("'scans' must be a non-empty array");
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path q = p;
        return q.is_relative() ? base / q : q;
    };
    TimeSeries s;
    s.patient_id = j["patient_id"].get<std::string>();
    for (const auto& e : j["scans"]) {
        if (!e.is_object() || !e.contains("t") || !e["t"].is_number_integer()) throw bad("each scan needs an integer 't'");
        if (!e.contains("image") || !e["image"].is_string()) throw bad("each scan needs a string 'image'");
        ScanEntry entry;
        entry.t = e["t"].get<int>();
        entry.image_path = resolve(e["image"].get<std::string>());
        if (e.contains("gt_mask") && !e["gt_mask"].is_null()) {
            if (!e["gt_mask"].is_string()) throw bad("'gt_mask' must be a string");
            entry.gt_mask_path = resolve(e["gt_mask"].get<std::string>());
        }
        if (e.contains("pred_mask") && !e["pred_mask"].is_null()) {
            if (!e["pred_mask"].is_string()) throw bad("'pred_mask' must be a string");
            entry.pred_mask_path = resolve(e["pred_mask"].get<std::string>());
        }
        if (!s.scans.empty() && entry.t <= s.scans.back().t) throw bad("timepoints must be strictly increasing");
        s.scans.push_back(std::move(entry));
    }
    if (load_images)
        for (const auto& e : s.scans) s.images.push_back(load_volume(e.image_path));
    return s;
}

nlohmann::json manifest_json(const TimeSeries& s) {
    nlohmann::json scans = nlohmann::json::array();
    for (const auto& e : s.scans) {
        nlohmann::json o = {{"t", e.t}, {"image", e.image_path.string()}};
        if (e.gt_mask_path) o["gt_mask"] = e.gt_mask_path->string();
        if (e.pred_mask_path) o["pred_mask"] = e.pred_mask_path->string();
        scans.push_back(o);
    }
    return {{"patient_id", s.patient_id}, {"scans", scans}};
}

}  // namespace lesiontrack
