#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lesiontrack/error.hpp"
#include "lesiontrack/metrics.hpp"
#include "lesiontrack/nifti.hpp"
#include "lesiontrack/parallel.hpp"
#include "lesiontrack/phantom.hpp"
#include "lesiontrack/prompt.hpp"
#include "lesiontrack/registration.hpp"
#include "lesiontrack/synth.hpp"
#include "lesiontrack/tracking.hpp"

namespace py = pybind11;
using namespace lesiontrack;

// Arrays cross the boundary as (nx, ny, nz) in Fortran order, matching the x-fastest
// storage, so arr[i, j, k] is voxel (i, j, k).

namespace {

template <typename T>
using FArray = py::array_t<T, py::array::f_style | py::array::forcecast>;

Vec3 vec3(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
std::array<double, 3> arr3(const Vec3& v) { return {v.x, v.y, v.z}; }

GridRef grid_for(const py::buffer_info& info, const std::array<double, 3>& spacing,
                 const std::array<double, 3>& origin) {
    if (info.ndim != 3) throw InvalidArgument("expected a 3-D array");
    GridRef g{{static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]), static_cast<int>(info.shape[2])},
              vec3(spacing), vec3(origin)};
    g.validate();
    return g;
}

template <typename T>
py::array_t<T> to_numpy(const GridRef& g, const std::vector<T>& data) {
    py::array_t<T, py::array::f_style> out({g.shape[0], g.shape[1], g.shape[2]});
    std::copy(data.begin(), data.end(), out.mutable_data());
    return out;
}

template <typename T>
std::vector<T> from_numpy(const FArray<T>& a) {
    return std::vector<T>(a.data(), a.data() + a.size());
}

py::array_t<double> field_to_numpy(const DisplacementField& u) {
    const auto& s = u.grid.shape;
    py::array_t<double, py::array::f_style> out({s[0], s[1], s[2], 3});
    double* p = out.mutable_data();
    const std::size_t n = u.grid.size();
    for (int c = 0; c < 3; ++c) std::copy(u.comp[c].begin(), u.comp[c].end(), p + c * n);
    return out;
}

DisplacementField field_from_numpy(const FArray<double>& a, const std::array<double, 3>& spacing,
                                   const std::array<double, 3>& origin) {
    if (a.ndim() != 4 || a.shape(3) != 3) throw InvalidArgument("expected an (nx, ny, nz, 3) array");
    GridRef g{{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))},
              vec3(spacing), vec3(origin)};
    g.validate();
    DisplacementField u(g);
    const std::size_t n = g.size();
    for (int c = 0; c < 3; ++c) std::copy(a.data() + c * n, a.data() + (c + 1) * n, u.comp[c].begin());
    return u;
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
    if (o.is_none()) return nlohmann::json::object();
    const std::string s = py::module_::import("json").attr("dumps")(o).cast<std::string>();
    return nlohmann::json::parse(s);
}

BinaryMask binary_from(const FArray<std::uint8_t>& a, const GridRef& g) {
    if (a.ndim() != 3 || a.shape(0) != g.shape[0] || a.shape(1) != g.shape[1] || a.shape(2) != g.shape[2])
        throw GridMismatch("mask array shape does not match the grid");
    BinaryMask m(g, from_numpy(a));
    for (auto& v : m.data) v = v ? 1 : 0;
    return m;
}

}  // namespace

PYBIND11_MODULE(_lesiontrack, m) {
    m.doc() = "Longitudinal lesion tracking: volumes, registration, synthesis, tracking and metrics";

    static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", base);
    py::register_exception<FormatError>(m, "FormatError", base);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base);
    py::register_exception<GridMismatch>(m, "GridMismatch", base);
    py::register_exception<DegenerateInput>(m, "DegenerateInput", base);
    py::register_exception<RegistrationDiverged>(m, "RegistrationDiverged", base);

    py::class_<Volume>(m, "Volume")
        .def(py::init([](const FArray<float>& a, std::array<double, 3> spacing, std::array<double, 3> origin) {
                 return Volume(grid_for(a.request(), spacing, origin), from_numpy(a));
             }),
             py::arg("array"), py::arg("spacing") = std::array<double, 3>{1, 1, 1},
             py::arg("origin") = std::array<double, 3>{0, 0, 0})
        .def_property_readonly("array", [](const Volume& v) { return to_numpy(v.grid, v.data); })
        .def_property_readonly("shape", [](const Volume& v) { return v.grid.shape; })
        .def_property_readonly("spacing", [](const Volume& v) { return arr3(v.grid.spacing); })
        .def_property_readonly("origin", [](const Volume& v) { return arr3(v.grid.origin); })
        .def("__repr__", [](const Volume& v) { return "<Volume " + to_string(v.grid) + ">"; });

    py::class_<InstanceMask>(m, "InstanceMask")
        .def(py::init([](const FArray<std::uint16_t>& a, std::array<double, 3> spacing, std::array<double, 3> origin) {
                 return InstanceMask(grid_for(a.request(), spacing, origin), from_numpy(a));
             }),
             py::arg("array"), py::arg("spacing") = std::array<double, 3>{1, 1, 1},
             py::arg("origin") = std::array<double, 3>{0, 0, 0})
        .def_property_readonly("array", [](const InstanceMask& v) { return to_numpy(v.grid, v.labels); })
        .def_property_readonly("shape", [](const InstanceMask& v) { return v.grid.shape; })
        .def_property_readonly("spacing", [](const InstanceMask& v) { return arr3(v.grid.spacing); })
        .def_property_readonly("origin", [](const InstanceMask& v) { return arr3(v.grid.origin); })
        .def("labels", &InstanceMask::present_labels)
        .def("count", &InstanceMask::count, py::arg("label"))
        .def("__repr__", [](const InstanceMask& v) {
            return "<InstanceMask " + to_string(v.grid) + " lesions=" + std::to_string(v.num_instances()) + ">";
        });

    m.def("set_num_threads", &set_num_threads, py::arg("n"));
    m.def("num_threads", &num_threads);

    m.def("load_volume", [](const std::filesystem::path& p) { return load_volume(p); }, py::arg("path"));
    m.def("load_mask", [](const std::filesystem::path& p) { return load_mask(p); }, py::arg("path"));
    m.def("save_nifti", py::overload_cast<const Volume&, const std::filesystem::path&>(&save_nifti),
          py::arg("volume"), py::arg("path"));
    m.def("save_nifti", py::overload_cast<const InstanceMask&, const std::filesystem::path&>(&save_nifti),
          py::arg("mask"), py::arg("path"));

    m.def("gaussian_blur",
          [](const Volume& v, double sigma_mm, double truncation) { return gaussian_blur(v, KernelSpec{{sigma_mm, sigma_mm, sigma_mm}, truncation}); },
          py::arg("volume"), py::arg("sigma_mm"), py::arg("truncation") = 4.0);
    m.def("warp",
          [](const Volume& v, const FArray<double>& u, bool nearest) {
              const auto f = field_from_numpy(u, arr3(v.grid.spacing), arr3(v.grid.origin));
              return warp(v, f, nearest ? Interp::Nearest : Interp::Linear);
          },
          py::arg("volume"), py::arg("field"), py::arg("nearest") = false,
          "Pull-back warp out(x) = v(x + u(x)); the field lives on the volume's grid.");
    m.def("distance_transform",
          [](const FArray<std::uint8_t>& a, std::array<double, 3> spacing) {
              const GridRef g = grid_for(a.request(), spacing, {0, 0, 0});
              return to_numpy(g, distance_transform(binary_from(a, g)));
          },
          py::arg("mask"), py::arg("spacing") = std::array<double, 3>{1, 1, 1});
    m.def("connected_components",
          [](const FArray<std::uint8_t>& a, int connectivity) {
              const GridRef g = grid_for(a.request(), {1, 1, 1}, {0, 0, 0});
              return to_numpy(g, connected_components(binary_from(a, g), connectivity).labels);
          },
          py::arg("mask"), py::arg("connectivity") = 26);

    m.def("make_phantom",
          [](std::array<int, 3> shape, std::array<double, 3> spacing, int lesions, std::pair<double, double> radius,
             double contrast, double noise_std, double texture, std::uint64_t seed) {
              PhantomSpec s;
              s.shape = shape;
              s.spacing = vec3(spacing);
              s.lesions = lesions;
              s.radius_mm = {radius.first, radius.second};
              s.contrast = contrast;
              s.noise_std = noise_std;
              s.texture = texture;
              s.seed = seed;
              Phantom p = make_phantom(s);
              return py::make_tuple(std::move(p.image), std::move(p.mask));
          },
          py::arg("shape") = std::array<int, 3>{64, 64, 64}, py::arg("spacing") = std::array<double, 3>{1, 1, 1},
          py::arg("lesions") = 2, py::arg("radius_mm") = std::pair<double, double>{4.0, 8.0},
          py::arg("contrast") = 1.5, py::arg("noise_std") = 0.05, py::arg("texture") = 0.3, py::arg("seed") = 0,
          "Returns (image, mask).");

    m.def("synthesize_followup",
          [](const Volume& img, const InstanceMask& mask, std::uint64_t seed, const py::object& lesion,
             const py::object& augment, bool augment_off) {
              LesionTransformParams lp;
              ImageAugParams ap = augment_off ? ImageAugParams::off() : ImageAugParams{};
              update_from_json(lp, from_python(lesion));
              update_from_json(ap, from_python(augment));
              SyntheticTimepoint s;
              {
                  py::gil_scoped_release release;
                  s = synthesize_followup(img, mask, lp, ap, Rng(seed));
              }
              py::dict out;
              out["image"] = std::move(s.image);
              out["mask"] = std::move(s.mask);
              out["field"] = field_to_numpy(s.total_field);
              out["params_used"] = to_python(s.params_used);
              return out;
          },
          py::arg("image"), py::arg("mask"), py::arg("seed"), py::arg("lesion") = py::none(),
          py::arg("augment") = py::none(), py::arg("augment_off") = false,
          "Synthetic follow-up. `lesion` and `augment` are parameter dicts; returns image, mask, field, params_used.");

    m.def("ncc", &ncc, py::arg("a"), py::arg("b"));
    m.def("register_pair",
          [](const Volume& fixed, const Volume& moving, const py::object& config) {
              RegistrationConfig cfg;
              update_from_json(cfg, from_python(config));
              RegistrationResult r;
              {
                  py::gil_scoped_release release;
                  r = register_pair(fixed, moving, cfg);
              }
              py::dict out;
              out["u_fwd"] = field_to_numpy(r.u_fwd);
              out["u_bwd"] = field_to_numpy(r.u_bwd);
              out["diagnostics"] = to_python(diagnostics_json(r));
              return out;
          },
          py::arg("fixed"), py::arg("moving"), py::arg("config") = py::none(),
          "u_fwd (baseline grid) maps moving -> fixed, u_bwd (fixed grid) maps fixed -> moving.");

    m.def("ball_channel",
          [](const Volume& like, std::array<double, 3> center_mm, int radius) {
              return to_numpy(like.grid, ball_channel(like.grid, vec3(center_mm), radius).data);
          },
          py::arg("like"), py::arg("center_mm"), py::arg("radius_vox") = kBallRadius);
    m.def("simulate_point",
          [](const InstanceMask& mask, std::uint16_t label, std::uint64_t seed) {
              Rng r(seed);
              auto s = simulate_point(mask, label, r);
              return py::make_tuple(arr3(s.point), to_numpy(mask.grid, s.channel.data));
          },
          py::arg("mask"), py::arg("label"), py::arg("seed"), "Returns (point_mm, channel).");
    m.def("simulate_box",
          [](const InstanceMask& mask, std::uint16_t label, std::uint64_t seed, int max_offset) {
              Rng r(seed);
              auto s = simulate_box(mask, label, r, max_offset);
              return py::make_tuple(arr3(s.box.min), arr3(s.box.max), to_numpy(mask.grid, s.channel.data));
          },
          py::arg("mask"), py::arg("label"), py::arg("seed"), py::arg("max_offset") = 10,
          "Returns (min_mm, max_mm, channel).");

    m.def("segment_point",
          [](const Volume& img, std::array<double, 3> point_mm, const std::string& segmenter,
             std::array<int, 3> patch) {
              const auto seg = make_segmenter(segmenter);
              const SegmentResult r = segment_single(img, PointPrompt{vec3(point_mm)}, *seg, patch);
              return py::make_tuple(to_numpy(img.grid, r.mask.data), r.flags);
          },
          py::arg("image"), py::arg("point_mm"), py::arg("segmenter") = "baseline",
          py::arg("patch") = std::array<int, 3>{128, 128, 96}, "Returns (mask, flags).");

    m.def("track",
          [](const std::filesystem::path& manifest, const py::object& prompts, const std::string& mode,
             const std::string& segmenter, std::array<int, 3> patch, const py::object& registration) {
              const TimeSeries series = load_manifest(manifest, true);
              std::vector<InitialPrompt> initial;
              for (const auto& e : from_python(prompts)) {
                  if (!e.contains("lesion_id") || !e.contains("prompt"))
                      throw InvalidArgument("each prompt needs 'lesion_id' and 'prompt'");
                  initial.push_back({e["lesion_id"].get<std::uint16_t>(),
                                     prompt_from_json(e["prompt"], manifest.parent_path())});
              }
              TrackConfig cfg;
              cfg.mode = parse_track_mode(mode);
              cfg.patch_size = patch;
              update_from_json(cfg.registration, from_python(registration));
              const auto seg = make_segmenter(segmenter);
              TrackingResult r;
              {
                  py::gil_scoped_release release;
                  r = track(series, initial, *seg, cfg);
              }
              py::list masks;
              for (const auto& tp : r.timepoints) masks.append(tp.combined());
              return py::make_tuple(to_python(to_json(r)), masks);
          },
          py::arg("manifest"), py::arg("prompts"), py::arg("mode") = "mask", py::arg("segmenter") = "baseline",
          py::arg("patch") = std::array<int, 3>{128, 128, 96}, py::arg("registration") = py::none(),
          "Returns (report, masks) with one combined InstanceMask per timepoint.");

    m.def("dice",
          [](const InstanceMask& a, const InstanceMask& b) { return dice(binary_of(a), binary_of(b)); },
          py::arg("a"), py::arg("b"));
    m.def("nsd",
          [](const InstanceMask& a, const InstanceMask& b, double tol) { return nsd(binary_of(a), binary_of(b), tol); },
          py::arg("a"), py::arg("b"), py::arg("tol_mm") = 2.0);
    m.def("match_lesions",
          [](const InstanceMask& gt, const InstanceMask& pred, double threshold) {
              const LesionMatch lm = match_lesions(gt, pred, threshold);
              py::list pairs;
              for (const auto& p : lm.pairs) pairs.append(py::make_tuple(p.gt, p.pred, p.distance_mm));
              py::dict out;
              out["pairs"] = pairs;
              out["unmatched_gt"] = lm.unmatched_gt;
              out["unmatched_pred"] = lm.unmatched_pred;
              return out;
          },
          py::arg("gt"), py::arg("pred"), py::arg("threshold_mm") = 25.0);
    m.def("evaluate",
          [](const std::vector<std::tuple<std::string, std::string, InstanceMask, InstanceMask>>& scans,
             double threshold, double nsd_tol, const std::string& total, const std::string& aggregation) {
              MetricOptions o{threshold, nsd_tol,
                              total == "pooled" ? TotalDiceMode::Pooled : TotalDiceMode::PerLesion};
              if (total != "pooled" && total != "per_lesion") throw InvalidArgument("total_dice must be per_lesion or pooled");
              if (aggregation != "patient" && aggregation != "scan")
                  throw InvalidArgument("aggregation must be patient or scan");
              std::vector<ScanMetrics> rows;
              for (const auto& [pid, scan, gt, pred] : scans) rows.push_back(evaluate_scan(pid, scan, gt, pred, o));
              return to_python(
                  to_json(aggregate(rows, aggregation == "scan" ? Aggregation::ScanMean : Aggregation::PatientMean, o)));
          },
          py::arg("scans"), py::arg("threshold_mm") = 25.0, py::arg("nsd_tolerance_mm") = 2.0,
          py::arg("total_dice") = "per_lesion", py::arg("aggregation") = "patient",
          "scans: list of (patient_id, scan_name, gt, pred). Returns the metric report dict.");
}
