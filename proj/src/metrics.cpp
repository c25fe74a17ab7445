#include "lesiontrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "lesiontrack/error.hpp"

namespace lesiontrack {

double dice(const BinaryMask& a, const BinaryMask& b) {
    require_same_grid(a.grid, b.grid, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] != 0, y = b.data[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

BinaryMask surface(const BinaryMask& m) {
    const GridRef& g = m.grid;
    BinaryMask out(g);
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i) {
                if (!m.at(i, j, k)) continue;
                const bool edge = i == 0 || j == 0 || k == 0 || i == g.shape[0] - 1 || j == g.shape[1] - 1 ||
                                  k == g.shape[2] - 1;
                const bool bg = edge || !m.at(i - 1, j, k) || !m.at(i + 1, j, k) || !m.at(i, j - 1, k) ||
                                !m.at(i, j + 1, k) || !m.at(i, j, k - 1) || !m.at(i, j, k + 1);
                if (bg) out.at(i, j, k) = 1;
            }
    return out;
}

double nsd(const BinaryMask& a, const BinaryMask& b, double tol_mm) {
    require_same_grid(a.grid, b.grid, "nsd");
    if (!(tol_mm >= 0.0)) throw InvalidArgument("nsd: tolerance must be >= 0");
    const bool ea = a.empty(), eb = b.empty();
    if (ea && eb) return 1.0;
    if (ea || eb) return 0.0;
    const BinaryMask sa = surface(a), sb = surface(b);
    const auto da = distance_transform(sa), db = distance_transform(sb);
    std::size_t na = 0, nb = 0, close = 0;
    for (std::size_t i = 0; i < sa.data.size(); ++i) {
        if (sa.data[i]) {
            ++na;
            close += db[i] <= tol_mm;
        }
        if (sb.data[i]) {
            ++nb;
            close += da[i] <= tol_mm;
        }
    }
    return static_cast<double>(close) / static_cast<double>(na + nb);
}

namespace {

/// Minimum-cost perfect assignment on a square matrix; returns column of each row.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) col[p[j] - 1] = j - 1;
    return col;
}

std::vector<LabelledPoint> centroids(const InstanceMask& m) {
    std::vector<LabelledPoint> out;
    for (auto l : m.present_labels()) out.push_back({l, centroid(m, l)});
    return out;
}

const LesionPair* pair_for_gt(const LesionMatch& m, std::uint16_t gt) {
    for (const auto& p : m.pairs)
        if (p.gt == gt) return &p;
    return nullptr;
}

}  // namespace

LesionMatch match_points(const std::vector<LabelledPoint>& gt, const std::vector<LabelledPoint>& pred,
                         double threshold_mm) {
    if (!(threshold_mm >= 0.0)) throw InvalidArgument("match: threshold must be >= 0");
    auto sorted = [](std::vector<LabelledPoint> v) {
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
        return v;
    };
    const auto g = sorted(gt), p = sorted(pred);
    LesionMatch out;
    out.threshold_mm = threshold_mm;
    const std::size_t n = std::max(g.size(), p.size());
    std::vector<char> gt_used(g.size(), 0), pred_used(p.size(), 0);
    if (n > 0) {
        // Gated-out and dummy cells cost more than any set of admissible pairs, so the
        // optimum first maximises the number of pairs, then minimises their total distance.
        const double big = (static_cast<double>(n) + 1.0) * (threshold_mm + 1.0);
        std::vector<std::vector<double>> cost(n, std::vector<double>(n, big));
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double d = distance(g[i].mm, p[j].mm);
                if (d <= threshold_mm) cost[i][j] = d;
            }
        const auto col = hungarian(cost);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const int j = col[i];
            if (j < 0 || static_cast<std::size_t>(j) >= p.size() || cost[i][j] >= big) continue;
            out.pairs.push_back({g[i].label, p[j].label, cost[i][j]});
            gt_used[i] = 1;
            pred_used[j] = 1;
        }
    }
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!gt_used[i]) out.unmatched_gt.push_back(g[i].label);
    for (std::size_t j = 0; j < p.size(); ++j)
        if (!pred_used[j]) out.unmatched_pred.push_back(p[j].label);
    return out;
}

LesionMatch match_lesions(const InstanceMask& gt, const InstanceMask& pred, double threshold_mm) {
    require_same_grid(gt.grid, pred.grid, "match_lesions");
    return match_points(centroids(gt), centroids(pred), threshold_mm);
}

std::optional<double> cpm(const LesionMatch& m, std::size_t total_gt) {
    if (total_gt == 0) return std::nullopt;
    if (m.pairs.size() > total_gt) throw InvalidArgument("cpm: more pairs than ground-truth lesions");
    return 100.0 * static_cast<double>(m.pairs.size()) / static_cast<double>(total_gt);
}

std::optional<double> dice_at_25(const LesionMatch& m, const InstanceMask& gt, const InstanceMask& pred) {
    if (m.pairs.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& p : m.pairs) s += dice(binary_of(gt, p.gt), binary_of(pred, p.pred));
    return s / static_cast<double>(m.pairs.size());
}

std::optional<double> med(const LesionMatch& m) {
    if (m.pairs.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& p : m.pairs) s += p.distance_mm;
    return s / static_cast<double>(m.pairs.size());
}

std::optional<double> total_dice(const LesionMatch& m, const InstanceMask& gt, const InstanceMask& pred,
                                 TotalDiceMode mode) {
    const auto labels = gt.present_labels();
    if (labels.empty()) return std::nullopt;
    if (mode == TotalDiceMode::Pooled) return dice(binary_of(gt), binary_of(pred));
    double s = 0.0;
    for (auto l : labels)
        if (const auto* p = pair_for_gt(m, l)) s += dice(binary_of(gt, l), binary_of(pred, p->pred));
    return s / static_cast<double>(labels.size());
}

ScanMetrics evaluate_scan(const std::string& patient_id, const std::string& scan, const InstanceMask& gt,
                          const InstanceMask& pred, const MetricOptions& opts) {
    if (!(gt.grid == pred.grid))
        throw GridMismatch("scan '" + scan + "' of patient '" + patient_id + "': prediction grid " +
                           to_string(pred.grid) + " differs from ground truth grid " + to_string(gt.grid));
    ScanMetrics s;
    s.patient_id = patient_id;
    s.scan = scan;
    const auto match = match_lesions(gt, pred, opts.threshold_mm);
    const BinaryMask ga = binary_of(gt), pa = binary_of(pred);
    s.n_gt = gt.present_labels().size();
    s.n_pred = pred.present_labels().size();
    s.n_pairs = match.pairs.size();
    s.values.dice = dice(ga, pa);
    s.values.nsd = nsd(ga, pa, opts.nsd_tolerance_mm);
    s.values.cpm_at_25 = cpm(match, s.n_gt);
    s.values.dice_at_25 = dice_at_25(match, gt, pred);
    s.values.med_mm = med(match);
    s.values.total_dice = total_dice(match, gt, pred, opts.total_dice_mode);
    for (auto l : gt.present_labels()) {
        LesionRow row;
        row.gt = l;
        if (const auto* p = pair_for_gt(match, l)) {
            row.pred = p->pred;
            row.distance_mm = p->distance_mm;
            row.dice = dice(binary_of(gt, l), binary_of(pred, p->pred));
        }
        s.rows.push_back(row);
    }
    for (auto l : match.unmatched_pred) s.rows.push_back({0, l, std::nullopt, 0.0});
    return s;
}

namespace {

using Member = std::optional<double> MetricValues::*;

const std::vector<std::pair<std::string, Member>>& metric_members() {
    static const std::vector<std::pair<std::string, Member>> m = {
        {"dice", &MetricValues::dice},           {"nsd", &MetricValues::nsd},
        {"cpm_at_25", &MetricValues::cpm_at_25}, {"dice_at_25", &MetricValues::dice_at_25},
        {"med_mm", &MetricValues::med_mm},       {"total_dice", &MetricValues::total_dice},
    };
    return m;
}

/// Mean of present values per metric.
MetricValues mean_of(const std::vector<const MetricValues*>& items) {
    MetricValues out;
    for (const auto& [name, mem] : metric_members()) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto* v : items)
            if (v->*mem) {
                s += *(v->*mem);
                ++n;
            }
        if (n) out.*mem = s / static_cast<double>(n);
    }
    return out;
}

}  // namespace

MetricReport aggregate(std::vector<ScanMetrics> scans, Aggregation mode, const MetricOptions& opts) {
    if (scans.empty()) throw InvalidArgument("aggregate: no scans");
    std::stable_sort(scans.begin(), scans.end(), [](const ScanMetrics& a, const ScanMetrics& b) {
        return std::tie(a.patient_id, a.scan) < std::tie(b.patient_id, b.scan);
    });
    MetricReport r;
    r.aggregation = mode;
    r.options = opts;
    std::map<std::string, std::vector<const MetricValues*>> by_patient;
    std::vector<const MetricValues*> all;
    for (const auto& s : scans) {
        by_patient[s.patient_id].push_back(&s.values);
        all.push_back(&s.values);
        r.n_gt_lesions += s.n_gt;
        r.n_pred_lesions += s.n_pred;
        r.n_pairs += s.n_pairs;
    }
    for (const auto& [name, mem] : metric_members()) {
        std::size_t missing = 0;
        for (const auto* v : all) missing += !(v->*mem);
        r.excluded.emplace_back(name, missing);
    }
    std::vector<const MetricValues*> patient_values;
    for (const auto& [pid, values] : by_patient) r.per_patient.push_back({pid, values.size(), mean_of(values)});
    for (const auto& p : r.per_patient) patient_values.push_back(&p.values);
    r.overall = mode == Aggregation::PatientMean ? mean_of(patient_values) : mean_of(all);
    r.n_patients = by_patient.size();
    r.n_scans = scans.size();
    r.per_scan = std::move(scans);
    return r;
}

nlohmann::json to_json(const MetricValues& v) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, mem] : metric_members()) j[name] = v.*mem ? nlohmann::json(*(v.*mem)) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json per_scan = nlohmann::json::array(), per_patient = nlohmann::json::array();
    for (const auto& s : r.per_scan)
        per_scan.push_back({{"patient_id", s.patient_id},
                            {"scan", s.scan},
                            {"metrics", to_json(s.values)},
                            {"n_gt", s.n_gt},
                            {"n_pred", s.n_pred},
                            {"n_pairs", s.n_pairs}});
    for (const auto& p : r.per_patient)
        per_patient.push_back({{"patient_id", p.patient_id}, {"n_scans", p.n_scans}, {"metrics", to_json(p.values)}});
    nlohmann::json excluded = nlohmann::json::object();
    for (const auto& [name, n] : r.excluded) excluded[name] = n;
    return {{"format", "lesiontrack-metrics"},
            {"version", 1},
            {"aggregation", r.aggregation == Aggregation::PatientMean ? "patient_mean" : "scan_mean"},
            {"total_dice_mode", r.options.total_dice_mode == TotalDiceMode::PerLesion ? "per_lesion" : "pooled"},
            {"threshold_mm", r.options.threshold_mm},
            {"nsd_tolerance_mm", r.options.nsd_tolerance_mm},
            {"overall", to_json(r.overall)},
            {"counts",
             {{"patients", r.n_patients},
              {"scans", r.n_scans},
              {"gt_lesions", r.n_gt_lesions},
              {"pred_lesions", r.n_pred_lesions},
              {"pairs", r.n_pairs}}},
            {"excluded_scans", excluded},
            {"per_patient", per_patient},
            {"per_scan", per_scan}};
}

std::string lesion_csv(const MetricReport& r) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "patient_id,scan,gt_label,pred_label,matched,distance_mm,dice\n";
    for (const auto& s : r.per_scan)
        for (const auto& row : s.rows) {
            os << s.patient_id << ',' << s.scan << ',' << row.gt << ',' << row.pred << ','
               << (row.gt && row.pred ? 1 : 0) << ',';
            if (row.distance_mm) os << *row.distance_mm;
            os << ',' << row.dice << '\n';
        }
    return os.str();
}

}  // namespace lesiontrack
