#include "lesiontrack/registration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "lesiontrack/parallel.hpp"
#include "sampling.hpp"

namespace lesiontrack {

void RegistrationConfig::validate() const {
    for (int a = 0; a < 3; ++a)
        if (work_shape[a] < 2) throw InvalidArgument("registration work_shape must be >= 2 per axis");
    if (levels.empty()) throw InvalidArgument("registration needs at least one level");
    if (levels.size() != iters_per_level.size())
        throw InvalidArgument("registration levels and iters_per_level must have the same length");
    for (int f : levels)
        if (f < 1) throw InvalidArgument("registration level factors must be >= 1");
    for (int n : iters_per_level)
        if (n < 0) throw InvalidArgument("registration iteration counts must be >= 0");
    if (!(lambda >= 0.0)) throw InvalidArgument("registration lambda must be >= 0");
    if (!(step_size > 0.0) || !(max_step >= step_size)) throw InvalidArgument("registration step sizes must be positive");
    if (grad_smoothing < 0.0 || !(local_window > 0.0)) throw InvalidArgument("registration smoothing must be >= 0");
}

namespace {

using Buffer = std::vector<double>;

/// Sum over voxels with per-slice partials so the result does not depend on threads.
template <class Fn>
double sum_over(const GridRef& g, Fn&& per_voxel) {
    std::vector<double> partial(static_cast<std::size_t>(g.shape[2]), 0.0);
    const std::size_t plane = static_cast<std::size_t>(g.shape[0]) * g.shape[1];
    parallel_for(0, g.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k) {
            double s = 0.0;
            const std::size_t base = plane * static_cast<std::size_t>(k);
            for (std::size_t i = 0; i < plane; ++i) s += per_voxel(base + i);
            partial[static_cast<std::size_t>(k)] = s;
        }
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

Buffer to_buffer(const Volume& v) { return Buffer(v.data.begin(), v.data.end()); }

/// Finite-difference stencil along one axis: D f = (f[hi] - f[lo]) * inv_h.
struct FdStencil {
    std::size_t lo;
    std::size_t hi;
    double inv_h;
};

inline FdStencil fd_stencil(const GridRef& g, int i, int j, int k, int axis) {
    std::array<int, 3> p{i, j, k};
    const int n = g.shape[axis];
    const int c = p[axis];
    std::array<int, 3> lo = p, hi = p;
    double h = g.spacing[axis];
    if (n < 2) return {0, 0, 0.0};
    if (c == 0) {
        hi[axis] = 1;
    } else if (c == n - 1) {
        lo[axis] = n - 2;
    } else {
        lo[axis] = c - 1;
        hi[axis] = c + 1;
        h *= 2.0;
    }
    return {g.index(lo[0], lo[1], lo[2]), g.index(hi[0], hi[1], hi[2]), 1.0 / h};
}

// ---------------------------------------------------------------------------
// warping with coordinate derivatives

struct Warped {
    Buffer value;
    std::array<Buffer, 3> dcoord;  // d(value)/d(voxel coordinate)
};

Warped warp_buffer(const GridRef& g, const Buffer& src, double fill, const DisplacementField& u, bool derivs) {
    Warped w;
    w.value.resize(g.size());
    if (derivs)
        for (auto& d : w.dcoord) d.resize(g.size());
    parallel_for(0, g.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k)
            for (int j = 0; j < g.shape[1]; ++j)
                for (int i = 0; i < g.shape[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    const Vec3 c{i + u.comp[0][idx] / g.spacing.x, j + u.comp[1][idx] / g.spacing.y,
                                 k + u.comp[2][idx] / g.spacing.z};
                    if (!derivs) {
                        w.value[idx] = detail::sample_fill(src.data(), g.shape, c, fill);
                        continue;
                    }
                    const auto st = detail::fill_stencil(g.shape, c);
                    double v = 0.0, dx = 0.0, dy = 0.0, dz = 0.0;
                    for (int n = 0; n < 8; ++n) {
                        const double s = st.valid[n] ? src[st.idx[n]] : fill;
                        v += st.w[n] * s;
                        dx += st.dw[0][n] * s;
                        dy += st.dw[1][n] * s;
                        dz += st.dw[2][n] * s;
                    }
                    w.value[idx] = v;
                    w.dcoord[0][idx] = dx;
                    w.dcoord[1][idx] = dy;
                    w.dcoord[2][idx] = dz;
                }
    });
    return w;
}

// ---------------------------------------------------------------------------
// similarity measures: value and d(sim)/d(b)

double global_ncc(const GridRef& g, const Buffer& a, const Buffer& b, Buffer* dsim_db) {
    const double n = static_cast<double>(g.size());
    const double ma = sum_over(g, [&](std::size_t i) { return a[i]; }) / n;
    const double mb = sum_over(g, [&](std::size_t i) { return b[i]; }) / n;
    const double aa = sum_over(g, [&](std::size_t i) { return (a[i] - ma) * (a[i] - ma); });
    const double bb = sum_over(g, [&](std::size_t i) { return (b[i] - mb) * (b[i] - mb); });
    const double ab = sum_over(g, [&](std::size_t i) { return (a[i] - ma) * (b[i] - mb); });
    if (!(aa > 0.0) || !(bb > 0.0)) {
        if (dsim_db) dsim_db->assign(g.size(), 0.0);
        return 0.0;
    }
    const double denom = std::sqrt(aa * bb);
    const double r = ab / denom;
    if (dsim_db) {
        dsim_db->resize(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) (*dsim_db)[i] = (a[i] - ma) / denom - r * (b[i] - mb) / bb;
    }
    return r;
}

/// Mean over voxels of windowed NCC, window = Gaussian with sigma `window` voxels.
double local_ncc(const GridRef& g, const Buffer& a, const Buffer& b, double window, Buffer* dsim_db) {
    const Vec3 sigma{window, window, window};
    const std::size_t n = g.size();
    auto blurred = [&](auto&& f) {
        Buffer out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
        gaussian_blur_inplace(out, g.shape, sigma);
        return out;
    };
    const Buffer mu_a = blurred([&](std::size_t i) { return a[i]; });
    const Buffer mu_b = blurred([&](std::size_t i) { return b[i]; });
    const Buffer e_aa = blurred([&](std::size_t i) { return a[i] * a[i]; });
    const Buffer e_bb = blurred([&](std::size_t i) { return b[i] * b[i]; });
    const Buffer e_ab = blurred([&](std::size_t i) { return a[i] * b[i]; });
    constexpr double eps = 1e-5;
    const double inv_n = 1.0 / static_cast<double>(n);
    Buffer p, q;
    if (dsim_db) {
        p.resize(n);
        q.resize(n);
    }
    const double total = sum_over(g, [&](std::size_t i) {
        const double saa = std::max(0.0, e_aa[i] - mu_a[i] * mu_a[i]);
        const double sbb = std::max(0.0, e_bb[i] - mu_b[i] * mu_b[i]);
        const double sab = e_ab[i] - mu_a[i] * mu_b[i];
        const double d = saa * sbb + eps;
        const double rs = 1.0 / std::sqrt(d);
        if (dsim_db) {
            p[i] = inv_n * rs;
            // sbb clamp at 0 only triggers for flat windows where saa*sbb ~ 0 anyway
            q[i] = e_bb[i] - mu_b[i] * mu_b[i] > 0.0 ? -0.5 * inv_n * sab * saa * rs / d : 0.0;
        }
        return sab * rs;
    });
    if (dsim_db) {
        Buffer pm(n), qm(n);
        for (std::size_t i = 0; i < n; ++i) {
            pm[i] = p[i] * mu_a[i];
            qm[i] = q[i] * mu_b[i];
        }
        gaussian_blur_adjoint_inplace(p, g.shape, sigma);
        gaussian_blur_adjoint_inplace(pm, g.shape, sigma);
        gaussian_blur_adjoint_inplace(q, g.shape, sigma);
        gaussian_blur_adjoint_inplace(qm, g.shape, sigma);
        dsim_db->resize(n);
        for (std::size_t i = 0; i < n; ++i) (*dsim_db)[i] = a[i] * p[i] - pm[i] + 2.0 * b[i] * q[i] - 2.0 * qm[i];
    }
    return total * inv_n;
}

/// 1 - sim(a, src o u); adds d/du to `grad` when given.
double dissimilarity_term(const GridRef& g, const Buffer& a, const Buffer& src, double fill, const DisplacementField& u,
                          const ObjectiveOptions& opts, double* sim_out, DisplacementField* grad) {
    const Warped w = warp_buffer(g, src, fill, u, grad != nullptr);
    Buffer dsim;
    const double sim = opts.similarity == Similarity::GlobalNcc
                           ? global_ncc(g, a, w.value, grad ? &dsim : nullptr)
                           : local_ncc(g, a, w.value, opts.local_window, grad ? &dsim : nullptr);
    if (sim_out) *sim_out = sim;
    if (grad) {
        for (int axis = 0; axis < 3; ++axis) {
            const double inv_s = 1.0 / g.spacing[axis];
            auto& gc = grad->comp[axis];
            for (std::size_t i = 0; i < g.size(); ++i) gc[i] -= dsim[i] * w.dcoord[axis][i] * inv_s;
        }
    }
    return 1.0 - sim;
}

// ---------------------------------------------------------------------------
// GradICON: mean ||D(w)||_F^2 with w = compose(u_ab, u_ba), same grid

double gradicon_term(const DisplacementField& u_ab, const DisplacementField& u_ba, DisplacementField* g_ab,
                     DisplacementField* g_ba, double scale) {
    const GridRef& g = u_ba.grid;
    const std::size_t n = g.size();
    std::array<Buffer, 3> w;
    for (auto& c : w) c.resize(n);
    auto coord = [&](int i, int j, int k, std::size_t idx) {
        return Vec3{i + u_ba.comp[0][idx] / g.spacing.x, j + u_ba.comp[1][idx] / g.spacing.y,
                    k + u_ba.comp[2][idx] / g.spacing.z};
    };
    parallel_for(0, g.shape[2], [&](int k0, int k1) {
        for (int k = k0; k < k1; ++k)
            for (int j = 0; j < g.shape[1]; ++j)
                for (int i = 0; i < g.shape[0]; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    const Vec3 c = coord(i, j, k, idx);
                    for (int m = 0; m < 3; ++m)
                        w[m][idx] = u_ba.comp[m][idx] + detail::sample_clamped(u_ab.comp[m].data(), g.shape, c);
                }
    });

    const double inv_n = 1.0 / static_cast<double>(n);
    const double value = sum_over(g, [&](std::size_t idx) {
        const auto p = g.unravel(idx);
        double s = 0.0;
        for (int l = 0; l < 3; ++l) {
            const auto st = fd_stencil(g, p[0], p[1], p[2], l);
            for (int m = 0; m < 3; ++m) {
                const double d = (w[m][st.hi] - w[m][st.lo]) * st.inv_h;
                s += d * d;
            }
        }
        return s;
    }) * inv_n;

    if (!g_ab && !g_ba) return value;

    // adjoint of the finite-difference operator
    std::array<Buffer, 3> wbar;
    for (auto& c : wbar) c.assign(n, 0.0);
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i)
                for (int l = 0; l < 3; ++l) {
                    const auto st = fd_stencil(g, i, j, k, l);
                    for (int m = 0; m < 3; ++m) {
                        const double d = (w[m][st.hi] - w[m][st.lo]) * st.inv_h;
                        const double c = 2.0 * inv_n * d * st.inv_h * scale;
                        wbar[m][st.hi] += c;
                        wbar[m][st.lo] -= c;
                    }
                }

    // adjoint of the composition
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i) {
                const std::size_t idx = g.index(i, j, k);
                const auto st = detail::clamped_stencil(g.shape, coord(i, j, k, idx));
                for (int m = 0; m < 3; ++m) {
                    const double wb = wbar[m][idx];
                    if (wb == 0.0) continue;
                    if (g_ba) {
                        g_ba->comp[m][idx] += wb;
                        for (int a = 0; a < 3; ++a) {
                            double d = 0.0;
                            for (int q = 0; q < 8; ++q) d += st.dw[a][q] * u_ab.comp[m][st.idx[q]];
                            g_ba->comp[a][idx] += wb * d / g.spacing[a];
                        }
                    }
                    if (g_ab)
                        for (int q = 0; q < 8; ++q) g_ab->comp[m][st.idx[q]] += wb * st.w[q];
                }
            }
    return value;
}

struct Problem {
    GridRef grid;
    Buffer fixed;
    Buffer moving;
    double fixed_fill = 0.0;
    double moving_fill = 0.0;
};

ObjectiveValue evaluate(const Problem& p, const DisplacementField& u_fwd, const DisplacementField& u_bwd,
                        const ObjectiveOptions& opts, bool with_gradient) {
    ObjectiveValue out;
    DisplacementField* gf = nullptr;
    DisplacementField* gb = nullptr;
    if (with_gradient) {
        out.grad_fwd = DisplacementField(p.grid);
        out.grad_bwd = DisplacementField(p.grid);
        gf = &out.grad_fwd;
        gb = &out.grad_bwd;
    }
    const double d_bwd = dissimilarity_term(p.grid, p.fixed, p.moving, p.moving_fill, u_bwd, opts, &out.sim_bwd, gb);
    const double d_fwd = dissimilarity_term(p.grid, p.moving, p.fixed, p.fixed_fill, u_fwd, opts, &out.sim_fwd, gf);
    double reg = 0.0;
    if (opts.lambda > 0.0 || !with_gradient) {
        reg += gradicon_term(u_fwd, u_bwd, opts.lambda > 0.0 ? gf : nullptr, opts.lambda > 0.0 ? gb : nullptr, opts.lambda);
        reg += gradicon_term(u_bwd, u_fwd, opts.lambda > 0.0 ? gb : nullptr, opts.lambda > 0.0 ? gf : nullptr, opts.lambda);
    }
    out.gradicon = reg;
    out.value = d_bwd + d_fwd + opts.lambda * reg;
    return out;
}

Problem make_problem(const Volume& fixed, const Volume& moving) {
    Problem p;
    p.grid = fixed.grid;
    p.fixed = to_buffer(fixed);
    p.moving = to_buffer(moving);
    p.fixed_fill = fixed.min_value();
    p.moving_fill = moving.min_value();
    return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// public measures

double ncc(const Volume& a, const Volume& b) {
    require_same_grid(a.grid, b.grid, "ncc");
    const Buffer ab = to_buffer(a), bb = to_buffer(b);
    auto constant = [](const Buffer& x) { return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); }); };
    if (ab.empty() || constant(ab) || constant(bb)) throw DegenerateInput("ncc: constant input image");
    return std::clamp(global_ncc(a.grid, ab, bb, nullptr), -1.0, 1.0);
}

std::vector<double> gradicon_residual_map(const DisplacementField& u_ab, const DisplacementField& u_ba) {
    const DisplacementField w = compose(u_ab, u_ba);
    const GridRef& g = w.grid;
    std::vector<double> out(g.size());
    for (int k = 0; k < g.shape[2]; ++k)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int i = 0; i < g.shape[0]; ++i) {
                double s = 0.0;
                for (int l = 0; l < 3; ++l) {
                    const auto st = fd_stencil(g, i, j, k, l);
                    for (int m = 0; m < 3; ++m) {
                        const double d = (w.comp[m][st.hi] - w.comp[m][st.lo]) * st.inv_h;
                        s += d * d;
                    }
                }
                out[g.index(i, j, k)] = s;
            }
    return out;
}

double gradicon_penalty(const DisplacementField& u_ab, const DisplacementField& u_ba) {
    const auto map = gradicon_residual_map(u_ab, u_ba);
    double s = 0.0;
    for (double v : map) s += v;
    return map.empty() ? 0.0 : s / static_cast<double>(map.size());
}

ObjectiveValue evaluate_objective(const Volume& fixed, const Volume& moving, const DisplacementField& u_fwd,
                                  const DisplacementField& u_bwd, const ObjectiveOptions& opts, bool with_gradient) {
    require_same_grid(fixed.grid, moving.grid, "objective");
    require_same_grid(fixed.grid, u_fwd.grid, "objective");
    require_same_grid(fixed.grid, u_bwd.grid, "objective");
    if (!(opts.lambda >= 0.0)) throw InvalidArgument("objective: lambda must be >= 0");
    if (fixed.min_value() == fixed.max_value() || moving.min_value() == moving.max_value())
        throw DegenerateInput("objective: constant input image");
    return evaluate(make_problem(fixed, moving), u_fwd, u_bwd, opts, with_gradient);
}

double objective(const Volume& fixed, const Volume& moving, const DisplacementField& u_fwd,
                 const DisplacementField& u_bwd, double lambda) {
    ObjectiveOptions opts;
    opts.lambda = lambda;
    return evaluate_objective(fixed, moving, u_fwd, u_bwd, opts, false).value;
}

// ---------------------------------------------------------------------------
// optimiser

GridRef registration_work_grid(const GridRef& fixed, const GridRef& moving, const Shape3& work_shape) {
    GridRef g;
    g.shape = work_shape;
    for (int a = 0; a < 3; ++a) {
        const double lo = std::min(fixed.origin[a] - 0.5 * fixed.spacing[a], moving.origin[a] - 0.5 * moving.spacing[a]);
        const double hi = std::max(fixed.origin[a] + (fixed.shape[a] - 0.5) * fixed.spacing[a],
                                   moving.origin[a] + (moving.shape[a] - 0.5) * moving.spacing[a]);
        g.spacing[a] = (hi - lo) / work_shape[a];
        g.origin[a] = lo + 0.5 * g.spacing[a];
    }
    g.validate();
    return g;
}

namespace {

GridRef level_grid(const GridRef& work, int factor) {
    if (factor == 1) return work;
    GridRef g;
    for (int a = 0; a < 3; ++a) {
        g.shape[a] = std::max(2, (work.shape[a] + factor - 1) / factor);
        const double extent = work.shape[a] * work.spacing[a];
        g.spacing[a] = extent / g.shape[a];
        g.origin[a] = work.origin[a] - 0.5 * work.spacing[a] + 0.5 * g.spacing[a];
    }
    return g;
}

/// Anti-aliased resampling of `v` onto `target`.
Volume downsample_to(const Volume& v, const GridRef& target) {
    Vec3 sigma_mm{};
    bool any = false;
    for (int a = 0; a < 3; ++a) {
        const double ratio = target.spacing[a] / v.grid.spacing[a];
        if (ratio > 1.0 + 1e-9) {
            sigma_mm[a] = 0.5 * ratio * v.grid.spacing[a];
            any = true;
        }
    }
    return resample_to(any ? gaussian_blur(v, {sigma_mm, 3.0}) : v, target, Interp::Linear);
}

bool finite_field(const DisplacementField& u) {
    for (const auto& c : u.comp)
        for (double v : c)
            if (!std::isfinite(v)) return false;
    return true;
}

DisplacementField smoothed(const DisplacementField& g, double sigma_vox) {
    DisplacementField out = g;
    if (sigma_vox > 0.0)
        for (auto& c : out.comp) gaussian_blur_inplace(c, out.grid.shape, {sigma_vox, sigma_vox, sigma_vox});
    return out;
}

void axpy(DisplacementField& u, double alpha, const DisplacementField& d) {
    for (int a = 0; a < 3; ++a)
        for (std::size_t i = 0; i < u.comp[a].size(); ++i) u.comp[a][i] += alpha * d.comp[a][i];
}

}  // namespace

RegistrationResult register_pair(const Volume& fixed, const Volume& moving, const RegistrationConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    if (fixed.min_value() == fixed.max_value() || moving.min_value() == moving.max_value())
        throw DegenerateInput("register: constant input image");

    const GridRef work = registration_work_grid(fixed.grid, moving.grid, cfg.work_shape);
    // NCC is invariant to affine intensity changes; z-scoring keeps the LocalNcc epsilon meaningful.
    const Volume fixed_work = znormalize(downsample_to(fixed, work));
    const Volume moving_work = znormalize(downsample_to(moving, work));

    ObjectiveOptions opts;
    opts.lambda = cfg.lambda;
    opts.similarity = cfg.similarity;
    opts.local_window = cfg.local_window;

    RegistrationResult result;
    DisplacementField fwd, bwd;
    bool have_fields = false;

    auto finish = [&](const Problem& finest) {
        const DisplacementField zero(work);
        result.initial_objective = evaluate(finest, zero, zero, opts, false).value;
        const auto fin = evaluate(finest, fwd, bwd, opts, false);
        result.final_objective = fin.value;
        result.ncc_fwd = evaluate(finest, fwd, bwd, {opts.lambda, Similarity::GlobalNcc, opts.local_window}, false).sim_fwd;
        result.ncc_bwd = evaluate(finest, fwd, bwd, {opts.lambda, Similarity::GlobalNcc, opts.local_window}, false).sim_bwd;
        result.gradicon_residual = fin.gradicon;
        result.u_fwd = resample_to(fwd, moving.grid);
        result.u_bwd = resample_to(bwd, fixed.grid);
        result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    Problem finest;
    for (std::size_t level = 0; level < cfg.levels.size(); ++level) {
        const int factor = cfg.levels[level];
        const GridRef lg = level_grid(work, factor);
        const Problem prob = make_problem(downsample_to(fixed_work, lg), downsample_to(moving_work, lg));
        if (factor == 1) finest = prob;
        if (level + 1 == cfg.levels.size() && factor != 1) finest = make_problem(fixed_work, moving_work);

        const DisplacementField zero(lg);
        if (have_fields) {
            fwd = resample_to(fwd, lg);
            bwd = resample_to(bwd, lg);
        } else {
            fwd = zero;
            bwd = zero;
            have_fields = true;
        }
        ObjectiveValue cur = evaluate(prob, fwd, bwd, opts, true);
        {
            // upsampled coarse fields must not start worse than identity
            const ObjectiveValue at_zero = evaluate(prob, zero, zero, opts, true);
            if (!std::isfinite(cur.value) || at_zero.value < cur.value) {
                fwd = zero;
                bwd = zero;
                cur = at_zero;
            }
        }
        std::vector<double> history{cur.value};
        double min_spacing = std::min({lg.spacing.x, lg.spacing.y, lg.spacing.z});
        double step = cfg.step_size;
        int stalled = 0;
        int non_finite = 0;
        for (int it = 0; it < cfg.iters_per_level[level]; ++it) {
            const DisplacementField dir_f = smoothed(cur.grad_fwd, cfg.grad_smoothing);
            const DisplacementField dir_b = smoothed(cur.grad_bwd, cfg.grad_smoothing);
            const double m = std::max(dir_f.max_norm(), dir_b.max_norm());
            if (!(m > 0.0)) break;
            const double alpha = step * min_spacing / m;
            DisplacementField tf = fwd, tb = bwd;
            axpy(tf, -alpha, dir_f);
            axpy(tb, -alpha, dir_b);
            ++result.iterations;
            ObjectiveValue trial = evaluate(prob, tf, tb, opts, true);
            if (!std::isfinite(trial.value) || !finite_field(tf) || !finite_field(tb)) {
                if (++non_finite >= cfg.divergence_patience) {
                    result.per_level_history.push_back(history);
                    finish(finest.grid.size() ? finest : make_problem(fixed_work, moving_work));
                    throw RegistrationDiverged("register: objective became non-finite at level factor " +
                                                   std::to_string(factor) + ", iteration " + std::to_string(it),
                                               result);
                }
                step *= 0.5;
                continue;
            }
            non_finite = 0;
            if (trial.value < cur.value) {
                const double rel = (cur.value - trial.value) / std::max(std::abs(cur.value), 1e-12);
                fwd = std::move(tf);
                bwd = std::move(tb);
                cur = std::move(trial);
                history.push_back(cur.value);
                step = std::min(step * 1.25, cfg.max_step);
                stalled = rel < cfg.convergence_tol ? stalled + 1 : 0;
                if (stalled >= cfg.patience) break;
            } else {
                step *= 0.5;
                if (step < 1e-3) break;
            }
        }
        result.per_level_history.push_back(std::move(history));
    }
    if (finest.grid.size() == 0) finest = make_problem(fixed_work, moving_work);
    if (!(fwd.grid == work)) {
        fwd = resample_to(fwd, work);
        bwd = resample_to(bwd, work);
        // keep the final <= initial guarantee when the last level was coarse
        const DisplacementField zero(work);
        if (evaluate(finest, fwd, bwd, opts, false).value > evaluate(finest, zero, zero, opts, false).value) {
            fwd = zero;
            bwd = zero;
        }
    }
    finish(finest);
    return result;
}

}  // namespace lesiontrack

namespace lesiontrack {

nlohmann::json to_json(const RegistrationConfig& c) {
    return {{"work_shape", c.work_shape},
            {"levels", c.levels},
            {"iters_per_level", c.iters_per_level},
            {"lambda", c.lambda},
            {"step_size", c.step_size},
            {"max_step", c.max_step},
            {"convergence_tol", c.convergence_tol},
            {"patience", c.patience},
            {"grad_smoothing", c.grad_smoothing},
            {"similarity", c.similarity == Similarity::GlobalNcc ? "global_ncc" : "local_ncc"},
            {"local_window", c.local_window},
            {"divergence_patience", c.divergence_patience}};
}

void update_from_json(RegistrationConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("registration config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "work_shape") {
                if (v.is_number_integer()) c.work_shape = {v.get<int>(), v.get<int>(), v.get<int>()};
                else c.work_shape = v.get<Shape3>();
            } else if (key == "levels") c.levels = v.get<std::vector<int>>();
            else if (key == "iters_per_level") c.iters_per_level = v.get<std::vector<int>>();
            else if (key == "lambda") c.lambda = v.get<double>();
            else if (key == "step_size") c.step_size = v.get<double>();
            else if (key == "max_step") c.max_step = v.get<double>();
            else if (key == "convergence_tol") c.convergence_tol = v.get<double>();
            else if (key == "patience") c.patience = v.get<int>();
            else if (key == "grad_smoothing") c.grad_smoothing = v.get<double>();
            else if (key == "local_window") c.local_window = v.get<double>();
            else if (key == "divergence_patience") c.divergence_patience = v.get<int>();
            else if (key == "similarity") {
                const auto s = v.get<std::string>();
                if (s == "global_ncc") c.similarity = Similarity::GlobalNcc;
                else if (s == "local_ncc") c.similarity = Similarity::LocalNcc;
                else throw InvalidArgument("registration similarity must be global_ncc or local_ncc");
            } else {
                throw InvalidArgument("unknown registration parameter '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("registration config: ") + e.what());
    }
    c.validate();
}

nlohmann::json diagnostics_json(const RegistrationResult& r) {
    return {{"initial_objective", r.initial_objective},
            {"final_objective", r.final_objective},
            {"ncc_fwd", r.ncc_fwd},
            {"ncc_bwd", r.ncc_bwd},
            {"gradicon_residual", r.gradicon_residual},
            {"seconds", r.seconds},
            {"iterations", r.iterations},
            {"per_level_history", r.per_level_history}};
}

}  // namespace lesiontrack
