#include "implant/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "implant/error.hpp"
#include "implant/synthetic.hpp"

namespace implant {

namespace {

constexpr int kDim = 6;
constexpr double kPenalty = 1e6;  // per view, for poses that cannot be rendered
constexpr double kDegToRad = M_PI / 180.0;

using Params = std::array<double, kDim>;

// Distance-field lookups for one target, reused across all evaluations.
struct PreparedView {
    const ViewTarget* view;
    DistanceField field;
};

// Mean distance from each `to` point to the nearest `from` point, using a
// distance field over the joint bounding box.
double mean_reverse_distance(const std::vector<Pixel>& from, const std::vector<Pixel>& to) {
    int x0 = std::numeric_limits<int>::max(), y0 = x0, x1 = std::numeric_limits<int>::min(), y1 = x1;
    for (const auto* set : {&from, &to}) {
        for (const auto& p : *set) {
            x0 = std::min(x0, p.x);
            y0 = std::min(y0, p.y);
            x1 = std::max(x1, p.x);
            y1 = std::max(y1, p.y);
        }
    }
    Contour local;
    local.points.reserve(from.size());
    for (const auto& p : from) local.points.push_back({p.x - x0, p.y - y0});
    const DistanceField f = distance_field(local, x1 - x0 + 1, y1 - y0 + 1);
    double sum = 0.0;
    for (const auto& p : to) sum += f.at(p.x - x0, p.y - y0);
    return sum / static_cast<double>(to.size());
}

double residual_with_field(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh,
                           const DistanceField& field, const Contour& target, bool symmetric) {
    const Contour model = silhouette_contour(camera, pose, mesh);
    double sum = 0.0;
    for (const auto& p : model.points) sum += field.at(p.x, p.y);
    const double forward = sum / static_cast<double>(model.points.size());
    if (!symmetric) return forward;
    return 0.5 * (forward + mean_reverse_distance(model.points, target.points));
}

double depth_of(const RigidTransform& pose, const Vec3& centroid) { return pose.apply(centroid).z(); }

// Half-resolution camera over the same detector area. Full-resolution pixel
// u maps to (u - 0.5) / 2.
Camera half_camera(const Camera& c) {
    Camera h = c;
    h.width_px = c.width_px / 2;
    h.height_px = c.height_px / 2;
    h.pitch_mm = 2.0 * c.pitch_mm;
    h.principal_px = (c.principal_px - Vec2(0.5, 0.5)) / 2.0;
    return h;
}

Contour half_contour(const Contour& c) {
    Contour h;
    h.closed = false;
    h.points.reserve(c.points.size());
    for (const auto& p : c.points) {
        const Pixel q{p.x / 2, p.y / 2};
        if (h.points.empty() || !(h.points.back() == q)) h.points.push_back(q);
    }
    return h;
}

RegistrationResult run_registration(const std::vector<ViewTarget>& views, const TriMesh& mesh,
                                    const RigidTransform& init, const RegistrationConfig& cfg) {
    cfg.validate();
    if (views.empty()) throw InvalidArgument("registration needs at least one view");
    std::vector<PreparedView> prepared;
    prepared.reserve(views.size());
    for (const auto& v : views) {
        if (v.target.empty()) throw InvalidArgument("target contour for view " + v.name + " is empty");
        v.camera.validate();
        prepared.push_back({&v, distance_field(v.target, v.camera.width_px, v.camera.height_px)});
    }
    const Vec3 center = mesh.centroid();

    // Initial pose must render in every view.
    for (const auto& pv : prepared) {
        try {
            (void)silhouette_contour(pv.view->camera, pv.view->view * init, mesh);
        } catch (const StageError& e) {
            throw StageError("view " + pv.view->name + " does not render at the initial pose: " + e.what());
        }
    }

    auto make_cost = [&](const std::vector<PreparedView>& pvs) {
        return [&, pvs_ptr = &pvs](const Params& p) {
            const RigidTransform pose = pose_from_parameters(init, center, p);
            double total = 0.0;
            for (const auto& pv : *pvs_ptr) {
                try {
                    total += residual_with_field(pv.view->camera, pv.view->view * pose, mesh, pv.field,
                                                 pv.view->target, cfg.symmetric);
                } catch (const StageError&) {
                    total += kPenalty;
                } catch (const InvalidArgument&) {
                    total += kPenalty;
                }
            }
            return total;
        };
    };

    Params step{cfg.initial_rotation_deg, cfg.initial_rotation_deg, cfg.initial_rotation_deg,
                cfg.initial_translation_mm, cfg.initial_translation_mm, cfg.initial_translation_mm};
    Params start{};
    int iterations = 0;
    int evaluations = 0;

    // Coarse pass at half resolution; the full-resolution search then
    // starts near its optimum with a small simplex.
    const bool coarse = cfg.coarse_to_fine && std::all_of(views.begin(), views.end(), [](const ViewTarget& v) {
        return std::min(v.camera.width_px, v.camera.height_px) >= 256;
    });
    if (coarse) {
        std::vector<ViewTarget> half;
        half.reserve(views.size());
        for (const auto& v : views) half.push_back({v.name, half_camera(v.camera), v.view, half_contour(v.target)});
        std::vector<PreparedView> half_prepared;
        for (const auto& v : half) {
            half_prepared.push_back({&v, distance_field(v.target, v.camera.width_px, v.camera.height_px)});
        }
        const SimplexResult run = nelder_mead(make_cost(half_prepared), start, step, cfg.max_iterations,
                                              cfg.tolerance_px, cfg.simplex_tolerance);
        iterations += run.iterations;
        evaluations += run.evaluations;
        // Kept only if it also helps at full resolution.
        const auto full = make_cost(prepared);
        evaluations += 2;
        if (run.value < kPenalty && full(run.best) < full(start)) {
            start = run.best;
            step = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
        }
    }

    const auto cost = make_cost(prepared);
    SimplexResult best;
    best.value = std::numeric_limits<double>::infinity();
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 0x5EED);
    for (int r = 0; r < cfg.restarts; ++r) {
        if (r > 0) {
            start = best.best;
            for (int k = 0; k < 3; ++k) start[k] += rng.uniform(-cfg.restart_jitter_deg, cfg.restart_jitter_deg);
        }
        SimplexResult run = nelder_mead(cost, start, step, cfg.max_iterations, cfg.tolerance_px, cfg.simplex_tolerance);
        iterations += run.iterations;
        evaluations += run.evaluations;
        // A jittered restart that lands back in the same basin ends the search.
        const bool improved = run.value < best.value - cfg.tolerance_px;
        if (run.value < best.value) best = run;
        if (r > 0 && !improved) break;
    }

    RegistrationResult out;
    out.pose = pose_from_parameters(init, center, best.best);
    out.iterations = iterations;
    out.evaluations = evaluations;
    double px_sum = 0.0;
    double mm_sum = 0.0;
    for (const auto& pv : prepared) {
        const RigidTransform vp = pv.view->view * out.pose;
        double px;
        try {
            px = residual_with_field(pv.view->camera, vp, mesh, pv.field, pv.view->target, cfg.symmetric);
        } catch (const StageError& e) {
            throw StageError("view " + pv.view->name + " does not render at the optimum: " + e.what());
        }
        const double mm = px * pv.view->camera.mm_per_pixel_at(depth_of(vp, center));
        out.per_view.push_back({pv.view->name, px, mm});
        px_sum += px;
        mm_sum += mm;
    }
    out.residual_px = px_sum / static_cast<double>(prepared.size());
    out.residual_mm = mm_sum / static_cast<double>(prepared.size());
    out.converged = best.converged && out.residual_px <= cfg.accept_residual_px;
    return out;
}

}  // namespace

void RegistrationConfig::validate() const {
    if (max_iterations <= 0) throw ConfigError("registration max_iterations must be positive");
    if (!(tolerance_px > 0.0)) throw ConfigError("registration tolerance_px must be positive");
    if (!(simplex_tolerance > 0.0)) throw ConfigError("registration simplex_tolerance must be positive");
    if (!(initial_rotation_deg > 0.0) || !(initial_translation_mm > 0.0)) {
        throw ConfigError("registration initial simplex scale must be positive");
    }
    if (restarts <= 0) throw ConfigError("registration restarts must be positive");
    if (!(restart_jitter_deg >= 0.0)) throw ConfigError("registration restart_jitter_deg must be nonnegative");
    if (!(accept_residual_px > 0.0)) throw ConfigError("registration accept_residual_px must be positive");
}

RigidTransform pose_from_parameters(const RigidTransform& init, const Vec3& center, const Params& p) {
    const Mat3 r = (Eigen::AngleAxisd(p[0] * kDegToRad, Vec3::UnitX()) *
                    Eigen::AngleAxisd(p[1] * kDegToRad, Vec3::UnitY()) *
                    Eigen::AngleAxisd(p[2] * kDegToRad, Vec3::UnitZ()))
                       .toRotationMatrix();
    return RigidTransform::from_translation(Vec3(p[3], p[4], p[5])) * init * RigidTransform::rotation_about(r, center);
}

SimplexResult nelder_mead(const std::function<double(const Params&)>& f, const Params& start, const Params& step,
                          int max_iterations, double value_tolerance, double diameter_tolerance) {
    SimplexResult out;
    double best_seen = std::numeric_limits<double>::infinity();
    int stall = 0;
    auto eval = [&](const Params& x) {
        const double v = f(x);
        ++out.evaluations;
        if (v < best_seen - value_tolerance) {
            stall = 0;
        } else {
            ++stall;
        }
        best_seen = std::min(best_seen, v);
        return v;
    };

    std::array<Params, kDim + 1> x;
    std::array<double, kDim + 1> fx;
    x[0] = start;
    fx[0] = eval(start);
    for (int i = 0; i < kDim; ++i) {
        x[i + 1] = start;
        x[i + 1][i] += step[i];
        fx[i + 1] = eval(x[i + 1]);
    }

    auto combine = [](const Params& a, const Params& b, double t) {
        Params r;
        for (int k = 0; k < kDim; ++k) r[k] = a[k] + t * (b[k] - a[k]);
        return r;
    };

    std::array<int, kDim + 1> order;
    for (out.iterations = 0; out.iterations < max_iterations; ++out.iterations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fx[a] < fx[b]; });
        {
            std::array<Params, kDim + 1> xs;
            std::array<double, kDim + 1> fs;
            for (int i = 0; i <= kDim; ++i) {
                xs[i] = x[order[i]];
                fs[i] = fx[order[i]];
            }
            x = xs;
            fx = fs;
        }

        double diameter = 0.0;
        for (int i = 1; i <= kDim; ++i) {
            double d = 0.0;
            for (int k = 0; k < kDim; ++k) d += (x[i][k] - x[0][k]) * (x[i][k] - x[0][k]);
            diameter = std::max(diameter, std::sqrt(d));
        }
        const bool flat = fx[kDim] - fx[0] < value_tolerance && stall >= 2 * (kDim + 1);
        if (diameter < diameter_tolerance || flat) {
            out.converged = true;
            break;
        }

        Params centroid{};
        for (int i = 0; i < kDim; ++i) {
            for (int k = 0; k < kDim; ++k) centroid[k] += x[i][k] / kDim;
        }
        const Params xr = combine(centroid, x[kDim], -1.0);
        const double fr = eval(xr);
        if (fr < fx[0]) {
            const Params xe = combine(centroid, x[kDim], -2.0);
            const double fe = eval(xe);
            if (fe < fr) {
                x[kDim] = xe;
                fx[kDim] = fe;
            } else {
                x[kDim] = xr;
                fx[kDim] = fr;
            }
            continue;
        }
        if (fr < fx[kDim - 1]) {
            x[kDim] = xr;
            fx[kDim] = fr;
            continue;
        }
        const bool outside = fr < fx[kDim];
        const Params xc = outside ? combine(centroid, xr, 0.5) : combine(centroid, x[kDim], 0.5);
        const double fc = eval(xc);
        if (outside ? fc <= fr : fc < fx[kDim]) {
            x[kDim] = xc;
            fx[kDim] = fc;
            continue;
        }
        for (int i = 1; i <= kDim; ++i) {
            x[i] = combine(x[0], x[i], 0.5);
            fx[i] = eval(x[i]);
        }
    }

    int best = 0;
    for (int i = 1; i <= kDim; ++i) {
        if (fx[i] < fx[best]) best = i;
    }
    out.best = x[best];
    out.value = fx[best];
    return out;
}

double contour_residual(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh, const Contour& target,
                        bool symmetric) {
    if (target.empty()) throw InvalidArgument("target contour is empty");
    camera.validate();
    const DistanceField field = distance_field(target, camera.width_px, camera.height_px);
    return residual_with_field(camera, pose, mesh, field, target, symmetric);
}

RegistrationResult register_single_view(const Camera& camera, const TriMesh& mesh, const Contour& target,
                                        const RigidTransform& init, const RegistrationConfig& cfg) {
    return run_registration({ViewTarget{"single", camera, RigidTransform(), target}}, mesh, init, cfg);
}

RegistrationResult register_multi_view(const std::vector<ViewTarget>& views, const TriMesh& mesh,
                                       const RigidTransform& init, const RegistrationConfig& cfg) {
    return run_registration(views, mesh, init, cfg);
}

}  // namespace implant
