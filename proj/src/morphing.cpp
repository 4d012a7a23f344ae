#include "implant/morphing.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include <Eigen/Eigenvalues>

#include "implant/error.hpp"

namespace implant {

namespace {

struct PreparedTarget {
    const ViewTarget* view;
    DistanceField field;
};

std::vector<PreparedTarget> prepare(const std::vector<ViewTarget>& views) {
    std::vector<PreparedTarget> out;
    out.reserve(views.size());
    for (const auto& v : views) {
        if (v.target.empty()) throw InvalidArgument("target contour for view " + v.name + " is empty");
        v.camera.validate();
        out.push_back({&v, distance_field(v.target, v.camera.width_px, v.camera.height_px)});
    }
    return out;
}

double mean_residual(const PreparedTarget& t, const RigidTransform& object_pose, const TriMesh& mesh) {
    const Contour model = silhouette_contour(t.view->camera, t.view->view * object_pose, mesh);
    double sum = 0.0;
    for (const auto& p : model.points) sum += t.field.at(p.x, p.y);
    return sum / static_cast<double>(model.points.size());
}

double summed_residual(const std::vector<PreparedTarget>& targets, const RigidTransform& pose, const TriMesh& mesh) {
    double total = 0.0;
    for (const auto& t : targets) total += mean_residual(t, pose, mesh);
    return total;
}

// RMS over all views of the model-contour-to-target distance, in mm at the
// object's depth.
double contour_rms_mm(const std::vector<PreparedTarget>& targets, const RigidTransform& pose, const TriMesh& mesh) {
    const Vec3 c = mesh.centroid();
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& t : targets) {
        const RigidTransform vp = t.view->view * pose;
        const Contour model = silhouette_contour(t.view->camera, vp, mesh);
        const double k = t.view->camera.mm_per_pixel_at(vp.apply(c).z());
        for (const auto& p : model.points) {
            const double d = t.field.at(p.x, p.y) * k;
            sum += d * d;
        }
        n += model.points.size();
    }
    return std::sqrt(sum / static_cast<double>(n));
}

double golden_section(const std::function<double(double)>& f, double lo, double hi, double tol) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    return fc <= fd ? c : d;
}

double influence_radius(const TriMesh& mesh, const MorphConfig& cfg) {
    return cfg.influence_radius_mm > 0.0 ? cfg.influence_radius_mm : 0.10 * bounding_box(mesh).diagonal();
}

}  // namespace

void MorphConfig::validate() const {
    if (max_iterations <= 0) throw ConfigError("morph max_iterations must be positive");
    if (!(tolerance_mm > 0.0)) throw ConfigError("morph tolerance_mm must be positive");
    if (!(step_fraction > 0.0 && step_fraction <= 1.0)) throw ConfigError("morph step_fraction must be in (0, 1]");
    if (!(smoothing_lambda >= 0.0 && smoothing_lambda <= 1.0)) {
        throw ConfigError("morph smoothing_lambda must be in [0, 1]");
    }
    if (smoothing_iterations < 0) throw ConfigError("morph smoothing_iterations must be nonnegative");
    if (!(influence_radius_mm >= 0.0)) throw ConfigError("morph influence_radius_mm must be nonnegative");
    if (!(rim_distance_px > 0.0)) throw ConfigError("morph rim_distance_px must be positive");
    if (!(outlier_factor > 0.0) || !(outlier_floor_px >= 0.0)) throw ConfigError("morph outlier settings invalid");
    if (!(scale_min > 0.0 && scale_max > scale_min)) throw ConfigError("morph scale bracket must satisfy 0 < min < max");
    if (!(scale_tolerance > 0.0)) throw ConfigError("morph scale_tolerance must be positive");
}

PrefitResult similarity_prefit(const TriMesh& template_mesh, const std::vector<ViewTarget>& views,
                               const RigidTransform& init, const MorphConfig& cfg, const RegistrationConfig& reg_cfg) {
    cfg.validate();
    const auto targets = prepare(views);
    const Vec3 center = template_mesh.centroid();

    RegistrationConfig refine = reg_cfg;
    refine.restarts = 1;
    refine.initial_rotation_deg = 1.0;
    refine.initial_translation_mm = 1.0;

    RigidTransform pose = init;
    auto cost_at = [&](double s) {
        try {
            return summed_residual(targets, pose, scale_mesh(template_mesh, s, center));
        } catch (const StageError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    const double lo = cfg.scale_min;
    const double hi = cfg.scale_max;
    double scale = golden_section(cost_at, lo, hi, cfg.scale_tolerance);
    // Scale and depth are coupled; alternate pose refinement and a local
    // scale search until the scale settles.
    const double half = std::max(0.05, 10.0 * cfg.scale_tolerance);
    for (int round = 0; round < 6; ++round) {
        pose = register_multi_view(views, scale_mesh(template_mesh, scale, center), pose, refine).pose;
        const double next = golden_section(cost_at, std::max(lo, scale - half), std::min(hi, scale + half),
                                           cfg.scale_tolerance);
        const bool settled = std::abs(next - scale) < cfg.scale_tolerance;
        scale = next;
        if (settled) break;
    }

    const double edge = 2.0 * cfg.scale_tolerance;
    if (scale - lo < edge || hi - scale < edge) {
        throw StageError("similarity prefit: scale optimum lies on the bracket boundary [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + "]");
    }
    const TriMesh scaled = scale_mesh(template_mesh, scale, center);
    const RegistrationResult reg = register_multi_view(views, scaled, pose, refine);
    return {scale, reg.pose, reg.residual_px};
}

namespace {

std::vector<Correspondence> correspondences_with_field(const TriMesh& mesh, const Camera& camera,
                                                       const RigidTransform& pose, const DistanceField& tf,
                                                       const MorphConfig& cfg) {
    const Contour model = silhouette_contour(camera, pose, mesh);

    // Model contour distance field on its padded bounding box.
    const int pad = static_cast<int>(std::ceil(cfg.rim_distance_px)) + 2;
    int x0 = std::numeric_limits<int>::max(), y0 = x0, x1 = std::numeric_limits<int>::min(), y1 = x1;
    for (const auto& p : model.points) {
        x0 = std::min(x0, p.x);
        y0 = std::min(y0, p.y);
        x1 = std::max(x1, p.x);
        y1 = std::max(y1, p.y);
    }
    x0 -= pad;
    y0 -= pad;
    x1 += pad;
    y1 += pad;
    Contour local;
    local.points.reserve(model.points.size());
    for (const auto& p : model.points) local.points.push_back({p.x - x0, p.y - y0});
    const DistanceField own = distance_field(local, x1 - x0 + 1, y1 - y0 + 1);

    std::vector<Correspondence> out;
    std::vector<double> lengths;
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        const Vec2 uv = project_point(camera, pose, mesh.vertex(v));
        const int px = static_cast<int>(std::lround(uv.x()));
        const int py = static_cast<int>(std::lround(uv.y()));
        if (px < x0 || py < y0 || px > x1 || py > y1) continue;
        const int lx = px - x0, ly = py - y0;
        const Pixel n = own.nearest_point(lx, ly);
        const Vec2 c(n.x + x0, n.y + y0);
        if ((uv - c).norm() > cfg.rim_distance_px) continue;
        const Pixel t = tf.nearest_point(static_cast<int>(c.x()), static_cast<int>(c.y()));
        const Vec2 r = Vec2(t.x, t.y) - c;
        out.push_back({static_cast<int>(v), r});
        lengths.push_back(r.norm());
    }
    if (out.empty()) throw StageError("no silhouette rim vertices found");

    std::vector<double> sorted = lengths;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    const double limit = std::max(cfg.outlier_factor * median, cfg.outlier_floor_px);
    std::vector<Correspondence> kept;
    kept.reserve(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (lengths[i] <= limit) kept.push_back(out[i]);
    }
    return kept;
}

}  // namespace

std::vector<Correspondence> silhouette_correspondences(const TriMesh& mesh, const Camera& camera,
                                                       const RigidTransform& pose, const Contour& target,
                                                       const MorphConfig& cfg) {
    if (target.empty()) throw InvalidArgument("target contour is empty");
    camera.validate();
    return correspondences_with_field(mesh, camera, pose, distance_field(target, camera.width_px, camera.height_px),
                                      cfg);
}

std::vector<SparseDisplacement> backproject_displacements(const std::vector<Correspondence>& correspondences,
                                                          const TriMesh& mesh, const Camera& camera,
                                                          const RigidTransform& pose) {
    camera.validate();
    const Mat3 to_object = pose.rotation().transpose();
    std::vector<SparseDisplacement> out;
    out.reserve(correspondences.size());
    for (const auto& c : correspondences) {
        if (c.vertex < 0 || static_cast<std::size_t>(c.vertex) >= mesh.vertex_count()) {
            throw InvalidArgument("correspondence vertex index out of range");
        }
        const Vec3 x = pose.apply(mesh.vertex(c.vertex));
        if (!(x.z() > 1e-6)) throw InvalidArgument("vertex lies at or behind the x-ray source");
        const double k = camera.mm_per_pixel_at(x.z());
        const Vec3 ray = x.normalized();
        Vec3 d(k * c.residual_px.x(), k * c.residual_px.y(), 0.0);
        d -= ray * ray.dot(d);
        out.push_back({c.vertex, to_object * d, to_object * ray});
    }
    return out;
}

std::vector<SparseDisplacement> merge_views(const std::vector<std::vector<SparseDisplacement>>& per_view) {
    struct Acc {
        Mat3 a = Mat3::Zero();
        Vec3 b = Vec3::Zero();
        Vec3 ray = Vec3::Zero();
        int count = 0;
    };
    std::map<int, Acc> acc;
    for (const auto& view : per_view) {
        for (const auto& s : view) {
            Acc& e = acc[s.vertex];
            e.a += Mat3::Identity() - s.ray * s.ray.transpose();
            e.b += s.displacement_mm;
            e.ray = s.ray;
            ++e.count;
        }
    }
    std::vector<SparseDisplacement> out;
    out.reserve(acc.size());
    for (const auto& [v, e] : acc) {
        if (e.count == 1) {
            out.push_back({v, e.b, e.ray});
            continue;
        }
        // Pseudo-inverse of the symmetric projector sum.
        Eigen::SelfAdjointEigenSolver<Mat3> eig(e.a);
        const Vec3 lam = eig.eigenvalues();
        const Mat3 q = eig.eigenvectors();
        Vec3 y = q.transpose() * e.b;
        for (int k = 0; k < 3; ++k) y[k] = lam[k] > 1e-9 * lam.maxCoeff() ? y[k] / lam[k] : 0.0;
        out.push_back({v, q * y, e.ray});
    }
    return out;
}

std::vector<Vec3> propagate_and_smooth(const TriMesh& mesh, const std::vector<SparseDisplacement>& sparse,
                                       const MorphConfig& cfg) {
    const std::size_t n = mesh.vertex_count();
    std::vector<Vec3> dense(n, Vec3::Zero());
    if (sparse.empty()) return dense;
    const double sigma = influence_radius(mesh, cfg);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double cutoff2 = 9.0 * sigma * sigma;

    for (std::size_t v = 0; v < n; ++v) {
        const Vec3& p = mesh.vertex(v);
        Vec3 sum = Vec3::Zero();
        double wsum = 0.0;
        for (const auto& s : sparse) {
            const double r2 = (mesh.vertex(s.vertex) - p).squaredNorm();
            if (r2 > cutoff2) continue;
            const double w = std::exp(-r2 * inv2s2);
            sum += w * s.displacement_mm;
            wsum += w;
        }
        dense[v] = sum / std::max(wsum, 1.0);
    }

    const double lambda = cfg.smoothing_lambda;
    if (lambda <= 0.0 || cfg.smoothing_iterations == 0) return dense;
    const auto neighbors = vertex_neighbors(mesh);
    std::vector<Vec3> next(n);
    for (int it = 0; it < cfg.smoothing_iterations; ++it) {
        for (std::size_t v = 0; v < n; ++v) {
            if (neighbors[v].empty()) {
                next[v] = dense[v];
                continue;
            }
            Vec3 avg = Vec3::Zero();
            for (int u : neighbors[v]) avg += dense[u];
            avg /= static_cast<double>(neighbors[v].size());
            next[v] = (1.0 - lambda) * dense[v] + lambda * avg;
        }
        for (const auto& s : sparse) next[s.vertex] = (1.0 - lambda) * s.displacement_mm + lambda * next[s.vertex];
        dense.swap(next);
    }
    return dense;
}

MorphResult morph(const TriMesh& template_mesh, const std::vector<ViewTarget>& views, const RigidTransform& pose,
                  const MorphConfig& cfg, const RegistrationConfig& reg_cfg) {
    cfg.validate();
    if (views.empty()) throw InvalidArgument("morph needs at least one view");
    const auto targets = prepare(views);

    MorphResult out;
    out.prefit.pose = pose;
    if (cfg.prefit) out.prefit = similarity_prefit(template_mesh, views, pose, cfg, reg_cfg);
    out.pose = out.prefit.pose;

    MorphConfig local = cfg;
    if (local.influence_radius_mm <= 0.0) local.influence_radius_mm = influence_radius(template_mesh, cfg);

    TriMesh current = out.prefit.scale == 1.0 ? template_mesh
                                               : scale_mesh(template_mesh, out.prefit.scale, template_mesh.centroid());
    int growth = 0;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        out.iterations = it;
        const double rms = contour_rms_mm(targets, out.pose, current);
        out.history_mm.push_back(rms);
        if (it > 1) {
            const double prev = out.history_mm[it - 2];
            if (std::abs(prev - rms) < cfg.tolerance_mm) {
                out.converged = true;
                break;
            }
            growth = rms > 1.05 * prev ? growth + 1 : 0;
            if (growth >= 3) {
                out.diverged = true;
                break;
            }
        }

        std::vector<std::vector<SparseDisplacement>> per_view;
        for (const auto& t : targets) {
            const RigidTransform vp = t.view->view * out.pose;
            std::vector<Correspondence> corr;
            try {
                corr = correspondences_with_field(current, t.view->camera, vp, t.field, cfg);
            } catch (const StageError& e) {
                throw StageError("morph iteration " + std::to_string(it) + ", view " + t.view->name + ": " + e.what());
            }
            per_view.push_back(backproject_displacements(corr, current, t.view->camera, vp));
        }
        const auto field = propagate_and_smooth(current, merge_views(per_view), local);
        std::vector<Vec3> moved(current.vertices().begin(), current.vertices().end());
        for (std::size_t v = 0; v < moved.size(); ++v) moved[v] += cfg.step_fraction * field[v];
        try {
            current = current.with_vertices(std::move(moved));
        } catch (const InvalidArgument& e) {
            throw StageError("morph iteration " + std::to_string(it) + " produced an invalid mesh: " + e.what());
        }
    }

    out.mesh = current;
    out.displacements.resize(current.vertex_count());
    for (std::size_t v = 0; v < current.vertex_count(); ++v) {
        out.displacements[v] = current.vertex(v) - template_mesh.vertex(v);
    }
    return out;
}

}  // namespace implant
