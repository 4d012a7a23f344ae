#pragma once

#include <vector>

#include "implant/geometry.hpp"
#include "implant/imaging.hpp"
#include "implant/registration.hpp"

namespace implant {

struct MorphConfig {
    int max_iterations = 50;
    double tolerance_mm = 0.05;         // contour RMS change that ends the loop
    double step_fraction = 0.5;
    double smoothing_lambda = 0.3;
    int smoothing_iterations = 3;
    double influence_radius_mm = 0.0;   // 0: 10% of the template bounding-box diagonal
    double rim_distance_px = 1.5;
    double outlier_factor = 5.0;        // residuals above factor * median are dropped
    double outlier_floor_px = 2.0;      // never drop residuals below this
    bool prefit = true;
    double scale_min = 0.8;
    double scale_max = 1.25;
    double scale_tolerance = 1e-3;

    void validate() const;
};

struct Correspondence {
    int vertex = -1;
    Vec2 residual_px;  // target point minus model contour point
};

struct SparseDisplacement {
    int vertex = -1;
    Vec3 displacement_mm;  // object frame, perpendicular to `ray`
    Vec3 ray;              // unit viewing ray through the vertex, object frame
};

struct PrefitResult {
    double scale = 1.0;
    RigidTransform pose;
    double residual_px = 0.0;  // mean over views at (scale, pose)
};

struct MorphResult {
    TriMesh mesh;                      // object frame, template topology
    std::vector<Vec3> displacements;   // morphed minus template vertex, mm
    std::vector<double> history_mm;    // contour RMS at the start of each iteration
    bool converged = false;
    bool diverged = false;
    int iterations = 0;
    PrefitResult prefit;
    RigidTransform pose;               // object -> reference camera
};

/// Uniform scale about the template centroid plus a re-registered pose.
/// Scale is found by golden-section search over [scale_min, scale_max];
/// StageError when the optimum sits on the bracket boundary.
PrefitResult similarity_prefit(const TriMesh& template_mesh, const std::vector<ViewTarget>& views,
                               const RigidTransform& init, const MorphConfig& cfg = {},
                               const RegistrationConfig& reg_cfg = {});

/// Rim vertices of `mesh` in one view (projection within rim_distance_px of
/// the model's own contour) paired with the target contour. The residual
/// runs from the model contour pixel nearest the vertex to the target pixel
/// nearest that contour pixel. Outliers are dropped as configured.
std::vector<Correspondence> silhouette_correspondences(const TriMesh& mesh, const Camera& camera,
                                                       const RigidTransform& pose, const Contour& target,
                                                       const MorphConfig& cfg = {});

/// Lifts pixel residuals to millimeters at each vertex's depth and keeps the
/// component perpendicular to its viewing ray. Output is in object frame.
std::vector<SparseDisplacement> backproject_displacements(const std::vector<Correspondence>& correspondences,
                                                          const TriMesh& mesh, const Camera& camera,
                                                          const RigidTransform& pose);

/// Per-vertex least-squares merge of displacements seen in several views:
/// solves (sum P_v) d = sum d_v with P_v the projector orthogonal to ray v.
std::vector<SparseDisplacement> merge_views(const std::vector<std::vector<SparseDisplacement>>& per_view);

/// Gaussian scatter (sigma = influence radius) of the sparse set to every
/// vertex, then Laplacian smoothing with rim vertices re-anchored to
/// (1 - lambda) * assigned + lambda * smoothed.
std::vector<Vec3> propagate_and_smooth(const TriMesh& mesh, const std::vector<SparseDisplacement>& sparse,
                                       const MorphConfig& cfg = {});

MorphResult morph(const TriMesh& template_mesh, const std::vector<ViewTarget>& views, const RigidTransform& pose,
                  const MorphConfig& cfg = {}, const RegistrationConfig& reg_cfg = {});

}  // namespace implant
