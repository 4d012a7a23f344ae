#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "implant/geometry.hpp"
#include "implant/imaging.hpp"

namespace implant {

struct RegistrationConfig {
    int max_iterations = 600;          // simplex iterations per restart
    double tolerance_px = 0.01;        // cost change counted as a stall
    double simplex_tolerance = 0.01;   // diameter, 1 deg == 1 mm == 1 unit
    double initial_rotation_deg = 4.0;
    double initial_translation_mm = 4.0;
    int restarts = 4;
    double restart_jitter_deg = 2.0;
    bool symmetric = false;
    /// Start with a half-resolution pass when every view is at least 256 px.
    bool coarse_to_fine = true;
    /// A result is reported as converged only when the optimizer stopped on
    /// its own criteria and the mean per-view residual is at most this.
    double accept_residual_px = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// One fluoroscopic view of the object: the camera, the rigid motion from
/// the reference (AP) camera frame to this view's camera frame, and the
/// target silhouette contour.
struct ViewTarget {
    std::string name;
    Camera camera;
    RigidTransform view;
    Contour target;
};

struct ViewResidual {
    std::string name;
    double residual_px = 0.0;
    double residual_mm = 0.0;
};

struct RegistrationResult {
    RigidTransform pose;       // object -> reference camera
    double residual_px = 0.0;  // mean over views
    double residual_mm = 0.0;
    bool converged = false;
    int iterations = 0;        // simplex iterations summed over restarts
    int evaluations = 0;
    std::vector<ViewResidual> per_view;
};

/// Mean over the model's rendered contour pixels of the target's distance
/// field (pixels). With `symmetric`, the target-to-model mean is added and
/// the two are averaged.
double contour_residual(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh,
                        const Contour& target, bool symmetric = false);

RegistrationResult register_single_view(const Camera& camera, const TriMesh& mesh, const Contour& target,
                                        const RigidTransform& init, const RegistrationConfig& cfg = {});

/// Single object pose, composed with each view's known rotation, fitted to
/// the sum of the per-view residuals.
RegistrationResult register_multi_view(const std::vector<ViewTarget>& views, const TriMesh& mesh,
                                       const RigidTransform& init, const RegistrationConfig& cfg = {});

// Exposed for reuse by the morphing prefit.

/// Pose at parameters (rx, ry, rz deg, tx, ty, tz mm): rotation Rx*Ry*Rz
/// about `center` (object coordinates) applied before `init`, translation
/// added in the reference camera frame.
RigidTransform pose_from_parameters(const RigidTransform& init, const Vec3& center, const std::array<double, 6>& p);

struct SimplexResult {
    std::array<double, 6> best{};
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Nelder-Mead over six parameters with per-coordinate initial steps.
SimplexResult nelder_mead(const std::function<double(const std::array<double, 6>&)>& f,
                          const std::array<double, 6>& start, const std::array<double, 6>& step, int max_iterations,
                          double value_tolerance, double diameter_tolerance);

}  // namespace implant
