#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "implant/geometry.hpp"
#include "implant/imaging.hpp"

namespace implant {

// Procedural shapes. All are closed (except the plate), outward-wound, in mm.

TriMesh make_box(const Vec3& size, const Vec3& center = Vec3::Zero());
/// Single square of side `side` in the z = 0 plane, facing +z.
TriMesh make_plate(double side, const Vec3& center = Vec3::Zero());
TriMesh make_icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero());

/// Closed polygon in the (z, y) plane extruded along x over [x0, x1].
/// The polygon must be simple; its orientation is normalized internally.
TriMesh extrude_profile(const std::vector<Vec2>& profile_zy, double x0, double x1, int segments);

/// Femoral-component-like shell: a J-curve sagittal profile with an
/// internal box cut, 60 mm mediolateral. Object axes: x mediolateral,
/// y proximal-distal, z anterior-posterior.
TriMesh make_femoral_template();
/// Asymmetric rounded superellipsoid, about 70 x 60 x 50 mm.
TriMesh make_condyle_template();

/// "femoral" or "condyle"; InvalidArgument for other names.
TriMesh builtin_template(std::string_view name);

/// Boundary noise: every foreground pixel with a background 4-neighbor is
/// eroded, and every background pixel with a foreground 4-neighbor is
/// dilated, each with probability `probability / 2`.
struct NoiseConfig {
    bool enabled = false;
    double probability = 0.5;
    std::uint64_t seed = 0;
};

Mask apply_boundary_noise(const Mask& mask, const NoiseConfig& noise, std::uint64_t stream);

struct SyntheticView {
    ViewDefinition view;
    Camera camera;
    RigidTransform pose;  // object -> this view's camera
    Mask mask;
    Contour contour;
};

struct SyntheticCase {
    std::string case_id;
    std::string template_path;
    std::string truth_path;
    TriMesh template_mesh;
    TriMesh truth_mesh;
    double scale = 1.0;
    RigidTransform object_pose;  // object -> AP camera
    double isocenter_mm = 500.0;
    std::array<SyntheticView, 4> views;
};

/// Truth = template scaled about its centroid; per view the object pose is
/// composed with the view rotation, the truth silhouette rendered, optional
/// boundary noise applied, and the contour extracted.
SyntheticCase generate_synthetic_case(const TriMesh& template_mesh, double scale,
                                      const std::array<Camera, 4>& cameras, const RigidTransform& object_pose,
                                      const NoiseConfig& noise, double isocenter_mm = 500.0);

/// Mersenne twister with platform-independent uniform draws (the standard
/// distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace implant
