#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "implant/geometry.hpp"

namespace implant {

/// Point-source fluoroscope model.
///
/// Camera space has the x-ray source at the origin and the source axis
/// along +z towards the detector, which sits at z = sdd_mm. Pixel (i, j)
/// is centered at image coordinates (i, j); x grows along image columns
/// and y along image rows.
struct Camera {
    double sdd_mm = 1000.0;
    double pitch_mm = 0.25;
    int width_px = 1024;
    int height_px = 1024;
    Vec2 principal_px{511.5, 511.5};

    /// Default geometry at the given square resolution, keeping the
    /// 256 mm detector field of view of the 1024 px default.
    static Camera with_resolution(int resolution_px);

    void validate() const;
    /// Object-plane millimeters per pixel at the given depth.
    double mm_per_pixel_at(double depth_mm) const { return pitch_mm * depth_mm / sdd_mm; }
};

/// Standard fluoroscopic view: rotation about the subject's vertical axis
/// (camera y) relative to the anterior-posterior view.
struct ViewDefinition {
    std::string name;
    double angle_deg = 0.0;
};

/// AP (0), ML (90), ROT+45 (+45), ROT-45 (-45).
std::array<ViewDefinition, 4> standard_views();

/// Directory-safe lowercase view name ("ap", "ml", "rot+45", "rot-45").
std::string view_dir_name(const ViewDefinition& view);

/// Rigid motion taking AP-camera coordinates to this view's camera
/// coordinates: rotation about the vertical axis through the isocenter
/// (0, 0, isocenter_mm).
RigidTransform view_transform(const ViewDefinition& view, double isocenter_mm);

/// Binary silhouette image, row-major, values 0 (background) or 255.
class Mask {
public:
    Mask() = default;
    Mask(int width, int height);
    /// Validates that only 0 and 255 appear.
    Mask(int width, int height, std::vector<std::uint8_t> pixels);

    int width() const { return width_; }
    int height() const { return height_; }
    bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
    bool foreground(int x, int y) const { return inside(x, y) && pixels_[index(x, y)] != 0; }
    void set(int x, int y, bool on) { pixels_[index(x, y)] = on ? 255 : 0; }
    std::uint8_t* row(int y) { return pixels_.data() + static_cast<std::size_t>(y) * width_; }
    std::size_t count() const;

    const std::vector<std::uint8_t>& pixels() const { return pixels_; }
    bool operator==(const Mask&) const = default;

private:
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

struct Pixel {
    int x = 0;
    int y = 0;
    bool operator==(const Pixel&) const = default;
};

/// Closed, ordered one-pixel boundary. The last point connects back to the
/// first; the closing point is not repeated.
struct Contour {
    std::vector<Pixel> points;
    bool closed = true;
    bool subpixel = false;
    /// Set when the source mask had several 8-connected components and only
    /// the largest was traced.
    bool fragmented = false;

    bool empty() const { return points.empty(); }
};

/// Perspective projection of an object point placed by `pose`.
/// Throws InvalidArgument when the placed point is at or behind the source.
Vec2 project_point(const Camera& camera, const RigidTransform& pose, const Vec3& p);

/// Union of all projected triangles, sampled at pixel centers with a
/// top-left fill rule. Throws StageError when the mesh is behind the source
/// or its footprint misses the image.
Mask render_silhouette(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh);

/// Moore-neighbor tracing (8-connectivity) of the outer boundary of the
/// largest 8-connected component, counterclockwise on screen, starting at
/// its topmost-then-leftmost pixel. Throws InvalidArgument on an empty mask.
Contour extract_contour(const Mask& mask);

/// Equivalent to extract_contour(render_silhouette(...)) but works on the
/// projected bounding box only.
Contour silhouette_contour(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh);

/// Exact Euclidean distance (pixels) from every pixel to the nearest
/// contour point, plus the linear index (y * width + x) of that point.
struct DistanceField {
    int width = 0;
    int height = 0;
    std::vector<double> distance;
    std::vector<int> nearest;

    double at(int x, int y) const { return distance[static_cast<std::size_t>(y) * width + x]; }
    Pixel nearest_point(int x, int y) const {
        const int n = nearest[static_cast<std::size_t>(y) * width + x];
        return {n % width, n / width};
    }
};

DistanceField distance_field(const Contour& contour, int width, int height);

}  // namespace implant
