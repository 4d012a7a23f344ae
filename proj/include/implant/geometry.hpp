#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace implant {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Triangle = std::array<int, 3>;

/// Proper rigid motion x -> R x + t. Units are millimeters.
///
/// Construction validates that R is orthonormal with det(R) = +1 (within
/// 1e-9); every instance in circulation therefore satisfies the rigidity
/// invariant.
class RigidTransform {
public:
    RigidTransform();
    RigidTransform(const Mat3& rotation, const Vec3& translation);

    static RigidTransform from_quaternion(const Eigen::Quaterniond& q, const Vec3& translation);
    static RigidTransform from_translation(const Vec3& translation);
    /// Rotation about an arbitrary center point.
    static RigidTransform rotation_about(const Mat3& rotation, const Vec3& center);

    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    /// Unit quaternion with w >= 0.
    Eigen::Quaterniond quaternion() const;

    Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
    Vec3 rotate(const Vec3& v) const { return rotation_ * v; }
    RigidTransform inverse() const;

    /// Composition: (a * b).apply(p) == a.apply(b.apply(p)).
    friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

private:
    Mat3 rotation_;
    Vec3 translation_;
};

/// Rotation angle (degrees) of `a^-1 * b` and the translation difference (mm).
struct PoseDifference {
    double rotation_deg;
    double translation_mm;
};
PoseDifference pose_difference(const RigidTransform& a, const RigidTransform& b);

struct Aabb {
    Vec3 min;
    Vec3 max;

    Vec3 extent() const { return max - min; }
    double diagonal() const { return (max - min).norm(); }
    /// Squared distance from p to the box (0 inside).
    double squared_distance(const Vec3& p) const;
};

/// Indexed triangle surface in millimeters.
///
/// Immutable after construction. The constructor rejects empty meshes,
/// out-of-range indices, non-finite coordinates, and triangles with area
/// <= 1e-12 mm^2. Vertex normals are area-weighted averages of the
/// incident face normals, normalized to unit length; the outward side is
/// the counterclockwise side of each triangle.
class TriMesh {
public:
    TriMesh() = default;
    TriMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles);

    std::span<const Vec3> vertices() const { return vertices_; }
    std::span<const Triangle> triangles() const { return triangles_; }
    std::span<const Vec3> normals() const { return normals_; }

    std::size_t vertex_count() const { return vertices_.size(); }
    std::size_t triangle_count() const { return triangles_.size(); }
    bool empty() const { return triangles_.empty(); }

    const Vec3& vertex(std::size_t i) const { return vertices_[i]; }
    const Triangle& triangle(std::size_t i) const { return triangles_[i]; }

    Vec3 face_normal(std::size_t tri) const;
    double face_area(std::size_t tri) const;
    Vec3 centroid() const;  // mean of the vertices

    /// Same topology, new vertex positions (re-validated).
    TriMesh with_vertices(std::vector<Vec3> vertices) const;

private:
    std::vector<Vec3> vertices_;
    std::vector<Triangle> triangles_;
    std::vector<Vec3> normals_;
};

Aabb bounding_box(const TriMesh& mesh);
TriMesh transform_mesh(const TriMesh& mesh, const RigidTransform& t);
TriMesh scale_mesh(const TriMesh& mesh, double factor, const Vec3& center);

/// Vertex adjacency lists (sorted, unique) derived from the triangle list.
std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh);

struct SurfaceHit {
    Vec3 point;
    int triangle = -1;
    double distance = 0.0;
    /// Positive on the outward side. The sign is taken from the normal of
    /// the closest feature (face normal inside a face, pseudo-normal on an
    /// edge or vertex).
    double signed_distance = 0.0;
};

/// Bounding-volume hierarchy over a mesh's triangles.
///
/// Queries are exact: they return the same hit, bit for bit, as an
/// exhaustive scan over all triangles, with ties broken by lowest triangle
/// index. Read-only after construction and safe for concurrent queries.
class SpatialIndex {
public:
    explicit SpatialIndex(TriMesh mesh);

    const TriMesh& mesh() const { return mesh_; }

    SurfaceHit closest_point(const Vec3& query) const;
    /// Exhaustive reference scan; identical results to closest_point().
    SurfaceHit closest_point_exhaustive(const Vec3& query) const;

private:
    struct Node {
        Aabb box;
        int left = -1;   // child node index, -1 for leaves
        int right = -1;
        int begin = 0;   // range into order_ for leaves
        int end = 0;
    };

    struct Candidate {
        double squared_distance;
        int triangle;
        Vec3 point;
        int feature;  // 0 face, 1..3 edge (ab, bc, ca), 4..6 vertex (a, b, c)
    };

    int build(int begin, int end, std::vector<Vec3>& centroids);
    Candidate test_triangle(int tri, const Vec3& q) const;
    SurfaceHit finish(const Candidate& best, const Vec3& q) const;

    TriMesh mesh_;
    std::vector<Node> nodes_;
    std::vector<int> order_;
    std::vector<Vec3> face_normals_;
    std::vector<std::array<Vec3, 3>> edge_normals_;  // per triangle edge (ab, bc, ca)
    std::vector<Vec3> vertex_pseudo_normals_;
};

}  // namespace implant
