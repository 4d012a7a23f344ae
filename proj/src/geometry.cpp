#include "implant/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "implant/error.hpp"

namespace implant {

namespace {

constexpr double kRigidTolerance = 1e-9;
constexpr double kMinTriangleArea = 1e-12;

bool all_finite(const Vec3& v) {
    return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

}  // namespace

// ---------------------------------------------------------------------------
// RigidTransform

RigidTransform::RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
    if (!rotation_.allFinite() || !all_finite(translation_)) {
        throw InvalidArgument("rigid transform has non-finite entries");
    }
    const double orth = (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det = rotation_.determinant();
    if (orth > kRigidTolerance || std::abs(det - 1.0) > kRigidTolerance) {
        throw InvalidArgument("rotation matrix is not a proper rotation (orthonormality error " +
                              std::to_string(orth) + ", det " + std::to_string(det) + ")");
    }
}

RigidTransform RigidTransform::from_quaternion(const Eigen::Quaterniond& q, const Vec3& translation) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw InvalidArgument("quaternion has zero or non-finite norm");
    }
    return RigidTransform(q.normalized().toRotationMatrix(), translation);
}

RigidTransform RigidTransform::from_translation(const Vec3& translation) {
    return RigidTransform(Mat3::Identity(), translation);
}

RigidTransform RigidTransform::rotation_about(const Mat3& rotation, const Vec3& center) {
    return RigidTransform(rotation, center - rotation * center);
}

Eigen::Quaterniond RigidTransform::quaternion() const {
    Eigen::Quaterniond q(rotation_);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    return q;
}

RigidTransform RigidTransform::inverse() const {
    const Mat3 rt = rotation_.transpose();
    return RigidTransform(rt, -(rt * translation_));
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform out;
    out.rotation_ = a.rotation_ * b.rotation_;
    out.translation_ = a.rotation_ * b.translation_ + a.translation_;
    return out;
}

PoseDifference pose_difference(const RigidTransform& a, const RigidTransform& b) {
    const Mat3 rel = a.rotation().transpose() * b.rotation();
    const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    return {std::acos(c) * 180.0 / M_PI, (a.translation() - b.translation()).norm()};
}

// ---------------------------------------------------------------------------
// Aabb

double Aabb::squared_distance(const Vec3& p) const {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) {
        if (p[k] < min[k]) {
            const double e = min[k] - p[k];
            d += e * e;
        } else if (p[k] > max[k]) {
            const double e = p[k] - max[k];
            d += e * e;
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// TriMesh

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
    if (triangles_.empty() || vertices_.empty()) {
        throw InvalidArgument("mesh is empty");
    }
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
        if (!all_finite(vertices_[i])) {
            throw InvalidArgument("vertex " + std::to_string(i) + " has non-finite coordinates");
        }
    }
    const int n = static_cast<int>(vertices_.size());
    normals_.assign(vertices_.size(), Vec3::Zero());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        const auto& tri = triangles_[t];
        for (int idx : tri) {
            if (idx < 0 || idx >= n) {
                throw InvalidArgument("triangle " + std::to_string(t) + " references vertex " +
                                      std::to_string(idx) + " out of range");
            }
        }
        const Vec3 cross = (vertices_[tri[1]] - vertices_[tri[0]]).cross(vertices_[tri[2]] - vertices_[tri[0]]);
        if (0.5 * cross.norm() <= kMinTriangleArea) {
            throw InvalidArgument("triangle " + std::to_string(t) + " is degenerate");
        }
        for (int idx : tri) normals_[idx] += cross;
    }
    std::vector<bool> cancelled(normals_.size(), false);
    for (std::size_t i = 0; i < normals_.size(); ++i) {
        const double len = normals_[i].norm();
        if (len > 0.0) {
            normals_[i] /= len;
        } else {
            normals_[i] = Vec3::UnitZ();
            cancelled[i] = true;
        }
    }
    // Vertices whose incident normals cancel take the first incident face normal.
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        for (int idx : triangles_[t]) {
            if (cancelled[idx]) {
                normals_[idx] = face_normal(t);
                cancelled[idx] = false;
            }
        }
    }
}

Vec3 TriMesh::face_normal(std::size_t tri) const {
    const auto& t = triangles_[tri];
    return (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]).normalized();
}

double TriMesh::face_area(std::size_t tri) const {
    const auto& t = triangles_[tri];
    return 0.5 * (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]).norm();
}

Vec3 TriMesh::centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& v : vertices_) c += v;
    return c / static_cast<double>(vertices_.size());
}

TriMesh TriMesh::with_vertices(std::vector<Vec3> vertices) const {
    if (vertices.size() != vertices_.size()) {
        throw InvalidArgument("vertex count mismatch when replacing mesh vertices");
    }
    return TriMesh(std::move(vertices), triangles_);
}

Aabb bounding_box(const TriMesh& mesh) {
    if (mesh.empty()) throw InvalidArgument("bounding box of an empty mesh");
    Aabb box{mesh.vertex(0), mesh.vertex(0)};
    for (const auto& v : mesh.vertices()) {
        box.min = box.min.cwiseMin(v);
        box.max = box.max.cwiseMax(v);
    }
    return box;
}

TriMesh transform_mesh(const TriMesh& mesh, const RigidTransform& t) {
    std::vector<Vec3> out;
    out.reserve(mesh.vertex_count());
    for (const auto& v : mesh.vertices()) out.push_back(t.apply(v));
    return mesh.with_vertices(std::move(out));
}

TriMesh scale_mesh(const TriMesh& mesh, double factor, const Vec3& center) {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
        throw InvalidArgument("scale factor must be positive, got " + std::to_string(factor));
    }
    std::vector<Vec3> out;
    out.reserve(mesh.vertex_count());
    for (const auto& v : mesh.vertices()) out.push_back(center + factor * (v - center));
    return mesh.with_vertices(std::move(out));
}

std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh) {
    std::vector<std::vector<int>> adj(mesh.vertex_count());
    for (const auto& t : mesh.triangles()) {
        for (int k = 0; k < 3; ++k) {
            adj[t[k]].push_back(t[(k + 1) % 3]);
            adj[t[k]].push_back(t[(k + 2) % 3]);
        }
    }
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }
    return adj;
}

// ---------------------------------------------------------------------------
// SpatialIndex

namespace {

constexpr int kLeafSize = 4;

struct TriangleClosest {
    Vec3 point;
    int feature;
};

// Closest point on triangle abc (Ericson, Real-Time Collision Detection 5.1.5),
// also reporting which Voronoi feature contains it.
TriangleClosest closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return {a, 4};

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp);
    const double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return {b, 5};

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return {a + v * ab, 1};
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp);
    const double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return {c, 6};

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return {a + w * ac, 3};
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {b + w * (c - b), 2};
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom;
    const double w = vc * denom;
    return {a + ab * v + ac * w, 0};
}

}  // namespace

SpatialIndex::SpatialIndex(TriMesh mesh) : mesh_(std::move(mesh)) {
    if (mesh_.empty()) throw InvalidArgument("spatial index over an empty mesh");
    const std::size_t nt = mesh_.triangle_count();

    face_normals_.resize(nt);
    for (std::size_t t = 0; t < nt; ++t) face_normals_[t] = mesh_.face_normal(t);

    // Edge pseudo-normals: sum of the normals of all faces sharing the edge.
    std::map<std::pair<int, int>, Vec3> edge_sum;
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& tri = mesh_.triangle(t);
        for (int k = 0; k < 3; ++k) {
            const int u = tri[k];
            const int v = tri[(k + 1) % 3];
            auto [it, inserted] = edge_sum.try_emplace({std::min(u, v), std::max(u, v)}, Vec3::Zero());
            it->second += face_normals_[t];
        }
    }
    edge_normals_.resize(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& tri = mesh_.triangle(t);
        for (int k = 0; k < 3; ++k) {
            const int u = tri[k];
            const int v = tri[(k + 1) % 3];
            edge_normals_[t][k] = edge_sum.at({std::min(u, v), std::max(u, v)});
        }
    }

    // Angle-weighted vertex pseudo-normals.
    vertex_pseudo_normals_.assign(mesh_.vertex_count(), Vec3::Zero());
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& tri = mesh_.triangle(t);
        for (int k = 0; k < 3; ++k) {
            const Vec3& p = mesh_.vertex(tri[k]);
            const Vec3 e1 = (mesh_.vertex(tri[(k + 1) % 3]) - p).normalized();
            const Vec3 e2 = (mesh_.vertex(tri[(k + 2) % 3]) - p).normalized();
            const double angle = std::acos(std::clamp(e1.dot(e2), -1.0, 1.0));
            vertex_pseudo_normals_[tri[k]] += angle * face_normals_[t];
        }
    }

    order_.resize(nt);
    std::iota(order_.begin(), order_.end(), 0);
    std::vector<Vec3> centroids(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& tri = mesh_.triangle(t);
        centroids[t] = (mesh_.vertex(tri[0]) + mesh_.vertex(tri[1]) + mesh_.vertex(tri[2])) / 3.0;
    }
    nodes_.reserve(2 * nt / kLeafSize + 2);
    build(0, static_cast<int>(nt), centroids);
}

int SpatialIndex::build(int begin, int end, std::vector<Vec3>& centroids) {
    Node node;
    const auto& first = mesh_.triangle(order_[begin]);
    node.box = {mesh_.vertex(first[0]), mesh_.vertex(first[0])};
    for (int i = begin; i < end; ++i) {
        for (int idx : mesh_.triangle(order_[i])) {
            node.box.min = node.box.min.cwiseMin(mesh_.vertex(idx));
            node.box.max = node.box.max.cwiseMax(mesh_.vertex(idx));
        }
    }
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) {
        nodes_[self].begin = begin;
        nodes_[self].end = end;
        return self;
    }
    int axis = 0;
    node.box.extent().maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         if (centroids[a][axis] != centroids[b][axis]) return centroids[a][axis] < centroids[b][axis];
                         return a < b;
                     });
    const int left = build(begin, mid, centroids);
    const int right = build(mid, end, centroids);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
}

SpatialIndex::Candidate SpatialIndex::test_triangle(int tri, const Vec3& q) const {
    const auto& t = mesh_.triangle(tri);
    const auto hit = closest_on_triangle(q, mesh_.vertex(t[0]), mesh_.vertex(t[1]), mesh_.vertex(t[2]));
    return {(q - hit.point).squaredNorm(), tri, hit.point, hit.feature};
}

SurfaceHit SpatialIndex::finish(const Candidate& best, const Vec3& q) const {
    const auto& tri = mesh_.triangle(best.triangle);
    Vec3 n;
    if (best.feature == 0) {
        n = face_normals_[best.triangle];
    } else if (best.feature <= 3) {
        n = edge_normals_[best.triangle][best.feature - 1];
    } else {
        n = vertex_pseudo_normals_[tri[best.feature - 4]];
    }
    SurfaceHit hit;
    hit.point = best.point;
    hit.triangle = best.triangle;
    hit.distance = std::sqrt(best.squared_distance);
    hit.signed_distance = (q - best.point).dot(n) < 0.0 ? -hit.distance : hit.distance;
    return hit;
}

SurfaceHit SpatialIndex::closest_point(const Vec3& query) const {
    Candidate best{std::numeric_limits<double>::infinity(), -1, Vec3::Zero(), 0};
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& node = nodes_[stack[--top]];
        if (node.box.squared_distance(query) > best.squared_distance) continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const Candidate c = test_triangle(order_[i], query);
                if (c.squared_distance < best.squared_distance ||
                    (c.squared_distance == best.squared_distance && c.triangle < best.triangle)) {
                    best = c;
                }
            }
            continue;
        }
        const double dl = nodes_[node.left].box.squared_distance(query);
        const double dr = nodes_[node.right].box.squared_distance(query);
        // Push the farther child first so the nearer one is visited next.
        if (dl <= dr) {
            stack[top++] = node.right;
            stack[top++] = node.left;
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    return finish(best, query);
}

SurfaceHit SpatialIndex::closest_point_exhaustive(const Vec3& query) const {
    Candidate best{std::numeric_limits<double>::infinity(), -1, Vec3::Zero(), 0};
    for (int t = 0; t < static_cast<int>(mesh_.triangle_count()); ++t) {
        const Candidate c = test_triangle(t, query);
        if (c.squared_distance < best.squared_distance) best = c;
    }
    return finish(best, query);
}

}  // namespace implant
