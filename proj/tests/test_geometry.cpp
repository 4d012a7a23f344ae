#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include "implant/error.hpp"
#include "implant/geometry.hpp"
#include "implant/mesh_io.hpp"
#include "implant/synthetic.hpp"

using namespace implant;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "implant3d_geometry_tests";
    fs::create_directories(dir);
    return dir / name;
}

// Reference closest point: best of the three vertices, the clamped
// projections onto each edge, and the face-plane foot when inside.
Vec3 closest_on_triangle_oracle(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& p) {
    std::vector<Vec3> candidates{a, b, c};
    auto seg = [&](const Vec3& u, const Vec3& v) {
        const double t = std::clamp((p - u).dot(v - u) / (v - u).squaredNorm(), 0.0, 1.0);
        candidates.push_back(u + t * (v - u));
    };
    seg(a, b);
    seg(b, c);
    seg(c, a);
    const Vec3 n = (b - a).cross(c - a).normalized();
    const Vec3 foot = p - n * (p - a).dot(n);
    // Inside test via same-side barycentrics.
    const double d1 = (b - a).cross(foot - a).dot(n);
    const double d2 = (c - b).cross(foot - b).dot(n);
    const double d3 = (a - c).cross(foot - c).dot(n);
    if (d1 >= 0 && d2 >= 0 && d3 >= 0) candidates.push_back(foot);
    Vec3 best = candidates[0];
    for (const auto& q : candidates) {
        if ((q - p).squaredNorm() < (best - p).squaredNorm()) best = q;
    }
    return best;
}

void write_text_stl(const fs::path& path, const std::vector<std::array<Vec3, 3>>& facets) {
    std::ofstream out(path);
    out << "solid test\n";
    for (const auto& f : facets) {
        out << "facet normal 0 0 0\n outer loop\n";
        for (const auto& v : f) out << "  vertex " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
        out << " endloop\nendfacet\n";
    }
    out << "endsolid test\n";
}

}  // namespace

TEST(RigidTransformTest, RejectsNonRigidRotation) {
    Mat3 m = Mat3::Identity();
    m(0, 0) = 2.0;
    EXPECT_THROW(RigidTransform(m, Vec3::Zero()), InvalidArgument);
    Mat3 reflect = Mat3::Identity();
    reflect(2, 2) = -1.0;
    EXPECT_THROW(RigidTransform(reflect, Vec3::Zero()), InvalidArgument);
}

TEST(RigidTransformTest, CompositionAndInverse) {
    const RigidTransform a(Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix(), Vec3(1, -2, 4));
    const RigidTransform b(Eigen::AngleAxisd(-1.1, Vec3(0, 1, 0)).toRotationMatrix(), Vec3(10, 0, -3));
    const Vec3 p(0.5, 7.0, -2.0);
    EXPECT_LT(((a * b).apply(p) - a.apply(b.apply(p))).norm(), 1e-12);
    EXPECT_LT((a.inverse().apply(a.apply(p)) - p).norm(), 1e-12);
    const auto q = a.quaternion();
    EXPECT_GE(q.w(), 0.0);
    const auto back = RigidTransform::from_quaternion(q, a.translation());
    EXPECT_LT((back.rotation() - a.rotation()).norm(), 1e-12);
}

TEST(MeshTest, RejectsDegenerateAndInvalidInput) {
    EXPECT_THROW(TriMesh({}, {}), InvalidArgument);
    EXPECT_THROW(TriMesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)}, {{0, 1, 2}}), InvalidArgument);
    EXPECT_THROW(TriMesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 3}}), InvalidArgument);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(TriMesh({Vec3(nan, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}}), InvalidArgument);
}

TEST(MeshTest, NormalsAreUnitAndOutward) {
    const TriMesh box = make_box(Vec3(1, 1, 1));
    for (std::size_t i = 0; i < box.vertex_count(); ++i) {
        EXPECT_NEAR(box.normals()[i].norm(), 1.0, 1e-9);
        EXPECT_GT(box.normals()[i].dot(box.vertex(i)), 0.0);
    }
}

TEST(MeshTest, BoundingBoxEquivariance) {
    const TriMesh box = make_box(Vec3(1, 1, 1));
    const Aabb bb = bounding_box(box);
    EXPECT_LT((bb.min - Vec3(-0.5, -0.5, -0.5)).norm(), 1e-12);
    EXPECT_LT((bb.max - Vec3(0.5, 0.5, 0.5)).norm(), 1e-12);
    const Aabb moved = bounding_box(transform_mesh(box, RigidTransform::from_translation(Vec3(10, 0, 0))));
    EXPECT_LT((moved.min - Vec3(9.5, -0.5, -0.5)).norm(), 1e-12);
    EXPECT_NEAR(bounding_box(scale_mesh(box, 2.0, Vec3::Zero())).diagonal(), 2.0 * bb.diagonal(), 1e-12);
}

TEST(MeshTest, TransformIsRigid) {
    const TriMesh sphere = make_icosphere(10.0, 2);
    const RigidTransform t(Eigen::AngleAxisd(0.7, Vec3(1, 1, 0).normalized()).toRotationMatrix(), Vec3(3, 4, 5));
    const TriMesh moved = transform_mesh(sphere, t);
    for (std::size_t i = 0; i < sphere.vertex_count(); i += 7) {
        for (std::size_t j = i + 1; j < sphere.vertex_count(); j += 11) {
            EXPECT_NEAR((moved.vertex(i) - moved.vertex(j)).norm(), (sphere.vertex(i) - sphere.vertex(j)).norm(), 1e-9);
        }
    }
    const TriMesh single({Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(1, 1, 0)}, {{0, 1, 2}});
    const TriMesh rot = transform_mesh(single, RigidTransform(Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix(), Vec3::Zero()));
    EXPECT_LT((rot.vertex(0) - Vec3(0, 1, 0)).norm(), 1e-9);
}

TEST(MeshTest, ScaleAboutCentroid) {
    const TriMesh m = make_femoral_template();
    const Vec3 c = m.centroid();
    const TriMesh s = scale_mesh(m, 1.10, c);
    for (std::size_t i = 0; i < m.vertex_count(); ++i) {
        EXPECT_NEAR((s.vertex(i) - c).norm(), 1.10 * (m.vertex(i) - c).norm(), 1e-9);
    }
    EXPECT_THROW(scale_mesh(m, 0.0, c), InvalidArgument);
    EXPECT_THROW(scale_mesh(m, -1.0, c), InvalidArgument);
}

TEST(MeshIoTest, SingleFacetTextStl) {
    const auto path = temp_path("one.stl");
    write_text_stl(path, {{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}});
    const TriMesh m = load_mesh(path);
    EXPECT_EQ(m.vertex_count(), 3u);
    EXPECT_EQ(m.triangle_count(), 1u);
}

TEST(MeshIoTest, BinaryCubeWeldsToEightVertices) {
    const TriMesh cube = make_box(Vec3(1, 1, 1));
    const auto path = temp_path("cube.stl");
    save_mesh(cube, path, StlFormat::Binary);
    EXPECT_EQ(fs::file_size(path), 84u + 50u * 12u);
    const TriMesh loaded = load_mesh(path);

    // Weld oracle: count raw corners whose all-pairs distance exceeds tolerance.
    std::vector<Vec3> raw;
    for (const auto& t : cube.triangles()) {
        for (int k : t) raw.push_back(cube.vertex(k));
    }
    ASSERT_EQ(raw.size(), 36u);
    std::vector<Vec3> distinct;
    for (const auto& p : raw) {
        bool seen = false;
        for (const auto& q : distinct) seen = seen || (p - q).norm() <= 1e-6;
        if (!seen) distinct.push_back(p);
    }
    EXPECT_EQ(loaded.vertex_count(), distinct.size());
    EXPECT_EQ(loaded.vertex_count(), 8u);
    EXPECT_EQ(loaded.triangle_count(), 12u);
}

TEST(MeshIoTest, EmptyAndMalformedFilesRejected) {
    const auto empty = temp_path("empty.stl");
    write_text_stl(empty, {});
    EXPECT_THROW(load_mesh(empty), FormatError);
    const auto junk = temp_path("junk.stl");
    std::ofstream(junk) << "not an stl at all";
    EXPECT_THROW(load_mesh(junk), FormatError);
    EXPECT_THROW(load_mesh(temp_path("does_not_exist.stl")), IoError);
}

TEST(MeshIoTest, RoundTripTextAndBinary) {
    const TriMesh m = make_condyle_template();
    for (auto fmt : {StlFormat::Binary, StlFormat::Text}) {
        const auto path = temp_path(fmt == StlFormat::Binary ? "rt.bin.stl" : "rt.txt.stl");
        save_mesh(m, path, fmt);
        const TriMesh back = load_mesh(path);
        ASSERT_EQ(back.vertex_count(), m.vertex_count());
        ASSERT_EQ(back.triangle_count(), m.triangle_count());
        // Welding renumbers vertices; compare facet corners in facet order.
        for (std::size_t t = 0; t < m.triangle_count(); ++t) {
            for (int k = 0; k < 3; ++k) {
                EXPECT_LT((back.vertex(back.triangle(t)[k]) - m.vertex(m.triangle(t)[k])).norm(), 1e-5);
            }
        }
    }
}

TEST(MeshIoTest, InconsistentWindingRepaired) {
    const TriMesh cube = make_box(Vec3(2, 2, 2));
    std::vector<std::array<Vec3, 3>> facets;
    for (std::size_t t = 0; t < cube.triangle_count(); ++t) {
        auto tri = cube.triangle(t);
        if (t % 3 == 0) std::swap(tri[1], tri[2]);
        facets.push_back({cube.vertex(tri[0]), cube.vertex(tri[1]), cube.vertex(tri[2])});
    }
    const auto path = temp_path("flipped.stl");
    write_text_stl(path, facets);
    const TriMesh m = load_mesh(path);
    for (std::size_t t = 0; t < m.triangle_count(); ++t) {
        const auto& tri = m.triangle(t);
        const Vec3 center = (m.vertex(tri[0]) + m.vertex(tri[1]) + m.vertex(tri[2])) / 3.0;
        EXPECT_GT(m.face_normal(t).dot(center), 0.0);
    }
}

TEST(MeshIoTest, NanMeshRejectedBeforeWrite) {
    // A valid mesh cannot hold NaN, so the check is exercised via the
    // validating constructor.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(TriMesh({Vec3(0, 0, 0), Vec3(1, nan, 0), Vec3(0, 1, 0)}, {{0, 1, 2}}), InvalidArgument);
    EXPECT_THROW(save_mesh(make_box(Vec3(1, 1, 1)), "/nonexistent_dir/x.stl"), IoError);
}

TEST(SpatialIndexTest, FaceAndVertexRegions) {
    const TriMesh tri({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}});
    const SpatialIndex index(tri);
    const auto h1 = index.closest_point(Vec3(0.25, 0.25, 1.0));
    EXPECT_LT((h1.point - Vec3(0.25, 0.25, 0)).norm(), 1e-12);
    EXPECT_NEAR(h1.distance, 1.0, 1e-12);
    EXPECT_NEAR(h1.signed_distance, 1.0, 1e-12);
    const auto h2 = index.closest_point(Vec3(2, 0, 0));
    EXPECT_LT((h2.point - Vec3(1, 0, 0)).norm(), 1e-12);
    EXPECT_NEAR(h2.distance, 1.0, 1e-12);
    EXPECT_NEAR(index.closest_point(Vec3(0.1, 0.2, 0)).distance, 0.0, 1e-15);
    EXPECT_NEAR(index.closest_point(Vec3(0.25, 0.25, -2.0)).signed_distance, -2.0, 1e-12);
}

TEST(SpatialIndexTest, MatchesOracleAndExhaustiveScan) {
    const TriMesh cube = make_box(Vec3(1, 1, 1));
    const SpatialIndex index(cube);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 q(u(rng), u(rng), u(rng));
        const SurfaceHit fast = index.closest_point(q);
        const SurfaceHit slow = index.closest_point_exhaustive(q);
        EXPECT_EQ(fast.triangle, slow.triangle);
        EXPECT_EQ(fast.distance, slow.distance);
        EXPECT_EQ(fast.signed_distance, slow.signed_distance);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& t : cube.triangles()) {
            const Vec3 c = closest_on_triangle_oracle(cube.vertex(t[0]), cube.vertex(t[1]), cube.vertex(t[2]), q);
            best = std::min(best, (c - q).norm());
        }
        EXPECT_NEAR(fast.distance, best, 1e-12);
        const bool inside = q.cwiseAbs().maxCoeff() < 0.5;
        EXPECT_EQ(fast.signed_distance < 0, inside);
    }
}

TEST(SpatialIndexTest, SingleTriangleAlwaysReturned) {
    const TriMesh tri({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}});
    const SpatialIndex index(tri);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(index.closest_point(Vec3(u(rng), u(rng), u(rng))).triangle, 0);
}

TEST(SpatialIndexTest, SphereCenterDistanceIsRadius) {
    const TriMesh sphere = make_icosphere(10.0, 5);
    ASSERT_GE(sphere.triangle_count(), 10000u);
    const SpatialIndex index(sphere);
    const SurfaceHit h = index.closest_point(Vec3::Zero());
    // Icosphere vertices lie on the sphere; face interiors are inside it.
    double inradius = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < sphere.triangle_count(); ++t) {
        inradius = std::min(inradius, std::abs(sphere.face_normal(t).dot(sphere.vertex(sphere.triangle(t)[0]))));
    }
    EXPECT_NEAR(h.distance, inradius, 1e-9);
    EXPECT_NEAR(h.distance, 10.0, 5e-3);  // faceting
    EXPECT_LT(h.signed_distance, 0.0);
}

TEST(SpatialIndexTest, TiesBreakToLowestTriangle) {
    // Two coplanar triangles sharing the edge x = 1; queries above the edge
    // are equidistant from both.
    const TriMesh m({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(2, 0, 0)}, {{0, 1, 2}, {1, 3, 2}});
    const SpatialIndex index(m);
    EXPECT_EQ(index.closest_point(Vec3(1.0, 0.5, 3.0)).triangle, 0);
    EXPECT_EQ(index.closest_point_exhaustive(Vec3(1.0, 0.5, 3.0)).triangle, 0);
}

TEST(SpatialIndexTest, SignFlipsUnderReflection) {
    const TriMesh sphere = make_icosphere(20.0, 3);
    const SpatialIndex index(sphere);
    for (std::size_t v = 0; v < sphere.vertex_count(); v += 13) {
        const Vec3 n = sphere.normals()[v];
        const Vec3 p = sphere.vertex(v);
        const double out = index.closest_point(p + 0.2 * n).signed_distance;
        const double in = index.closest_point(p - 0.2 * n).signed_distance;
        EXPECT_GT(out, 0.0);
        EXPECT_LT(in, 0.0);
    }
}

TEST(SyntheticShapesTest, TemplatesAreClosedAndOutward) {
    for (const auto& m : {make_femoral_template(), make_condyle_template(), make_icosphere(5.0, 2), make_box(Vec3(1, 2, 3))}) {
        // Every edge shared by exactly two triangles in opposite directions.
        std::map<std::pair<int, int>, int> directed;
        for (const auto& t : m.triangles()) {
            for (int k = 0; k < 3; ++k) ++directed[{t[k], t[(k + 1) % 3]}];
        }
        for (const auto& [e, n] : directed) {
            EXPECT_EQ(n, 1);
            EXPECT_EQ(directed.count({e.second, e.first}), 1u);
        }
        double volume = 0.0;
        for (const auto& t : m.triangles()) volume += m.vertex(t[0]).dot(m.vertex(t[1]).cross(m.vertex(t[2]))) / 6.0;
        EXPECT_GT(volume, 0.0);
    }
}
