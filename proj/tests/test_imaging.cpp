#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include <png.h>

#include "implant/coco.hpp"
#include "implant/error.hpp"
#include "implant/image_io.hpp"
#include "implant/imaging.hpp"
#include "implant/serialization.hpp"
#include "implant/synthetic.hpp"

using namespace implant;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "implant3d_imaging_tests";
    fs::create_directories(dir);
    return dir / name;
}

Mask block_mask(int w, int h, int x0, int y0, int bw, int bh) {
    Mask m(w, h);
    for (int y = y0; y < y0 + bh; ++y) {
        for (int x = x0; x < x0 + bw; ++x) m.set(x, y, true);
    }
    return m;
}

// Random blob: union of a few discs.
Mask random_blob(std::mt19937_64& rng, int size) {
    std::uniform_real_distribution<double> pos(size * 0.3, size * 0.7);
    std::uniform_real_distribution<double> rad(size * 0.05, size * 0.2);
    Mask m(size, size);
    const double cx0 = pos(rng), cy0 = pos(rng);
    for (int k = 0; k < 4; ++k) {
        const double cx = k == 0 ? cx0 : cx0 + (pos(rng) - size * 0.5) * 0.5;
        const double cy = k == 0 ? cy0 : cy0 + (pos(rng) - size * 0.5) * 0.5;
        const double r = rad(rng);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y, true);
            }
        }
    }
    return m;
}

bool has_background_4_neighbor(const Mask& m, const Pixel& p) {
    return !m.foreground(p.x - 1, p.y) || !m.foreground(p.x + 1, p.y) || !m.foreground(p.x, p.y - 1) ||
           !m.foreground(p.x, p.y + 1);
}

double shoelace(const std::vector<Pixel>& pts) {
    double a = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        const auto& q = pts[(i + 1) % pts.size()];
        a += double(p.x) * q.y - double(q.x) * p.y;
    }
    return 0.5 * a;
}

void write_gray_png(const fs::path& path, int w, int h, const std::vector<std::uint8_t>& data, bool rgb) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = w;
    img.height = h;
    img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    ASSERT_TRUE(png_image_write_to_file(&img, path.c_str(), 0, data.data(), 0, nullptr));
}

}  // namespace

TEST(CameraTest, AxialPointProjectsToPrincipal) {
    const Camera cam;
    for (double z : {100.0, 500.0, 999.0}) {
        const Vec2 uv = project_point(cam, RigidTransform(), Vec3(0, 0, z));
        EXPECT_EQ(uv.x(), cam.principal_px.x());
        EXPECT_EQ(uv.y(), cam.principal_px.y());
    }
}

TEST(CameraTest, MagnificationBySimilarTriangles) {
    Camera cam;
    cam.pitch_mm = 1.0;
    const Vec2 uv = project_point(cam, RigidTransform(), Vec3(10, 0, 500));
    EXPECT_NEAR(uv.x() - cam.principal_px.x(), 20.0, 1e-12);
    EXPECT_THROW(project_point(cam, RigidTransform(), Vec3(1, 0, 0)), InvalidArgument);
    EXPECT_THROW(project_point(cam, RigidTransform(), Vec3(1, 0, -5)), InvalidArgument);
}

TEST(CameraTest, ValidationRejectsBadParameters) {
    Camera c;
    c.sdd_mm = 0.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = Camera{};
    c.principal_px = Vec2(2000, 10);
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(ViewsTest, StandardFourViews) {
    const auto views = standard_views();
    ASSERT_EQ(views.size(), 4u);
    std::set<std::string> names;
    std::multiset<double> angles;
    for (const auto& v : views) {
        names.insert(v.name);
        angles.insert(v.angle_deg);
    }
    EXPECT_EQ(names.size(), 4u);
    EXPECT_EQ(views[0].name, "AP");
    EXPECT_EQ(views[0].angle_deg, 0.0);
    EXPECT_EQ(views[1].name, "ML");
    EXPECT_EQ(views[1].angle_deg, 90.0);
    EXPECT_EQ(angles, (std::multiset<double>{0.0, 90.0, 45.0, -45.0}));
    EXPECT_EQ(view_dir_name(views[2]), "rot+45");
}

TEST(ViewsTest, ViewTransformFixesIsocenter) {
    for (const auto& v : standard_views()) {
        const RigidTransform t = view_transform(v, 500.0);
        EXPECT_LT((t.apply(Vec3(0, 0, 500)) - Vec3(0, 0, 500)).norm(), 1e-12);
    }
}

TEST(RenderTest, PlateAreaMatchesAnalytic) {
    Camera cam;
    cam.pitch_mm = 1.0;
    cam.width_px = 256;
    cam.height_px = 256;
    cam.principal_px = Vec2(127.5, 127.5);
    const TriMesh plate = make_plate(20.0);
    const Mask m = render_silhouette(cam, RigidTransform::from_translation(Vec3(0, 0, 500)), plate);
    EXPECT_NEAR(double(m.count()), 1600.0, 0.02 * 1600.0);
}

TEST(RenderTest, ShiftEquivariance) {
    Camera cam = Camera::with_resolution(256);
    cam.pitch_mm = 1.0;
    const TriMesh plate = make_plate(20.0);
    // 1 pixel at depth 500 with magnification 2 is 0.5 mm.
    const int k = 7;
    const Mask a = render_silhouette(cam, RigidTransform::from_translation(Vec3(0.13, 0.21, 500)), plate);
    const Mask b = render_silhouette(cam, RigidTransform::from_translation(Vec3(0.13 + 0.5 * k, 0.21, 500)), plate);
    for (int y = 0; y < cam.height_px; ++y) {
        for (int x = 0; x + k < cam.width_px; ++x) ASSERT_EQ(a.foreground(x, y), b.foreground(x + k, y));
    }
}

TEST(RenderTest, ErrorsAndDeterminism) {
    const Camera cam = Camera::with_resolution(128);
    const TriMesh box = make_box(Vec3(20, 20, 20));
    EXPECT_THROW(render_silhouette(cam, RigidTransform::from_translation(Vec3(0, 0, -100)), box), StageError);
    EXPECT_THROW(render_silhouette(cam, RigidTransform::from_translation(Vec3(5000, 0, 500)), box), StageError);
    const RigidTransform pose(Eigen::AngleAxisd(0.4, Vec3(1, 2, 0).normalized()).toRotationMatrix(), Vec3(3, -2, 480));
    EXPECT_EQ(render_silhouette(cam, pose, box), render_silhouette(cam, pose, box));
}

TEST(RenderTest, RoiContourMatchesFullFrame) {
    const Camera cam = Camera::with_resolution(512);
    const TriMesh femoral = make_femoral_template();
    const RigidTransform pose(Eigen::AngleAxisd(0.3, Vec3(0, 1, 0)).toRotationMatrix(), Vec3(4, -6, 500));
    const Contour a = silhouette_contour(cam, pose, femoral);
    const Contour b = extract_contour(render_silhouette(cam, pose, femoral));
    EXPECT_EQ(a.points, b.points);
}

TEST(ContourTest, ThreeByThreeBlockRing) {
    const Contour c = extract_contour(block_mask(5, 5, 1, 1, 3, 3));
    ASSERT_EQ(c.points.size(), 8u);
    EXPECT_EQ(c.points[0], (Pixel{1, 1}));
    std::set<std::pair<int, int>> got;
    for (const auto& p : c.points) got.insert({p.x, p.y});
    const std::set<std::pair<int, int>> expected{{1, 1}, {2, 1}, {3, 1}, {1, 2}, {3, 2}, {1, 3}, {2, 3}, {3, 3}};
    EXPECT_EQ(got, expected);
    // Counterclockwise on screen (y down) means negative shoelace area.
    EXPECT_LT(shoelace(c.points), 0.0);
    EXPECT_TRUE(c.closed);
    EXPECT_FALSE(c.subpixel);
    EXPECT_FALSE(c.fragmented);
}

TEST(ContourTest, SinglePixelAndEmpty) {
    const Contour c = extract_contour(block_mask(5, 5, 2, 2, 1, 1));
    ASSERT_EQ(c.points.size(), 1u);
    EXPECT_EQ(c.points[0], (Pixel{2, 2}));
    EXPECT_THROW(extract_contour(Mask(5, 5)), InvalidArgument);
}

TEST(ContourTest, FragmentedKeepsLargest) {
    Mask m = block_mask(20, 20, 1, 1, 3, 3);
    for (int y = 8; y < 16; ++y) {
        for (int x = 8; x < 16; ++x) m.set(x, y, true);
    }
    const Contour c = extract_contour(m);
    EXPECT_TRUE(c.fragmented);
    EXPECT_EQ(c.points[0], (Pixel{8, 8}));
    EXPECT_EQ(c.points.size(), 28u);
}

TEST(ContourTest, RandomMasksOnePixelThickAndClosed) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Mask m = random_blob(rng, 96);
        const Contour c = extract_contour(m);
        ASSERT_GE(c.points.size(), 8u);
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            const Pixel& p = c.points[i];
            const Pixel& q = c.points[(i + 1) % c.points.size()];
            EXPECT_TRUE(m.foreground(p.x, p.y));
            EXPECT_TRUE(has_background_4_neighbor(m, p));
            EXPECT_LE(std::max(std::abs(p.x - q.x), std::abs(p.y - q.y)), 1);
            EXPECT_FALSE(p == q);
        }
    }
}

TEST(DistanceFieldTest, IsolatedPointAndContourZeros) {
    Contour c;
    c.points = {{10, 10}};
    const DistanceField f = distance_field(c, 32, 32);
    EXPECT_EQ(f.at(10, 10), 0.0);
    EXPECT_EQ(f.at(15, 10), 5.0);
    EXPECT_EQ(f.nearest_point(15, 10), (Pixel{10, 10}));
    EXPECT_THROW(distance_field(Contour{}, 32, 32), InvalidArgument);
}

TEST(DistanceFieldTest, MatchesBruteForce) {
    std::mt19937_64 rng(5);
    for (int size : {64, 128}) {
        const Mask m = random_blob(rng, size);
        const Contour c = extract_contour(m);
        const DistanceField f = distance_field(c, size, size);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& p : c.points) {
                    best = std::min(best, std::sqrt(double((p.x - x) * (p.x - x) + (p.y - y) * (p.y - y))));
                }
                ASSERT_EQ(f.at(x, y), best) << x << "," << y;
                const Pixel n = f.nearest_point(x, y);
                ASSERT_EQ(std::sqrt(double((n.x - x) * (n.x - x) + (n.y - y) * (n.y - y))), best);
            }
        }
    }
}

TEST(SyntheticCaseTest, SelfCaseMatchesTemplateSilhouette) {
    const TriMesh t = make_condyle_template();
    const Camera cam = Camera::with_resolution(256);
    const std::array<Camera, 4> cams{cam, cam, cam, cam};
    const RigidTransform pose = RigidTransform::from_translation(Vec3(0, 0, 500));
    const SyntheticCase sc = generate_synthetic_case(t, 1.0, cams, pose, NoiseConfig{});
    std::set<std::string> names;
    for (const auto& v : sc.views) {
        names.insert(v.view.name);
        EXPECT_EQ(v.mask.width(), v.camera.width_px);
        EXPECT_EQ(v.mask.height(), v.camera.height_px);
        EXPECT_EQ(v.contour.points, extract_contour(render_silhouette(v.camera, v.pose, t)).points);
    }
    EXPECT_EQ(names.size(), 4u);
}

TEST(SyntheticCaseTest, ScaledTruthDiagonal) {
    const TriMesh t = make_femoral_template();
    const Camera cam = Camera::with_resolution(128);
    const SyntheticCase sc =
        generate_synthetic_case(t, 1.10, {cam, cam, cam, cam}, RigidTransform::from_translation(Vec3(0, 0, 500)), {});
    EXPECT_NEAR(bounding_box(sc.truth_mesh).diagonal(), 1.10 * bounding_box(t).diagonal(), 1e-9);
}

TEST(SyntheticCaseTest, BoundaryNoiseStaysWithinOnePixel) {
    const Mask m = block_mask(64, 64, 10, 10, 30, 30);
    NoiseConfig noise;
    noise.enabled = true;
    noise.seed = 3;
    const Mask n = apply_boundary_noise(m, noise, 0);
    EXPECT_NE(n, m);
    EXPECT_EQ(n, apply_boundary_noise(m, noise, 0));
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const bool deep_in = x >= 11 && x <= 38 && y >= 11 && y <= 38;
            const bool far_out = x < 9 || x > 40 || y < 9 || y > 40;
            if (deep_in) {
                EXPECT_TRUE(n.foreground(x, y));
            }
            if (far_out) {
                EXPECT_FALSE(n.foreground(x, y));
            }
        }
    }
}

TEST(MaskIoTest, PgmRoundTripAndThreshold) {
    const Mask m = block_mask(17, 9, 2, 3, 5, 4);
    const auto path = temp_path("m.pgm");
    write_pgm(m, path);
    EXPECT_EQ(import_mask(path), m);

    const auto gray = temp_path("g.pgm");
    {
        std::ofstream out(gray, std::ios::binary);
        out << "P5\n3 1\n255\n";
        const unsigned char px[3] = {0, 127, 200};
        out.write(reinterpret_cast<const char*>(px), 3);
    }
    const Mask g = import_mask(gray);
    EXPECT_FALSE(g.foreground(0, 0));
    EXPECT_FALSE(g.foreground(1, 0));
    EXPECT_TRUE(g.foreground(2, 0));
}

TEST(MaskIoTest, PngGrayAcceptedColorRejected) {
    const auto path = temp_path("g.png");
    write_gray_png(path, 4, 2, {0, 255, 200, 10, 0, 0, 128, 255}, false);
    const Mask m = import_mask(path);
    EXPECT_EQ(m.width(), 4);
    EXPECT_EQ(m.height(), 2);
    EXPECT_TRUE(m.foreground(1, 0));
    EXPECT_TRUE(m.foreground(2, 0));
    EXPECT_FALSE(m.foreground(3, 0));
    EXPECT_TRUE(m.foreground(2, 1));

    const auto rgb = temp_path("c.png");
    write_gray_png(rgb, 2, 1, {255, 0, 0, 0, 255, 0}, true);
    EXPECT_THROW(import_mask(rgb), FormatError);
    EXPECT_THROW(import_mask(temp_path("missing.png")), IoError);

    const auto zero = temp_path("zero.png");
    write_gray_png(zero, 3, 3, std::vector<std::uint8_t>(9, 0), false);
    const Mask z = import_mask(zero);
    EXPECT_EQ(z.count(), 0u);
    EXPECT_THROW(extract_contour(z), InvalidArgument);
}

TEST(SerializationTest, CameraPoseContourRoundTrip) {
    Camera cam = Camera::with_resolution(300);
    cam.sdd_mm = 987.5;
    EXPECT_EQ(camera_from_json(camera_to_json(cam)).pitch_mm, cam.pitch_mm);
    const RigidTransform pose(Eigen::AngleAxisd(1.2, Vec3(1, -1, 2).normalized()).toRotationMatrix(), Vec3(1, 2, 3));
    const RigidTransform back = pose_from_json(pose_to_json(pose));
    EXPECT_LT((back.rotation() - pose.rotation()).norm(), 1e-12);
    EXPECT_EQ(back.translation(), pose.translation());
    Contour c;
    c.points = {{1, 2}, {3, 4}};
    EXPECT_EQ(contour_from_json(contour_to_json(c)).points, c.points);
    EXPECT_THROW(camera_from_json(Json{{"sdd_mm", 1000}}), FormatError);
}

TEST(CocoTest, BlockBboxAndLayout) {
    const auto doc = export_coco({{"a.pgm", block_mask(5, 5, 1, 1, 3, 3), "femur"}});
    ASSERT_EQ(doc["annotations"].size(), 1u);
    EXPECT_EQ(doc["annotations"][0]["bbox"], (nlohmann::json{1, 1, 3, 3}));
    EXPECT_EQ(doc["annotations"][0]["category_id"], 1);
    EXPECT_EQ(doc["categories"].size(), 2u);
    EXPECT_THROW(export_coco({}), InvalidArgument);
}

TEST(CocoTest, SequentialIds) {
    const auto doc = export_coco({{"a.pgm", block_mask(8, 8, 1, 1, 3, 3), "femur"},
                                  {"b.pgm", block_mask(8, 8, 2, 2, 4, 4), "tibia"}});
    ASSERT_EQ(doc["images"].size(), 2u);
    EXPECT_EQ(doc["images"][0]["id"], 1);
    EXPECT_EQ(doc["images"][1]["id"], 2);
    EXPECT_EQ(doc["annotations"][1]["image_id"], 2);
    EXPECT_EQ(doc["annotations"][1]["category_id"], 2);
}

TEST(CocoTest, PolygonRoundTripIou) {
    const Camera cam = Camera::with_resolution(256);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ang(-0.5, 0.5);
    for (int trial = 0; trial < 10; ++trial) {
        const RigidTransform pose(
            (Eigen::AngleAxisd(ang(rng), Vec3::UnitX()) * Eigen::AngleAxisd(ang(rng), Vec3::UnitY())).toRotationMatrix(),
            Vec3(ang(rng) * 10, ang(rng) * 10, 500));
        const Mask m = render_silhouette(cam, pose, make_box(Vec3(40, 30, 20)));
        const auto doc = export_coco({{"x.pgm", m, "femur"}});
        const std::vector<double> poly = doc["annotations"][0]["segmentation"][0];
        EXPECT_GE(mask_iou(rasterize_polygon(poly, m.width(), m.height()), m), 0.98);
    }
}
