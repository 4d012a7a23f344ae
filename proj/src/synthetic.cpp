#include "implant/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "implant/error.hpp"

namespace implant {

namespace {

double signed_volume(const std::vector<Vec3>& v, const std::vector<Triangle>& tris) {
    double vol = 0.0;
    for (const auto& t : tris) vol += v[t[0]].dot(v[t[1]].cross(v[t[2]]));
    return vol / 6.0;
}

void orient_outward(const std::vector<Vec3>& v, std::vector<Triangle>& tris) {
    if (signed_volume(v, tris) < 0.0) {
        for (auto& t : tris) std::swap(t[1], t[2]);
    }
}

double polygon_area(const std::vector<Vec2>& p) {
    double a = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Vec2& u = p[i];
        const Vec2& w = p[(i + 1) % p.size()];
        a += u.x() * w.y() - w.x() * u.y();
    }
    return 0.5 * a;
}

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Ear clipping of a simple counterclockwise polygon.
std::vector<Triangle> triangulate_polygon(const std::vector<Vec2>& poly) {
    std::vector<int> idx(poly.size());
    for (std::size_t i = 0; i < poly.size(); ++i) idx[i] = static_cast<int>(i);
    std::vector<Triangle> out;
    while (idx.size() > 3) {
        bool clipped = false;
        const std::size_t n = idx.size();
        for (std::size_t k = 0; k < n; ++k) {
            const int ia = idx[(k + n - 1) % n];
            const int ib = idx[k];
            const int ic = idx[(k + 1) % n];
            const Vec2 &a = poly[ia], &b = poly[ib], &c = poly[ic];
            if (cross2(a, b, c) <= 1e-12) continue;  // reflex or collinear
            bool contains = false;
            for (int j : idx) {
                if (j == ia || j == ib || j == ic) continue;
                const Vec2& p = poly[j];
                if (cross2(a, b, p) >= 0.0 && cross2(b, c, p) >= 0.0 && cross2(c, a, p) >= 0.0) {
                    contains = true;
                    break;
                }
            }
            if (contains) continue;
            out.push_back({ia, ib, ic});
            idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(k));
            clipped = true;
            break;
        }
        if (!clipped) throw InvalidArgument("profile polygon could not be triangulated (not simple?)");
    }
    out.push_back({idx[0], idx[1], idx[2]});
    return out;
}

void add_segment(std::vector<Vec2>& out, const Vec2& from, const Vec2& to, double max_len) {
    const int n = std::max(1, static_cast<int>(std::ceil((to - from).norm() / max_len)));
    for (int i = 0; i < n; ++i) out.push_back(from + (to - from) * (double(i) / n));
}

}  // namespace

TriMesh make_box(const Vec3& size, const Vec3& center) {
    std::vector<Vec3> v(8);
    for (int i = 0; i < 8; ++i) {
        v[i] = center + Vec3(((i & 1) ? 0.5 : -0.5) * size.x(), ((i & 2) ? 0.5 : -0.5) * size.y(),
                             ((i & 4) ? 0.5 : -0.5) * size.z());
    }
    std::vector<Triangle> t = {{0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}, {0, 1, 5}, {0, 5, 4},
                               {2, 6, 7}, {2, 7, 3}, {0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}};
    return TriMesh(std::move(v), std::move(t));
}

TriMesh make_plate(double side, const Vec3& center) {
    const double h = side / 2.0;
    std::vector<Vec3> v = {center + Vec3(-h, -h, 0), center + Vec3(h, -h, 0), center + Vec3(h, h, 0),
                           center + Vec3(-h, h, 0)};
    return TriMesh(std::move(v), {{0, 1, 2}, {0, 2, 3}});
}

TriMesh make_icosphere(double radius, int subdivisions, const Vec3& center) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& p : v) p.normalize();
    std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                               {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                               {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                               {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::make_pair(std::min(a, b), std::max(a, b));
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            v.push_back((v[a] + v[b]).normalized());
            const int idx = static_cast<int>(v.size()) - 1;
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<Triangle> next;
        next.reserve(f.size() * 4);
        for (const auto& tri : f) {
            const int ab = mid(tri[0], tri[1]);
            const int bc = mid(tri[1], tri[2]);
            const int ca = mid(tri[2], tri[0]);
            next.push_back({tri[0], ab, ca});
            next.push_back({tri[1], bc, ab});
            next.push_back({tri[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        f = std::move(next);
    }
    orient_outward(v, f);
    for (auto& p : v) p = center + radius * p;
    return TriMesh(std::move(v), std::move(f));
}

TriMesh extrude_profile(const std::vector<Vec2>& profile_zy, double x0, double x1, int segments) {
    if (profile_zy.size() < 3 || segments < 1 || !(x1 > x0)) {
        throw InvalidArgument("extrusion needs >= 3 profile points, >= 1 segment and x1 > x0");
    }
    std::vector<Vec2> poly = profile_zy;
    if (polygon_area(poly) < 0.0) std::reverse(poly.begin(), poly.end());
    const int n = static_cast<int>(poly.size());

    std::vector<Vec3> v;
    v.reserve(static_cast<std::size_t>(n) * (segments + 1));
    for (int j = 0; j <= segments; ++j) {
        const double x = x0 + (x1 - x0) * double(j) / segments;
        for (const auto& p : poly) v.emplace_back(x, p.y(), p.x());
    }
    std::vector<Triangle> t;
    for (int j = 0; j < segments; ++j) {
        for (int i = 0; i < n; ++i) {
            const int a = j * n + i;
            const int b = j * n + (i + 1) % n;
            const int c = (j + 1) * n + (i + 1) % n;
            const int d = (j + 1) * n + i;
            t.push_back({a, c, b});
            t.push_back({a, d, c});
        }
    }
    // A counterclockwise (z, y) polygon faces -x.
    for (const auto& tri : triangulate_polygon(poly)) {
        t.push_back({tri[0], tri[1], tri[2]});
        t.push_back({segments * n + tri[0], segments * n + tri[2], segments * n + tri[1]});
    }
    return TriMesh(std::move(v), std::move(t));
}

TriMesh make_femoral_template() {
    constexpr double kStep = 3.0;
    std::vector<Vec2> p;  // (z anterior, y proximal)
    // Anterior flange, outer face.
    add_segment(p, {30.0, 35.0}, {30.0, 0.0}, kStep);
    // Distal and posterior condylar J-curve.
    constexpr int kArc = 40;
    for (int i = 0; i < kArc; ++i) {
        const double a = M_PI * double(i) / kArc;
        p.emplace_back(30.0 * std::cos(a), -25.0 * std::sin(a));
    }
    add_segment(p, {-30.0, 0.0}, {-30.0, 20.0}, kStep);
    add_segment(p, {-30.0, 20.0}, {-22.0, 20.0}, kStep);
    // Internal box cut: posterior, posterior chamfer, distal, anterior chamfer, anterior.
    add_segment(p, {-22.0, 20.0}, {-22.0, 2.0}, kStep);
    add_segment(p, {-22.0, 2.0}, {-12.0, -15.0}, kStep);
    add_segment(p, {-12.0, -15.0}, {12.0, -15.0}, kStep);
    add_segment(p, {12.0, -15.0}, {22.0, 0.0}, kStep);
    add_segment(p, {22.0, 0.0}, {22.0, 35.0}, kStep);
    add_segment(p, {22.0, 35.0}, {30.0, 35.0}, kStep);
    return extrude_profile(p, -30.0, 30.0, 20);
}

TriMesh make_condyle_template() {
    const TriMesh sphere = make_icosphere(1.0, 4);
    const Vec3 radii(35.0, 30.0, 25.0);
    constexpr double kExponent = 2.5;
    const Vec3 lobe = Vec3(0.6, -0.5, 0.6).normalized();
    std::vector<Vec3> v;
    v.reserve(sphere.vertex_count());
    for (const auto& d : sphere.vertices()) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += std::pow(std::abs(d[k] / radii[k]), kExponent);
        double r = std::pow(s, -1.0 / kExponent);
        const double bump = std::max(0.0, d.dot(lobe));
        r *= 1.0 + 0.10 * bump * bump;
        v.push_back(r * d);
    }
    return sphere.with_vertices(std::move(v));
}

TriMesh builtin_template(std::string_view name) {
    if (name == "femoral") return make_femoral_template();
    if (name == "condyle") return make_condyle_template();
    throw InvalidArgument("unknown builtin template '" + std::string(name) + "' (expected femoral or condyle)");
}

Mask apply_boundary_noise(const Mask& mask, const NoiseConfig& noise, std::uint64_t stream) {
    if (!noise.enabled) return mask;
    Rng rng(noise.seed * 0x9E3779B97F4A7C15ull + stream);
    const double p = noise.probability / 2.0;
    Mask out = mask;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            const bool fg = mask.foreground(x, y);
            const bool on_band = fg ? (!mask.foreground(x - 1, y) || !mask.foreground(x + 1, y) ||
                                       !mask.foreground(x, y - 1) || !mask.foreground(x, y + 1))
                                    : (mask.foreground(x - 1, y) || mask.foreground(x + 1, y) ||
                                       mask.foreground(x, y - 1) || mask.foreground(x, y + 1));
            if (!on_band) continue;
            if (rng.uniform() < p) out.set(x, y, !fg);
        }
    }
    return out;
}

SyntheticCase generate_synthetic_case(const TriMesh& template_mesh, double scale,
                                      const std::array<Camera, 4>& cameras, const RigidTransform& object_pose,
                                      const NoiseConfig& noise, double isocenter_mm) {
    SyntheticCase out;
    out.template_mesh = template_mesh;
    out.truth_mesh = scale_mesh(template_mesh, scale, template_mesh.centroid());
    out.scale = scale;
    out.object_pose = object_pose;
    out.isocenter_mm = isocenter_mm;
    const auto views = standard_views();
    for (std::size_t v = 0; v < 4; ++v) {
        SyntheticView& sv = out.views[v];
        sv.view = views[v];
        sv.camera = cameras[v];
        sv.pose = view_transform(views[v], isocenter_mm) * object_pose;
        sv.mask = render_silhouette(sv.camera, sv.pose, out.truth_mesh);
        sv.mask = apply_boundary_noise(sv.mask, noise, v);
        sv.contour = extract_contour(sv.mask);
    }
    return out;
}

}  // namespace implant
