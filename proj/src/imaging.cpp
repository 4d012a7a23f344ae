#include "implant/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "implant/error.hpp"

namespace implant {

// ---------------------------------------------------------------------------
// Camera and views

Camera Camera::with_resolution(int resolution_px) {
    if (resolution_px < 8) throw InvalidArgument("camera resolution must be at least 8 px");
    Camera c;
    c.width_px = resolution_px;
    c.height_px = resolution_px;
    c.pitch_mm = 256.0 / resolution_px;
    c.principal_px = Vec2((resolution_px - 1) / 2.0, (resolution_px - 1) / 2.0);
    return c;
}

void Camera::validate() const {
    if (!(sdd_mm > 0.0) || !std::isfinite(sdd_mm)) throw InvalidArgument("camera sdd_mm must be positive");
    if (!(pitch_mm > 0.0) || !std::isfinite(pitch_mm)) throw InvalidArgument("camera pitch_mm must be positive");
    if (width_px <= 0 || height_px <= 0) throw InvalidArgument("camera image size must be positive");
    if (!(principal_px.x() >= 0.0 && principal_px.x() <= width_px - 1 && principal_px.y() >= 0.0 &&
          principal_px.y() <= height_px - 1)) {
        throw InvalidArgument("camera principal point lies outside the image");
    }
}

std::array<ViewDefinition, 4> standard_views() {
    return {ViewDefinition{"AP", 0.0}, ViewDefinition{"ML", 90.0}, ViewDefinition{"ROT+45", 45.0},
            ViewDefinition{"ROT-45", -45.0}};
}

std::string view_dir_name(const ViewDefinition& view) {
    std::string out = view.name;
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

RigidTransform view_transform(const ViewDefinition& view, double isocenter_mm) {
    const Mat3 r = Eigen::AngleAxisd(view.angle_deg * M_PI / 180.0, Vec3::UnitY()).toRotationMatrix();
    return RigidTransform::rotation_about(r, Vec3(0.0, 0.0, isocenter_mm));
}

// ---------------------------------------------------------------------------
// Mask

Mask::Mask(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("mask dimensions must be positive");
    pixels_.assign(static_cast<std::size_t>(width) * height, 0);
}

Mask::Mask(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width <= 0 || height <= 0) throw InvalidArgument("mask dimensions must be positive");
    if (pixels_.size() != static_cast<std::size_t>(width) * height) {
        throw InvalidArgument("mask pixel buffer does not match its dimensions");
    }
    for (auto v : pixels_) {
        if (v != 0 && v != 255) throw InvalidArgument("mask values must be 0 or 255");
    }
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(pixels_.begin(), pixels_.end(), std::uint8_t{255}));
}

// ---------------------------------------------------------------------------
// Projection and rasterization

namespace {

constexpr double kMinDepth = 1e-6;

struct Roi {
    int x0 = 0;
    int y0 = 0;
    int x1 = -1;  // inclusive
    int y1 = -1;
    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
};

bool top_left(const Vec2& e) { return e.y() > 0.0 || (e.y() == 0.0 && e.x() < 0.0); }

struct Projected {
    std::vector<Vec2> uv;
    Roi roi;
};

Projected project_mesh(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh) {
    camera.validate();
    Projected out;
    out.uv.resize(mesh.vertex_count());
    const double f = camera.sdd_mm / camera.pitch_mm;
    double umin = std::numeric_limits<double>::infinity();
    double vmin = umin;
    double umax = -umin;
    double vmax = -umin;
    for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
        const Vec3 p = pose.apply(mesh.vertex(i));
        if (!(p.z() > kMinDepth)) throw StageError("mesh lies at or behind the x-ray source");
        const Vec2 uv(camera.principal_px.x() + f * p.x() / p.z(), camera.principal_px.y() + f * p.y() / p.z());
        out.uv[i] = uv;
        umin = std::min(umin, uv.x());
        umax = std::max(umax, uv.x());
        vmin = std::min(vmin, uv.y());
        vmax = std::max(vmax, uv.y());
    }
    out.roi.x0 = std::max(0, static_cast<int>(std::ceil(umin)));
    out.roi.y0 = std::max(0, static_cast<int>(std::ceil(vmin)));
    out.roi.x1 = std::min(camera.width_px - 1, static_cast<int>(std::floor(umax)));
    out.roi.y1 = std::min(camera.height_px - 1, static_cast<int>(std::floor(vmax)));
    if (umax < 0.0 || vmax < 0.0 || umin > camera.width_px - 1 || vmin > camera.height_px - 1 ||
        out.roi.x1 < out.roi.x0 || out.roi.y1 < out.roi.y0) {
        throw StageError("projected mesh footprint lies outside the image");
    }
    return out;
}

// Rasterizes into `target`, whose pixel (0, 0) is image pixel (roi.x0, roi.y0).
void rasterize(const TriMesh& mesh, const Projected& proj, Mask& target) {
    const Roi& roi = proj.roi;
    for (const auto& tri : mesh.triangles()) {
        Vec2 a = proj.uv[tri[0]];
        Vec2 b = proj.uv[tri[1]];
        Vec2 c = proj.uv[tri[2]];
        const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
        if (area == 0.0) continue;
        if (area < 0.0) std::swap(b, c);

        const int xmin = std::max(roi.x0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
        const int xmax = std::min(roi.x1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
        const int ymin = std::max(roi.y0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
        const int ymax = std::min(roi.y1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
        if (xmin > xmax || ymin > ymax) continue;

        const Vec2 p0[3] = {a, b, c};
        const Vec2 e[3] = {b - a, c - b, a - c};
        const bool tl[3] = {top_left(e[0]), top_left(e[1]), top_left(e[2])};

        for (int y = ymin; y <= ymax; ++y) {
            // Each edge constrains x to a half-line on this row; intersect them.
            double lo = xmin;
            double hi = xmax;
            bool empty = false;
            for (int k = 0; k < 3 && !empty; ++k) {
                const double base = e[k].x() * (y - p0[k].y());
                const double ey = e[k].y();
                if (ey == 0.0) {
                    if (base < 0.0 || (base == 0.0 && !tl[k])) empty = true;
                    continue;
                }
                const double xb = p0[k].x() + base / ey;
                if (ey > 0.0) {
                    hi = std::min(hi, xb);
                } else {
                    lo = std::max(lo, xb);
                }
            }
            if (empty) continue;
            int xs = std::max(xmin, static_cast<int>(std::ceil(lo)) - 1);
            int xe = std::min(xmax, static_cast<int>(std::floor(hi)) + 1);
            auto inside = [&](int x) {
                for (int k = 0; k < 3; ++k) {
                    const double w = e[k].x() * (y - p0[k].y()) - e[k].y() * (x - p0[k].x());
                    if (w < 0.0 || (w == 0.0 && !tl[k])) return false;
                }
                return true;
            };
            // Exact per-pixel test at the span ends settles rounding in the bounds.
            while (xs <= xe && !inside(xs)) ++xs;
            while (xe >= xs && !inside(xe)) --xe;
            if (xs > xe) continue;
            std::uint8_t* row = target.row(y - roi.y0);
            std::fill(row + (xs - roi.x0), row + (xe - roi.x0) + 1, std::uint8_t{255});
        }
    }
}

// ---------------------------------------------------------------------------
// Connected components over row runs (8-connectivity)

struct Run {
    int y;
    int x0;
    int x1;  // inclusive
};

struct Component {
    std::size_t size = 0;
    Pixel start;  // topmost-then-leftmost pixel
    bool fragmented = false;
};

int find_root(std::vector<int>& parent, int i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

Component largest_component(const Mask& mask) {
    std::vector<Run> runs;
    std::vector<int> row_begin(mask.height() + 1, 0);
    const auto* px = mask.pixels().data();
    for (int y = 0; y < mask.height(); ++y) {
        row_begin[y] = static_cast<int>(runs.size());
        const auto* row = px + static_cast<std::size_t>(y) * mask.width();
        int x = 0;
        while (x < mask.width()) {
            while (x < mask.width() && row[x] == 0) ++x;
            if (x >= mask.width()) break;
            const int start = x;
            while (x < mask.width() && row[x] != 0) ++x;
            runs.push_back({y, start, x - 1});
        }
    }
    row_begin[mask.height()] = static_cast<int>(runs.size());
    if (runs.empty()) throw InvalidArgument("mask has no foreground pixels");

    std::vector<int> parent(runs.size());
    std::iota(parent.begin(), parent.end(), 0);
    for (int y = 1; y < mask.height(); ++y) {
        int i = row_begin[y - 1];
        int j = row_begin[y];
        const int iend = row_begin[y];
        const int jend = row_begin[y + 1];
        while (i < iend && j < jend) {
            if (runs[i].x0 <= runs[j].x1 + 1 && runs[j].x0 <= runs[i].x1 + 1) {
                const int ri = find_root(parent, i);
                const int rj = find_root(parent, j);
                // Keep the earlier run as root so roots are first-in-raster-order runs.
                if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
            }
            if (runs[i].x1 < runs[j].x1) {
                ++i;
            } else {
                ++j;
            }
        }
    }
    std::vector<std::size_t> size(runs.size(), 0);
    std::size_t roots = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const int root = find_root(parent, static_cast<int>(r));
        if (root == static_cast<int>(r)) ++roots;
        size[root] += static_cast<std::size_t>(runs[r].x1 - runs[r].x0 + 1);
    }
    int best = -1;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        if (parent[r] == static_cast<int>(r) && (best < 0 || size[r] > size[best])) best = static_cast<int>(r);
    }
    return {size[best], {runs[best].x0, runs[best].y}, roots > 1};
}

// Offsets in counterclockwise screen order (y grows downwards).
constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDy[8] = {0, -1, -1, -1, 0, 1, 1, 1};

int direction_of(int dx, int dy) {
    for (int d = 0; d < 8; ++d) {
        if (kDx[d] == dx && kDy[d] == dy) return d;
    }
    return -1;
}

std::vector<Pixel> moore_trace(const Mask& mask, Pixel start) {
    std::vector<Pixel> points{start};
    Pixel p = start;
    int back = 4;  // west of the topmost-leftmost pixel is background
    int first_move = -1;
    const std::size_t limit = 4 * static_cast<std::size_t>(mask.width()) * mask.height() + 8;
    for (std::size_t step = 0; step < limit; ++step) {
        int move = -1;
        for (int k = 1; k <= 8; ++k) {
            const int d = (back + k) % 8;
            if (mask.foreground(p.x + kDx[d], p.y + kDy[d])) {
                move = d;
                break;
            }
        }
        if (move < 0) return points;  // isolated pixel
        if (p == start) {
            if (first_move < 0) {
                first_move = move;
            } else if (move == first_move) {
                points.pop_back();  // the closing repeat of the start pixel
                return points;
            }
        }
        const int bd = (move + 7) % 8;
        const Pixel next{p.x + kDx[move], p.y + kDy[move]};
        back = direction_of(p.x + kDx[bd] - next.x, p.y + kDy[bd] - next.y);
        p = next;
        points.push_back(p);
    }
    throw StageError("contour tracing did not terminate");
}

}  // namespace

Vec2 project_point(const Camera& camera, const RigidTransform& pose, const Vec3& p) {
    camera.validate();
    const Vec3 c = pose.apply(p);
    if (!(c.z() > kMinDepth)) throw InvalidArgument("point lies at or behind the x-ray source");
    const double f = camera.sdd_mm / camera.pitch_mm;
    return {camera.principal_px.x() + f * c.x() / c.z(), camera.principal_px.y() + f * c.y() / c.z()};
}

Mask render_silhouette(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh) {
    const Projected proj = project_mesh(camera, pose, mesh);
    Mask local(proj.roi.width(), proj.roi.height());
    rasterize(mesh, proj, local);
    Mask full(camera.width_px, camera.height_px);
    for (int y = 0; y < local.height(); ++y) {
        for (int x = 0; x < local.width(); ++x) {
            if (local.foreground(x, y)) full.set(x + proj.roi.x0, y + proj.roi.y0, true);
        }
    }
    return full;
}

Contour extract_contour(const Mask& mask) {
    if (mask.width() <= 0 || mask.height() <= 0) throw InvalidArgument("mask is empty");
    const Component comp = largest_component(mask);
    Contour out;
    out.points = moore_trace(mask, comp.start);
    out.fragmented = comp.fragmented;
    return out;
}

Contour silhouette_contour(const Camera& camera, const RigidTransform& pose, const TriMesh& mesh) {
    const Projected proj = project_mesh(camera, pose, mesh);
    Mask local(proj.roi.width(), proj.roi.height());
    rasterize(mesh, proj, local);
    Contour out;
    try {
        out = extract_contour(local);
    } catch (const InvalidArgument&) {
        throw StageError("rendered silhouette covers no pixel centers");
    }
    for (auto& p : out.points) {
        p.x += proj.roi.x0;
        p.y += proj.roi.y0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform (Felzenszwalb & Huttenlocher)

namespace {

constexpr double kFar = 1e20;

void squared_dt_1d(const double* f, int n, double* d, int* arg, std::vector<int>& v, std::vector<double>& z) {
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = double(q - v[k]);
        d[q] = dq * dq + f[v[k]];
        arg[q] = v[k];
    }
}

}  // namespace

DistanceField distance_field(const Contour& contour, int width, int height) {
    if (contour.points.empty()) throw InvalidArgument("distance field of an empty contour");
    if (width <= 0 || height <= 0) throw InvalidArgument("distance field dimensions must be positive");
    const std::size_t n = static_cast<std::size_t>(width) * height;
    std::vector<double> grid(n, kFar);
    for (const auto& p : contour.points) {
        if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
            throw InvalidArgument("contour point outside the distance field bounds");
        }
        grid[static_cast<std::size_t>(p.y) * width + p.x] = 0.0;
    }

    const int longest = std::max(width, height);
    std::vector<int> v(longest);
    std::vector<double> z(longest + 1);
    std::vector<double> fbuf(longest), dbuf(longest);
    std::vector<int> abuf(longest);

    // Rows: nearest feature column within each row.
    std::vector<double> row_d(n);
    std::vector<int> row_x(n);
    for (int y = 0; y < height; ++y) {
        const std::size_t off = static_cast<std::size_t>(y) * width;
        squared_dt_1d(grid.data() + off, width, row_d.data() + off, row_x.data() + off, v, z);
    }
    // Columns.
    DistanceField out;
    out.width = width;
    out.height = height;
    out.distance.resize(n);
    out.nearest.resize(n);
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y) fbuf[y] = row_d[static_cast<std::size_t>(y) * width + x];
        squared_dt_1d(fbuf.data(), height, dbuf.data(), abuf.data(), v, z);
        for (int y = 0; y < height; ++y) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            const int fy = abuf[y];
            out.distance[i] = std::sqrt(dbuf[y]);
            out.nearest[i] = fy * width + row_x[static_cast<std::size_t>(fy) * width + x];
        }
    }
    return out;
}

}  // namespace implant
