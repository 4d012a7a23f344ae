#include "implant/coco.hpp"

#include <algorithm>
#include <cmath>

#include "implant/error.hpp"

namespace implant {

namespace {

int category_id(const std::string& label) {
    if (label == "femur") return 1;
    if (label == "tibia") return 2;
    throw InvalidArgument("unknown COCO label '" + label + "' (expected femur or tibia)");
}

}  // namespace

nlohmann::json export_coco(const std::vector<CocoItem>& items) {
    if (items.empty()) throw InvalidArgument("COCO export needs at least one mask");
    nlohmann::json images = nlohmann::json::array();
    nlohmann::json annotations = nlohmann::json::array();
    int id = 1;
    for (const auto& item : items) {
        const int cat = category_id(item.label);
        const Contour contour = extract_contour(item.mask);
        std::vector<double> poly;
        poly.reserve(2 * contour.points.size());
        int xmin = contour.points[0].x, xmax = xmin, ymin = contour.points[0].y, ymax = ymin;
        for (const auto& p : contour.points) {
            poly.push_back(p.x + 0.5);
            poly.push_back(p.y + 0.5);
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
        images.push_back({{"id", id},
                          {"file_name", item.image_path},
                          {"width", item.mask.width()},
                          {"height", item.mask.height()}});
        annotations.push_back({{"id", id},
                               {"image_id", id},
                               {"category_id", cat},
                               {"segmentation", nlohmann::json::array({poly})},
                               {"area", item.mask.count()},
                               {"bbox", {xmin, ymin, xmax - xmin + 1, ymax - ymin + 1}},
                               {"iscrowd", 0}});
        ++id;
    }
    nlohmann::json categories = nlohmann::json::array(
        {{{"id", 1}, {"name", "femur"}, {"supercategory", "implant"}},
         {{"id", 2}, {"name", "tibia"}, {"supercategory", "implant"}}});
    return {{"info", {{"description", "implant silhouette masks"}, {"version", "1.0"}}},
            {"images", std::move(images)},
            {"annotations", std::move(annotations)},
            {"categories", std::move(categories)}};
}

Mask rasterize_polygon(const std::vector<double>& xy, int width, int height) {
    if (xy.size() < 2 || xy.size() % 2 != 0) throw InvalidArgument("polygon needs an even, nonzero coordinate count");
    Mask out(width, height);
    const std::size_t n = xy.size() / 2;
    auto px = [&](std::size_t i) { return xy[2 * (i % n)]; };
    auto py = [&](std::size_t i) { return xy[2 * (i % n) + 1]; };
    auto mark = [&](double cx) {
        // cx is a pixel-center x coordinate (i + 0.5)
        return static_cast<int>(std::lround(cx - 0.5));
    };

    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const double x0 = px(i), y0 = py(i), x1 = px(i + 1), y1 = py(i + 1);
            if ((y0 <= yc && yc < y1) || (y1 <= yc && yc < y0)) {
                xs.push_back(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
            if (y0 == yc && y1 == yc) {
                // Horizontal edge on this row: its pixel centers are on the boundary.
                const int a = static_cast<int>(std::ceil(std::min(x0, x1) - 0.5));
                const int b = static_cast<int>(std::floor(std::max(x0, x1) - 0.5));
                for (int x = std::max(a, 0); x <= std::min(b, width - 1); ++x) out.set(x, y, true);
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int a = static_cast<int>(std::ceil(xs[k] - 0.5));
            const int b = static_cast<int>(std::floor(xs[k + 1] - 0.5));
            for (int x = std::max(a, 0); x <= std::min(b, width - 1); ++x) out.set(x, y, true);
        }
    }
    // Vertices lie on the boundary.
    for (std::size_t i = 0; i < n; ++i) {
        const int x = mark(px(i));
        const int y = mark(py(i));
        if (std::abs((x + 0.5) - px(i)) < 1e-9 && std::abs((y + 0.5) - py(i)) < 1e-9 && out.inside(x, y)) {
            out.set(x, y, true);
        }
    }
    return out;
}

double mask_iou(const Mask& a, const Mask& b) {
    if (a.width() != b.width() || a.height() != b.height()) throw InvalidArgument("IoU of masks with different sizes");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) {
        const bool pa = a.pixels()[i] != 0;
        const bool pb = b.pixels()[i] != 0;
        inter += (pa && pb) ? 1 : 0;
        uni += (pa || pb) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace implant
