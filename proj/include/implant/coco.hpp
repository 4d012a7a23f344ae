#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "implant/imaging.hpp"

namespace implant {

struct CocoItem {
    std::string image_path;
    Mask mask;
    std::string label;  // "femur" or "tibia"
};

/// COCO instance-segmentation document: images, categories {femur, tibia}
/// and one polygon annotation per item. Polygon vertices are the traced
/// contour's pixel centers in corner-origin coordinates (x + 0.5, y + 0.5);
/// bboxes are [x, y, w, h] pixel extents.
nlohmann::json export_coco(const std::vector<CocoItem>& items);

/// Rasterizes a COCO polygon ([x0, y0, x1, y1, ...], corner-origin
/// coordinates): a pixel is set when its center lies inside or on the
/// polygon boundary.
Mask rasterize_polygon(const std::vector<double>& xy, int width, int height);

double mask_iou(const Mask& a, const Mask& b);

}  // namespace implant
