#pragma once

#include <filesystem>

#include <json.hpp>

#include "implant/geometry.hpp"
#include "implant/imaging.hpp"

namespace implant {

using Json = nlohmann::json;

/// Parses a JSON file; IoError when unreadable, FormatError when malformed.
Json read_json_file(const std::filesystem::path& path);
/// Writes pretty-printed JSON (2-space indent, sorted keys, trailing newline).
void write_json_file(const Json& doc, const std::filesystem::path& path);

// Camera: {sdd_mm, pitch_mm, width_px, height_px, principal_px: [x, y]}
Json camera_to_json(const Camera& camera);
Camera camera_from_json(const Json& doc);

// Pose: {rotation_wxyz: [w, x, y, z], translation_mm: [x, y, z]}
Json pose_to_json(const RigidTransform& pose);
RigidTransform pose_from_json(const Json& doc);

// Contour: {closed: true, points: [[x, y], ...]} plus an optional fragmented flag.
Json contour_to_json(const Contour& contour);
Contour contour_from_json(const Json& doc);

Camera load_camera(const std::filesystem::path& path);
RigidTransform load_pose(const std::filesystem::path& path);
Contour load_contour(const std::filesystem::path& path);

}  // namespace implant
