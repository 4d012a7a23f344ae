#pragma once

#include <filesystem>
#include <vector>

#include "implant/geometry.hpp"

namespace implant {

enum class StlFormat { Binary, Text };

/// Loads a text or binary STL file.
///
/// Vertices closer than 1e-6 mm are welded (first occurrence wins), facets
/// that collapse under welding are dropped, and triangle winding is made
/// consistent per connected component by flood fill, keeping the winding
/// shared by the majority of the component's input facets. Throws IoError
/// when the file cannot be read and FormatError when it is malformed, empty,
/// or cannot be consistently oriented.
TriMesh load_mesh(const std::filesystem::path& path);

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, StlFormat format = StlFormat::Binary);

/// Welds raw facet corners (3 per facet) into an indexed, consistently
/// oriented mesh. Exposed for callers that build triangle soups in memory.
TriMesh mesh_from_triangle_soup(const std::vector<Vec3>& corners, double weld_tolerance = 1e-6);

}  // namespace implant
