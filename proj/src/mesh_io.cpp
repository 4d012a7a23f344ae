#include "implant/mesh_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>

#include "implant/error.hpp"

namespace implant {

namespace {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const {
        std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
        h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
        h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

// Makes winding consistent across shared edges, component by component.
void orient_consistently(std::vector<Triangle>& tris) {
    std::map<std::pair<int, int>, std::vector<std::pair<int, bool>>> edges;
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
        for (int k = 0; k < 3; ++k) {
            const int u = tris[t][k];
            const int v = tris[t][(k + 1) % 3];
            edges[{std::min(u, v), std::max(u, v)}].push_back({t, u < v});
        }
    }
    std::vector<std::vector<std::pair<int, std::pair<int, int>>>> adjacency(tris.size());
    for (const auto& [key, users] : edges) {
        for (std::size_t i = 0; i < users.size(); ++i) {
            for (std::size_t j = 0; j < users.size(); ++j) {
                if (i != j) adjacency[users[i].first].push_back({users[j].first, key});
            }
        }
    }
    auto forward = [&](int t, const std::pair<int, int>& key) {
        for (int k = 0; k < 3; ++k) {
            if (tris[t][k] == key.first && tris[t][(k + 1) % 3] == key.second) return true;
        }
        return false;
    };

    std::vector<int> flip(tris.size(), -1);
    for (int seed = 0; seed < static_cast<int>(tris.size()); ++seed) {
        if (flip[seed] >= 0) continue;
        std::vector<int> component;
        std::queue<int> queue;
        flip[seed] = 0;
        queue.push(seed);
        while (!queue.empty()) {
            const int t = queue.front();
            queue.pop();
            component.push_back(t);
            for (const auto& [other, key] : adjacency[t]) {
                const bool dir_t = forward(t, key) != (flip[t] == 1);
                const int wanted = (forward(other, key) == dir_t) ? 1 : 0;
                if (flip[other] < 0) {
                    flip[other] = wanted;
                    queue.push(other);
                } else if (flip[other] != wanted) {
                    throw FormatError("mesh cannot be consistently oriented (non-orientable or non-manifold edge " +
                                      std::to_string(key.first) + "-" + std::to_string(key.second) + ")");
                }
            }
        }
        std::size_t flipped = 0;
        for (int t : component) flipped += flip[t] == 1 ? 1 : 0;
        const bool invert = 2 * flipped > component.size();
        for (int t : component) {
            const bool do_flip = (flip[t] == 1) != invert;
            if (do_flip) std::swap(tris[t][1], tris[t][2]);
        }
    }
}

std::vector<Vec3> read_binary_stl(const std::string& bytes) {
    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data() + 80, 4);
    std::vector<Vec3> corners;
    corners.reserve(3 * static_cast<std::size_t>(count));
    for (std::uint32_t f = 0; f < count; ++f) {
        const char* rec = bytes.data() + 84 + 50 * static_cast<std::size_t>(f);
        for (int v = 0; v < 3; ++v) {
            float xyz[3];
            std::memcpy(xyz, rec + 12 + 12 * v, 12);
            corners.emplace_back(xyz[0], xyz[1], xyz[2]);
        }
    }
    return corners;
}

std::vector<Vec3> read_text_stl(const std::string& text) {
    std::istringstream in(text);
    std::string token;
    std::vector<Vec3> corners;
    int in_loop = -1;
    while (in >> token) {
        if (token == "outer") {
            in >> token;
            if (token != "loop") throw FormatError("malformed STL: expected 'loop' after 'outer'");
            in_loop = 0;
        } else if (token == "vertex") {
            if (in_loop < 0) throw FormatError("malformed STL: vertex outside of a loop");
            double x, y, z;
            if (!(in >> x >> y >> z)) throw FormatError("malformed STL: bad vertex coordinates");
            corners.emplace_back(x, y, z);
            ++in_loop;
        } else if (token == "endloop") {
            if (in_loop != 3) throw FormatError("malformed STL: facet loop without exactly 3 vertices");
            in_loop = -1;
        }
    }
    if (in_loop >= 0) throw FormatError("malformed STL: unterminated facet loop");
    return corners;
}

}  // namespace

TriMesh mesh_from_triangle_soup(const std::vector<Vec3>& corners, double weld_tolerance) {
    if (corners.empty()) throw FormatError("mesh is empty (zero facets)");
    if (corners.size() % 3 != 0) throw FormatError("triangle soup size is not a multiple of 3");
    for (const auto& c : corners) {
        if (!c.allFinite()) throw FormatError("mesh contains non-finite coordinates");
    }

    std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
    std::vector<Vec3> vertices;
    std::vector<int> remap(corners.size());
    const double tol2 = weld_tolerance * weld_tolerance;
    for (std::size_t i = 0; i < corners.size(); ++i) {
        const Vec3& p = corners[i];
        const CellKey key{static_cast<std::int64_t>(std::floor(p.x() / weld_tolerance)),
                          static_cast<std::int64_t>(std::floor(p.y() / weld_tolerance)),
                          static_cast<std::int64_t>(std::floor(p.z() / weld_tolerance))};
        int found = -1;
        for (int dx = -1; dx <= 1 && found < 0; ++dx) {
            for (int dy = -1; dy <= 1 && found < 0; ++dy) {
                for (int dz = -1; dz <= 1 && found < 0; ++dz) {
                    auto it = grid.find({key.x + dx, key.y + dy, key.z + dz});
                    if (it == grid.end()) continue;
                    for (int idx : it->second) {
                        if ((vertices[idx] - p).squaredNorm() <= tol2) {
                            found = idx;
                            break;
                        }
                    }
                }
            }
        }
        if (found < 0) {
            found = static_cast<int>(vertices.size());
            vertices.push_back(p);
            grid[key].push_back(found);
        }
        remap[i] = found;
    }

    std::vector<Triangle> tris;
    tris.reserve(corners.size() / 3);
    for (std::size_t f = 0; f < corners.size() / 3; ++f) {
        const Triangle t{remap[3 * f], remap[3 * f + 1], remap[3 * f + 2]};
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
        tris.push_back(t);
    }
    if (tris.empty()) throw FormatError("mesh is empty after welding");
    orient_consistently(tris);
    try {
        return TriMesh(std::move(vertices), std::move(tris));
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("invalid mesh: ") + e.what());
    }
}

TriMesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mesh file " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("failed reading mesh file " + path.string());

    std::vector<Vec3> corners;
    bool binary = false;
    if (bytes.size() >= 84) {
        std::uint32_t count = 0;
        std::memcpy(&count, bytes.data() + 80, 4);
        binary = bytes.size() == 84 + 50 * static_cast<std::size_t>(count);
    }
    if (binary) {
        corners = read_binary_stl(bytes);
    } else {
        const auto first = bytes.find_first_not_of(" \t\r\n");
        if (first == std::string::npos || bytes.compare(first, 5, "solid") != 0) {
            throw FormatError("malformed STL (neither binary nor text): " + path.string());
        }
        corners = read_text_stl(bytes);
    }
    if (corners.empty()) throw FormatError("mesh is empty (zero facets): " + path.string());
    return mesh_from_triangle_soup(corners);
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, StlFormat format) {
    if (mesh.empty()) throw InvalidArgument("cannot save an empty mesh");
    for (const auto& v : mesh.vertices()) {
        if (!v.allFinite()) throw InvalidArgument("cannot save a mesh with non-finite vertices");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");

    if (format == StlFormat::Binary) {
        char header[80] = {};
        const char tag[] = "implant3d binary STL";
        std::memcpy(header, tag, sizeof(tag) - 1);
        out.write(header, 80);
        const auto count = static_cast<std::uint32_t>(mesh.triangle_count());
        out.write(reinterpret_cast<const char*>(&count), 4);
        for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
            const Vec3 n = mesh.face_normal(t);
            float rec[12];
            for (int k = 0; k < 3; ++k) rec[k] = static_cast<float>(n[k]);
            for (int v = 0; v < 3; ++v) {
                const Vec3& p = mesh.vertex(mesh.triangle(t)[v]);
                for (int k = 0; k < 3; ++k) rec[3 + 3 * v + k] = static_cast<float>(p[k]);
            }
            out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
            const std::uint16_t attr = 0;
            out.write(reinterpret_cast<const char*>(&attr), 2);
        }
    } else {
        out.precision(17);
        out << "solid implant3d\n";
        for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
            const Vec3 n = mesh.face_normal(t);
            out << "  facet normal " << n.x() << ' ' << n.y() << ' ' << n.z() << "\n    outer loop\n";
            for (int v = 0; v < 3; ++v) {
                const Vec3& p = mesh.vertex(mesh.triangle(t)[v]);
                out << "      vertex " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
            }
            out << "    endloop\n  endfacet\n";
        }
        out << "endsolid implant3d\n";
    }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace implant
