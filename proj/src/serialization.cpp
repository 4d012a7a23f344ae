#include "implant/serialization.hpp"

#include <fstream>
#include <string>

#include "implant/error.hpp"

namespace implant {

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const Json& doc, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

Json camera_to_json(const Camera& camera) {
    return Json{{"sdd_mm", camera.sdd_mm},
                {"pitch_mm", camera.pitch_mm},
                {"width_px", camera.width_px},
                {"height_px", camera.height_px},
                {"principal_px", {camera.principal_px.x(), camera.principal_px.y()}}};
}

Camera camera_from_json(const Json& doc) {
    try {
        Camera c;
        c.sdd_mm = doc.at("sdd_mm").get<double>();
        c.pitch_mm = doc.at("pitch_mm").get<double>();
        c.width_px = doc.at("width_px").get<int>();
        c.height_px = doc.at("height_px").get<int>();
        const auto& pp = doc.at("principal_px");
        if (!pp.is_array() || pp.size() != 2) throw FormatError("principal_px must be [x, y]");
        c.principal_px = Vec2(pp[0].get<double>(), pp[1].get<double>());
        c.validate();
        return c;
    } catch (const Json::exception& e) {
        throw FormatError(std::string("invalid camera JSON: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("invalid camera: ") + e.what());
    }
}

Json pose_to_json(const RigidTransform& pose) {
    const Eigen::Quaterniond q = pose.quaternion();
    const Vec3& t = pose.translation();
    return Json{{"rotation_wxyz", {q.w(), q.x(), q.y(), q.z()}}, {"translation_mm", {t.x(), t.y(), t.z()}}};
}

RigidTransform pose_from_json(const Json& doc) {
    try {
        const auto& q = doc.at("rotation_wxyz");
        const auto& t = doc.at("translation_mm");
        if (!q.is_array() || q.size() != 4) throw FormatError("rotation_wxyz must have 4 entries");
        if (!t.is_array() || t.size() != 3) throw FormatError("translation_mm must have 3 entries");
        const Eigen::Quaterniond quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
        return RigidTransform::from_quaternion(quat, Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>()));
    } catch (const Json::exception& e) {
        throw FormatError(std::string("invalid pose JSON: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("invalid pose: ") + e.what());
    }
}

Json contour_to_json(const Contour& contour) {
    Json pts = Json::array();
    for (const auto& p : contour.points) pts.push_back({p.x, p.y});
    Json doc{{"closed", contour.closed}, {"points", std::move(pts)}};
    if (contour.fragmented) doc["fragmented"] = true;
    return doc;
}

Contour contour_from_json(const Json& doc) {
    try {
        Contour c;
        if (!doc.is_object()) throw FormatError("contour JSON must be an object");
        c.closed = doc.at("closed").get<bool>();
        if (!c.closed) throw FormatError("contour must be closed");
        c.fragmented = doc.value("fragmented", false);
        for (const auto& p : doc.at("points")) {
            if (!p.is_array() || p.size() != 2) throw FormatError("contour points must be [x, y] pairs");
            c.points.push_back({p[0].get<int>(), p[1].get<int>()});
        }
        return c;
    } catch (const Json::exception& e) {
        throw FormatError(std::string("invalid contour JSON: ") + e.what());
    }
}

namespace {

template <typename T, typename Parse>
T load_with_context(const std::filesystem::path& path, Parse parse) {
    const Json doc = read_json_file(path);
    try {
        return parse(doc);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace

Camera load_camera(const std::filesystem::path& path) { return load_with_context<Camera>(path, camera_from_json); }
RigidTransform load_pose(const std::filesystem::path& path) {
    return load_with_context<RigidTransform>(path, pose_from_json);
}
Contour load_contour(const std::filesystem::path& path) { return load_with_context<Contour>(path, contour_from_json); }

}  // namespace implant
