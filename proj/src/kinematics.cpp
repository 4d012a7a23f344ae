#include "implant/kinematics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "implant/error.hpp"
#include "implant/evaluation.hpp"
#include "implant/serialization.hpp"

namespace implant {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kGimbalToleranceDeg = 1e-6;

void mean_std(const std::vector<double>& v, double& mean, double& std_dev) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    std_dev = std::sqrt(var / static_cast<double>(v.size()));
}

double parse_field(const std::string& s, const std::filesystem::path& path, int line_no) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    const auto res = std::from_chars(b, e, v);
    if (s.empty() || res.ec != std::errc() || res.ptr != e || !std::isfinite(v)) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
    }
    return v;
}

}  // namespace

RigidTransform relative_pose(const RigidTransform& femur, const RigidTransform& tibia) {
    return tibia.inverse() * femur;
}

Mat3 compose_cardan(double flexion_deg, double adduction_deg, double axial_deg) {
    return (Eigen::AngleAxisd(flexion_deg * kDeg, Vec3::UnitY()) *
            Eigen::AngleAxisd(adduction_deg * kDeg, Vec3::UnitX()) *
            Eigen::AngleAxisd(axial_deg * kDeg, Vec3::UnitZ()))
        .toRotationMatrix();
}

CardanAngles decompose_cardan(const Mat3& r) {
    CardanAngles out;
    // cos(adduction) from the in-row pair keeps precision near +-90 deg.
    const double c = std::hypot(r(1, 0), r(1, 1));
    out.adduction_deg = std::atan2(-r(1, 2), c) / kDeg;
    out.gimbal = c <= std::sin(kGimbalToleranceDeg * kDeg);
    if (out.gimbal) {
        // Only flexion -+ axial is observable; report it all as flexion.
        const double sign = r(1, 2) < 0.0 ? 1.0 : -1.0;
        out.flexion_deg = std::atan2(sign * r(0, 1), r(0, 0)) / kDeg;
        out.axial_deg = 0.0;
        return out;
    }
    out.flexion_deg = std::atan2(r(0, 2), r(2, 2)) / kDeg;
    out.axial_deg = std::atan2(r(1, 0), r(1, 1)) / kDeg;
    return out;
}

KinematicsTrace reduce_trace(const std::vector<FramePoses>& frames) {
    if (frames.empty()) throw InvalidArgument("kinematics trace needs at least one frame");
    KinematicsTrace t;
    const std::size_t n = frames.size();
    t.frames.resize(n);
    t.flexion_deg.resize(n);
    t.ap_mm.assign(n, 0.0);
    t.axial_deg.assign(n, 0.0);
    t.gimbal.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const RigidTransform rel = relative_pose(frames[i].femur, frames[i].tibia);
        const CardanAngles a = decompose_cardan(rel.rotation());
        t.frames[i] = frames[i].frame;
        t.flexion_deg[i] = frames[i].flexion_deg;
        t.ap_mm[i] = rel.translation().x();
        t.axial_deg[i] = a.axial_deg;
        t.gimbal[i] = a.gimbal;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!t.gimbal[i]) continue;
        std::optional<std::size_t> src;
        for (std::size_t j = i; j-- > 0;) {
            if (!t.gimbal[j]) {
                src = j;
                break;
            }
        }
        if (!src) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!t.gimbal[j]) {
                    src = j;
                    break;
                }
            }
        }
        if (!src) throw StageError("every frame is gimbal-degenerate; axial rotation is undefined");
        t.axial_deg[i] = t.axial_deg[*src];
    }
    return t;
}

KinematicsError compare_traces(const KinematicsTrace& recon, const KinematicsTrace& truth) {
    if (recon.size() != truth.size()) {
        throw InvalidArgument("trace lengths differ: " + std::to_string(recon.size()) + " vs " +
                              std::to_string(truth.size()));
    }
    if (recon.size() == 0) throw InvalidArgument("cannot compare empty traces");
    if (recon.axial_deg.size() != recon.size() || truth.axial_deg.size() != truth.size()) {
        throw InvalidArgument("trace channels have unequal lengths");
    }
    KinematicsError e;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        e.translation_diff_mm.push_back(std::abs(recon.ap_mm[i] - truth.ap_mm[i]));
        e.rotation_diff_deg.push_back(std::abs(recon.axial_deg[i] - truth.axial_deg[i]));
    }
    mean_std(e.translation_diff_mm, e.translation_mean_mm, e.translation_std_mm);
    mean_std(e.rotation_diff_deg, e.rotation_mean_deg, e.rotation_std_deg);
    return e;
}

void write_trace_csv(const KinematicsTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "frame,flexion_deg,ap_mm,axial_deg\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const int frame = i < trace.frames.size() ? trace.frames[i] : static_cast<int>(i);
        out << frame << ',';
        if (i < trace.flexion_deg.size() && trace.flexion_deg[i]) out << format_double(*trace.flexion_deg[i]);
        out << ',' << format_double(trace.ap_mm[i]) << ',' << format_double(trace.axial_deg[i]) << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

KinematicsTrace read_trace_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty trace file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "frame,flexion_deg,ap_mm,axial_deg") {
        throw FormatError(path.string() + ": expected header 'frame,flexion_deg,ap_mm,axial_deg'");
    }
    KinematicsTrace t;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (cells.size() != 4) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
        }
        int frame = 0;
        const auto fr = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), frame);
        if (cells[0].empty() || fr.ec != std::errc() || fr.ptr != cells[0].data() + cells[0].size()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad frame index");
        }
        t.frames.push_back(frame);
        if (cells[1].empty()) {
            t.flexion_deg.push_back(std::nullopt);
        } else {
            t.flexion_deg.push_back(parse_field(cells[1], path, line_no));
        }
        t.ap_mm.push_back(parse_field(cells[2], path, line_no));
        t.axial_deg.push_back(parse_field(cells[3], path, line_no));
        t.gimbal.push_back(false);
    }
    if (t.size() == 0) throw FormatError(path.string() + ": trace has no frames");
    return t;
}

nlohmann::json kinematics_error_to_json(const KinematicsError& error) {
    return {{"frame_count", error.translation_diff_mm.size()},
            {"translation_mm", {{"mean", error.translation_mean_mm}, {"std", error.translation_std_mm}}},
            {"axial_rotation_deg", {{"mean", error.rotation_mean_deg}, {"std", error.rotation_std_deg}}},
            {"std_convention", "population"}};
}

void write_difference_csv(const KinematicsTrace& recon, const KinematicsError& error,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "frame,ap_abs_diff_mm,axial_abs_diff_deg\n";
    for (std::size_t i = 0; i < error.translation_diff_mm.size(); ++i) {
        const int frame = i < recon.frames.size() ? recon.frames[i] : static_cast<int>(i);
        out << frame << ',' << format_double(error.translation_diff_mm[i]) << ','
            << format_double(error.rotation_diff_deg[i]) << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<FramePoses> frames_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw FormatError("frame list must be a JSON array");
    std::vector<FramePoses> out;
    try {
        for (const auto& f : doc) {
            FramePoses p;
            p.frame = f.value("frame", static_cast<int>(out.size()));
            if (f.contains("flexion_deg") && !f["flexion_deg"].is_null()) p.flexion_deg = f["flexion_deg"].get<double>();
            p.femur = pose_from_json(f.at("femur"));
            p.tibia = pose_from_json(f.at("tibia"));
            out.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid frame list: ") + e.what());
    }
    return out;
}

}  // namespace implant
