#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "implant/geometry.hpp"

namespace implant {

/// Femur and tibia component poses for one fluoroscopy frame.
struct FramePoses {
    int frame = 0;
    std::optional<double> flexion_deg;
    RigidTransform femur;
    RigidTransform tibia;
};

/// Tibial frame: x anterior, y lateral, z proximal.
struct KinematicsTrace {
    std::vector<int> frames;
    std::vector<std::optional<double>> flexion_deg;
    std::vector<double> ap_mm;         // anterior component of the femoral origin
    std::vector<double> axial_deg;     // rotation about the tibial long axis
    std::vector<bool> gimbal;          // value carried from a neighboring frame

    std::size_t size() const { return ap_mm.size(); }
};

struct KinematicsError {
    double translation_mean_mm = 0.0;
    double translation_std_mm = 0.0;   // population
    double rotation_mean_deg = 0.0;
    double rotation_std_deg = 0.0;
    std::vector<double> translation_diff_mm;  // per frame, absolute
    std::vector<double> rotation_diff_deg;
};

/// Femur expressed in the tibia frame: tibia^-1 * femur.
RigidTransform relative_pose(const RigidTransform& femur, const RigidTransform& tibia);

/// Flexion (about lateral y), then adduction (about anterior x), then axial
/// rotation (about proximal z): R = Ry(flexion) * Rx(adduction) * Rz(axial).
struct CardanAngles {
    double flexion_deg = 0.0;
    double adduction_deg = 0.0;
    double axial_deg = 0.0;
    bool gimbal = false;               // |adduction| within 1e-6 deg of 90
};

Mat3 compose_cardan(double flexion_deg, double adduction_deg, double axial_deg);
CardanAngles decompose_cardan(const Mat3& r);

/// Per-frame AP translation and axial rotation. Gimbal-degenerate frames
/// are flagged and take the nearest valid frame's values (previous first).
KinematicsTrace reduce_trace(const std::vector<FramePoses>& frames);

KinematicsError compare_traces(const KinematicsTrace& recon, const KinematicsTrace& truth);

/// CSV with header frame,flexion_deg,ap_mm,axial_deg (empty flexion allowed).
void write_trace_csv(const KinematicsTrace& trace, const std::filesystem::path& path);
KinematicsTrace read_trace_csv(const std::filesystem::path& path);

nlohmann::json kinematics_error_to_json(const KinematicsError& error);
void write_difference_csv(const KinematicsTrace& recon, const KinematicsError& error, const std::filesystem::path& path);

/// JSON frame list: [{"frame", "flexion_deg"?, "femur": pose, "tibia": pose}, ...].
std::vector<FramePoses> frames_from_json(const nlohmann::json& doc);

}  // namespace implant
