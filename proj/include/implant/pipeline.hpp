#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "implant/evaluation.hpp"
#include "implant/kinematics.hpp"
#include "implant/morphing.hpp"
#include "implant/registration.hpp"
#include "implant/synthetic.hpp"

namespace implant {

namespace fs = std::filesystem;

/// Environment variable naming the directory that receives case directories
/// (and cohort/kinematics outputs) when no explicit path is given.
inline constexpr const char* kOutputRootEnv = "IMPLANT3D_OUTPUT_ROOT";

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitStage = 3, kExitIo = 4 };

/// Maps the library's exception types onto exit codes.
int exit_code_for(const std::exception& e);

/// Case directory layout:
///   case.json, template.stl, truth.stl, initial_pose.json
///   views/{ap,ml,rot+45,rot-45}/{camera.json, mask.pgm, contour.json, pose_true.json}
/// Paths inside case.json are relative to the case directory.
struct CaseConfig {
    std::string case_id;
    fs::path template_path;
    std::optional<fs::path> truth_path;
    std::array<fs::path, 4> camera_paths;  // standard view order
    std::optional<fs::path> initial_pose_path;
    double isocenter_mm = 500.0;
    std::uint64_t seed = 0;
    RegistrationConfig registration;
    MorphConfig morph;
    IcpConfig icp;
};

/// Generation settings for `synth`.
struct SynthConfig {
    std::string case_id;
    std::string template_source;           // STL path or "builtin:femoral" / "builtin:condyle"
    double scale = 1.0;
    int resolution_px = 1024;
    std::uint64_t seed = 0;
    double isocenter_mm = 500.0;
    Vec3 rotation_deg{5.0, -4.0, 3.0};     // XYZ about the template centroid
    Vec3 offset_mm{0.0, 0.0, 0.0};         // centroid offset from the isocenter, AP camera frame
    NoiseConfig noise;
    double init_rotation_deg = 5.0;        // uniform perturbation bound for initial_pose.json
    double init_translation_mm = 5.0;
    nlohmann::json registration = nlohmann::json::object();  // copied into case.json
    nlohmann::json morph = nlohmann::json::object();
};

/// Unknown keys, wrong types, and invalid values raise ConfigError naming
/// the offending field.
SynthConfig synth_config_from_json(const nlohmann::json& doc, const fs::path& base_dir);
CaseConfig case_config_from_json(const nlohmann::json& doc, const fs::path& case_dir);
void apply_registration_overrides(RegistrationConfig& cfg, const nlohmann::json& doc);
void apply_morph_overrides(MorphConfig& cfg, const nlohmann::json& doc);

/// Reads case.json (or the default layout when absent) and merges `overrides`
/// as a JSON merge patch.
CaseConfig load_case_config(const fs::path& case_dir, const nlohmann::json& overrides = nlohmann::json::object());

/// Append-only JSON-lines log: {"command", "stage", "status", "duration_s",
/// "warnings", "message"}.
class RunLog {
public:
    RunLog(fs::path path, std::string command);

    void record(const std::string& stage, const std::string& status, double duration_s,
                const std::vector<std::string>& warnings = {}, const std::string& message = {});
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
    std::string command_;
    std::mutex mutex_;
};

/// Times one stage and logs its outcome; rethrows failures prefixed with
/// the stage name.
template <typename F>
auto run_stage(RunLog& log, const std::string& stage, std::vector<std::string>& warnings, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    try {
        if constexpr (std::is_void_v<decltype(body())>) {
            body();
            log.record(stage, "ok", elapsed(), warnings);
            warnings.clear();
        } else {
            auto result = body();
            log.record(stage, "ok", elapsed(), warnings);
            warnings.clear();
            return result;
        }
    } catch (const std::exception& e) {
        log.record(stage, "error", elapsed(), warnings, e.what());
        warnings.clear();
        throw;
    }
}

struct CaseResult {
    std::string case_id;
    RegistrationResult registration;
    MorphResult morph;
    std::optional<ErrorReport> report;
    std::vector<fs::path> artifacts;
    std::map<std::string, double> timings_s;
};

/// Writes template.stl, truth.stl, case.json, initial_pose.json and the four
/// view directories.
SyntheticCase cmd_synth(const SynthConfig& cfg, const fs::path& case_dir);

/// Multi-view registration of the template, then morphing. Writes
/// registration.json, morphed.stl (object frame), morph_history.csv,
/// displacements.csv and morph_summary.json.
CaseResult cmd_reconstruct(const fs::path& case_dir, const nlohmann::json& overrides = nlohmann::json::object());

/// ICP-aligns morphed.stl to the truth mesh. Writes report.json, errors.csv
/// and heatmap.ply. StageError "no ground truth" when the truth is absent.
ErrorReport cmd_evaluate(const fs::path& case_dir, const nlohmann::json& overrides = nlohmann::json::object());

/// Reads report.json from each case; writes cohort.csv and cohort.json into
/// `output_dir`. Unevaluated cases are skipped with a warning.
CohortSummary cmd_cohort(const std::vector<fs::path>& case_dirs, const fs::path& output_dir,
                         std::vector<std::string>* warnings = nullptr);

/// Compares two trace CSVs; writes kinematics_error.json and
/// kinematics_diff.csv into `output_dir`.
KinematicsError cmd_kinematics(const fs::path& recon_csv, const fs::path& truth_csv, const fs::path& output_dir);

/// Thresholds one mask per standard view and writes mask.pgm and
/// contour.json into the view directories. Keys are view directory names.
/// Multi-component masks add a warning.
std::array<Contour, 4> cmd_import_masks(const std::map<std::string, fs::path>& masks, const fs::path& case_dir,
                                        std::vector<std::string>* warnings = nullptr);

/// Case directory named `case_id` under the output root, or the path itself
/// when one is given.
fs::path resolve_case_dir(const std::optional<fs::path>& explicit_dir, const std::string& case_id);

}  // namespace implant
