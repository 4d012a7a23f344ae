#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "implant/geometry.hpp"

namespace implant {

struct IcpConfig {
    int max_iterations = 200;
    double tolerance_mm = 1e-6;         // change in mean distance that ends the loop
    std::size_t max_samples = 50000;    // above this, a fixed-seed vertex subset is used
    std::uint64_t seed = 0;
};

struct IcpResult {
    RigidTransform transform;           // applied to the source
    double mean_distance_mm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> history_mm;     // mean distance per iteration
};

/// Point-to-point ICP of the source vertices against the target surface.
/// Throws InvalidArgument when the correspondence set is degenerate (fewer
/// than three non-collinear points).
IcpResult icp_align(const TriMesh& source, const SpatialIndex& target, const RigidTransform& init = {},
                    const IcpConfig& cfg = {});

/// Signed distance from each vertex to the truth surface (positive outside).
std::vector<double> vertex_surface_errors(const TriMesh& morphed, const SpatialIndex& truth);

struct ErrorReport {
    std::string case_id;
    std::vector<double> distances;
    double rms_mm = 0.0;
    double largest_mm = 0.0;            // max |distance|
    int largest_vertex = -1;            // lowest index on ties
};

ErrorReport error_report(std::vector<double> distances, std::string case_id);

struct CohortRow {
    std::string case_id;
    double rms_mm = 0.0;
    double largest_mm = 0.0;
};

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;                   // population
    double min = 0.0;
    double max = 0.0;
};

struct CohortSummary {
    std::vector<CohortRow> rows;
    MetricSummary rms;
    MetricSummary largest;
};

CohortSummary summarize_cohort(const std::vector<CohortRow>& rows);
CohortSummary summarize_cohort(const std::vector<ErrorReport>& reports);

nlohmann::json report_to_json(const ErrorReport& report);
nlohmann::json cohort_to_json(const CohortSummary& summary);
/// Case rows followed by one "average" row holding "mean ± std" cells.
void write_cohort_csv(const CohortSummary& summary, const std::filesystem::path& path);

struct Rgb {
    std::uint8_t r = 255, g = 255, b = 255;
    bool operator==(const Rgb&) const = default;
};

/// Diverging blue-white-red map of d over [-range, range]; white at 0.
Rgb heat_color(double d, double range);

/// Writes an ASCII PLY with per-vertex colors and a CSV of
/// (vertex, signed_distance_mm). The range defaults to the largest |d|.
void export_heatmap(const TriMesh& mesh, const std::vector<double>& distances, const std::filesystem::path& ply_path,
                    const std::filesystem::path& csv_path, std::optional<double> range_mm = std::nullopt);

std::vector<double> read_error_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace implant
