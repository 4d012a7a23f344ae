#include "implant/evaluation.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

#include <Eigen/SVD>

#include "implant/error.hpp"
#include "implant/synthetic.hpp"

namespace implant {

namespace {

// Least-squares rigid motion taking src onto dst.
RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    const double n = static_cast<double>(src.size());
    Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        cs += src[i];
        cd += dst[i];
    }
    cs /= n;
    cd /= n;
    Mat3 h = Mat3::Zero();
    Mat3 spread = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Vec3 a = src[i] - cs;
        h += a * (dst[i] - cd).transpose();
        spread += a * a.transpose();
    }
    Eigen::JacobiSVD<Mat3> rank_check(spread);
    const Vec3 sv = rank_check.singularValues();
    if (src.size() < 3 || !(sv[1] > 1e-12 * std::max(sv[0], 1e-300))) {
        throw InvalidArgument("degenerate ICP correspondence set (fewer than three non-collinear points)");
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3 u = svd.matrixU();
    const Mat3 v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Mat3 r = v * d * u.transpose();
    // Re-orthonormalize against round-off before the rigidity check.
    const Eigen::Quaterniond q(r);
    r = q.normalized().toRotationMatrix();
    return RigidTransform(r, cd - r * cs);
}

using State = Eigen::Matrix<double, 7, 1>;

State to_state(const RigidTransform& t) {
    const Eigen::Quaterniond q = t.quaternion();
    State s;
    s << q.w(), q.x(), q.y(), q.z(), t.translation();
    return s;
}

RigidTransform from_state(const State& s) {
    const Eigen::Quaterniond q(s[0], s[1], s[2], s[3]);
    return RigidTransform::from_quaternion(q.normalized(), s.tail<3>());
}

// Besl-McKay extrapolation along the registration-state path. Given the
// last two state steps and the fit errors at the last three states, returns
// the distance to move along the latest step direction, or 0 to skip.
double extrapolation_distance(const State& step, const State& prev_step, const std::array<double, 3>& err) {
    const double len = step.norm();
    const double prev_len = prev_step.norm();
    if (len <= 0.0 || prev_len <= 0.0) return 0.0;
    const double cos_angle = step.dot(prev_step) / (len * prev_len);
    if (cos_angle < std::cos(10.0 * 3.14159265358979323846 / 180.0)) return 0.0;
    // Errors at positions 0 (current), -len and -(len + prev_len).
    const double v2 = -len, v3 = -(len + prev_len);
    const double d1 = err[0], d2 = err[1], d3 = err[2];
    const double vmax = 25.0 * len;
    const double slope = (d1 - d3) / (0.0 - v3);
    if (!(slope < 0.0)) return 0.0;
    const double v_lin = -d1 / slope;
    // Parabola through the three samples.
    const double a = ((d2 - d1) / v2 - (d3 - d1) / v3) / (v2 - v3);
    const double b = (d2 - d1) / v2 - a * v2;
    const double v_par = a > 0.0 ? -b / (2.0 * a) : -1.0;
    if (v_par > 0.0 && v_par < v_lin && v_par < vmax) return v_par;
    if (v_lin > 0.0 && v_lin < vmax) return v_lin;
    return vmax;
}

}  // namespace

IcpResult icp_align(const TriMesh& source, const SpatialIndex& target, const RigidTransform& init,
                    const IcpConfig& cfg) {
    if (source.empty() || target.mesh().empty()) throw InvalidArgument("ICP needs two nonempty meshes");
    if (cfg.max_iterations <= 0 || !(cfg.tolerance_mm > 0.0)) throw ConfigError("invalid ICP configuration");

    std::vector<Vec3> samples(source.vertices().begin(), source.vertices().end());
    if (samples.size() > cfg.max_samples) {
        // Partial Fisher-Yates with the platform-independent generator.
        Rng rng(cfg.seed);
        for (std::size_t i = 0; i < cfg.max_samples; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.next() % (samples.size() - i));
            std::swap(samples[i], samples[j]);
        }
        samples.resize(cfg.max_samples);
    }

    IcpResult out;
    out.transform = init;
    std::vector<Vec3> moved(samples.size());
    std::vector<Vec3> matched(samples.size());
    double previous = std::numeric_limits<double>::infinity();
    // Registration-state history for the extrapolation: steps and the mean
    // squared fit errors of the last three registrations.
    State last_state = to_state(out.transform);
    State step = State::Zero(), prev_step = State::Zero();
    std::array<double, 3> fit_err{0.0, 0.0, 0.0};
    int fresh = 0;  // registrations since the last extrapolation
    std::optional<RigidTransform> before_jump;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        out.iterations = it;
        double sum = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            moved[i] = out.transform.apply(samples[i]);
            const SurfaceHit hit = target.closest_point(moved[i]);
            matched[i] = hit.point;
            sum += hit.distance;
        }
        const double mean = sum / static_cast<double>(samples.size());
        if (before_jump) {
            // An extrapolation that raised the error is undone.
            const RigidTransform undo = *before_jump;
            before_jump.reset();
            if (mean > previous) {
                out.transform = undo;
                last_state = to_state(out.transform);
                step = State::Zero();
                continue;
            }
        }
        out.history_mm.push_back(mean);
        out.mean_distance_mm = mean;
        if (std::abs(previous - mean) < cfg.tolerance_mm) {
            out.converged = true;
            break;
        }
        previous = mean;
        const RigidTransform delta = kabsch(moved, matched);
        double sq = 0.0;
        for (std::size_t i = 0; i < moved.size(); ++i) sq += (delta.apply(moved[i]) - matched[i]).squaredNorm();
        out.transform = delta * out.transform;

        State state = to_state(out.transform);
        prev_step = step;
        step = state - last_state;
        fit_err = {sq / static_cast<double>(moved.size()), fit_err[0], fit_err[1]};
        ++fresh;
        if (fresh >= 3) {
            const double v = extrapolation_distance(step, prev_step, fit_err);
            if (v > 0.0) {
                before_jump = out.transform;
                state += v * step / step.norm();
                out.transform = from_state(state);
                fresh = 0;
            }
        }
        last_state = to_state(out.transform);
    }
    return out;
}

std::vector<double> vertex_surface_errors(const TriMesh& morphed, const SpatialIndex& truth) {
    if (morphed.empty()) throw InvalidArgument("vertex errors of an empty mesh");
    std::vector<double> out(morphed.vertex_count());
    for (std::size_t v = 0; v < morphed.vertex_count(); ++v) {
        out[v] = truth.closest_point(morphed.vertex(v)).signed_distance;
    }
    return out;
}

ErrorReport error_report(std::vector<double> distances, std::string case_id) {
    if (distances.empty()) throw InvalidArgument("error report of an empty distance list");
    ErrorReport r;
    r.case_id = std::move(case_id);
    double sq = 0.0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        const double d = distances[i];
        if (!std::isfinite(d)) throw InvalidArgument("non-finite distance in error report");
        sq += d * d;
        if (r.largest_vertex < 0 || std::abs(d) > r.largest_mm) {
            r.largest_mm = std::abs(d);
            r.largest_vertex = static_cast<int>(i);
        }
    }
    r.rms_mm = std::sqrt(sq / static_cast<double>(distances.size()));
    r.distances = std::move(distances);
    return r;
}

CohortSummary summarize_cohort(const std::vector<CohortRow>& rows) {
    if (rows.empty()) throw InvalidArgument("cohort summary of an empty case list");
    auto summarize = [&](auto field) {
        MetricSummary m;
        m.min = m.max = rows[0].*field;
        double sum = 0.0;
        for (const auto& r : rows) {
            sum += r.*field;
            m.min = std::min(m.min, r.*field);
            m.max = std::max(m.max, r.*field);
        }
        m.mean = sum / static_cast<double>(rows.size());
        double var = 0.0;
        for (const auto& r : rows) var += (r.*field - m.mean) * (r.*field - m.mean);
        m.std = std::sqrt(var / static_cast<double>(rows.size()));
        return m;
    };
    CohortSummary s;
    s.rows = rows;
    s.rms = summarize(&CohortRow::rms_mm);
    s.largest = summarize(&CohortRow::largest_mm);
    return s;
}

CohortSummary summarize_cohort(const std::vector<ErrorReport>& reports) {
    std::vector<CohortRow> rows;
    rows.reserve(reports.size());
    for (const auto& r : reports) rows.push_back({r.case_id, r.rms_mm, r.largest_mm});
    return summarize_cohort(rows);
}

nlohmann::json report_to_json(const ErrorReport& report) {
    return {{"case_id", report.case_id},
            {"rms_mm", report.rms_mm},
            {"largest_mm", report.largest_mm},
            {"largest_vertex", report.largest_vertex},
            {"vertex_count", report.distances.size()}};
}

nlohmann::json cohort_to_json(const CohortSummary& summary) {
    auto metric = [](const MetricSummary& m) {
        return nlohmann::json{{"mean", m.mean}, {"std", m.std}, {"min", m.min}, {"max", m.max}};
    };
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& r : summary.rows) {
        cases.push_back({{"case_id", r.case_id}, {"rms_mm", r.rms_mm}, {"largest_mm", r.largest_mm}});
    }
    return {{"cases", cases},
            {"case_count", summary.rows.size()},
            {"rms_mm", metric(summary.rms)},
            {"largest_mm", metric(summary.largest)},
            {"std_convention", "population"}};
}

void write_cohort_csv(const CohortSummary& summary, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "case,rms_mm,largest_mm\n";
    for (const auto& r : summary.rows) {
        out << r.case_id << ',' << format_double(r.rms_mm) << ',' << format_double(r.largest_mm) << '\n';
    }
    auto cell = [](const MetricSummary& m) {
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(4);
        s << m.mean << " ± " << m.std;
        return s.str();
    };
    out << "average," << cell(summary.rms) << ',' << cell(summary.largest) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

Rgb heat_color(double d, double range) {
    if (!(range > 0.0)) return {};
    const double t = std::clamp(d / range, -1.0, 1.0);
    auto c = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
    if (t < 0.0) return {c(1.0 + t), c(1.0 + t), 255};
    return {255, c(1.0 - t), c(1.0 - t)};
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void export_heatmap(const TriMesh& mesh, const std::vector<double>& distances, const std::filesystem::path& ply_path,
                    const std::filesystem::path& csv_path, std::optional<double> range_mm) {
    if (distances.size() != mesh.vertex_count()) {
        throw InvalidArgument("heatmap distance count " + std::to_string(distances.size()) +
                              " does not match vertex count " + std::to_string(mesh.vertex_count()));
    }
    double range = 0.0;
    if (range_mm) {
        if (!(*range_mm > 0.0)) throw InvalidArgument("heatmap range must be positive");
        range = *range_mm;
    } else {
        for (double d : distances) range = std::max(range, std::abs(d));
    }

    std::ofstream ply(ply_path);
    if (!ply) throw IoError("cannot open " + ply_path.string() + " for writing");
    ply << "ply\nformat ascii 1.0\ncomment signed vertex error, blue negative, red positive, range +-"
        << format_double(range) << " mm\n"
        << "element vertex " << mesh.vertex_count() << "\nproperty float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "element face " << mesh.triangle_count() << "\nproperty list uchar int vertex_indices\nend_header\n";
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        const Vec3& p = mesh.vertex(v);
        const Rgb c = heat_color(distances[v], range);
        ply << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << ' ' << int(c.r)
            << ' ' << int(c.g) << ' ' << int(c.b) << '\n';
    }
    for (const auto& t : mesh.triangles()) ply << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    if (!ply) throw IoError("failed writing " + ply_path.string());

    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot open " + csv_path.string() + " for writing");
    csv << "vertex,signed_distance_mm\n";
    for (std::size_t v = 0; v < distances.size(); ++v) csv << v << ',' << format_double(distances[v]) << '\n';
    if (!csv) throw IoError("failed writing " + csv_path.string());
}

std::vector<double> read_error_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("vertex,", 0) != 0) {
        throw FormatError(path.string() + ": missing 'vertex,signed_distance_mm' header");
    }
    std::vector<double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError(path.string() + ": malformed row '" + line + "'");
        long idx = -1;
        const auto ires = std::from_chars(line.data(), line.data() + comma, idx);
        if (ires.ec != std::errc() || idx != static_cast<long>(out.size())) {
            throw FormatError(path.string() + ": bad or out-of-order vertex index in '" + line + "'");
        }
        double v = 0.0;
        const char* b = line.data() + comma + 1;
        const char* e = line.data() + line.size();
        const auto res = std::from_chars(b, e, v);
        if (res.ec != std::errc() || res.ptr != e) throw FormatError(path.string() + ": bad number in '" + line + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace implant
