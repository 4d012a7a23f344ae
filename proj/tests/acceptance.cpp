// Acceptance run: one PASS/FAIL line per criterion; exits nonzero when any
// criterion fails. Case directories go under $IMPLANT3D_OUTPUT_ROOT/acceptance
// when set, else a temporary directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "implant/coco.hpp"
#include "implant/error.hpp"
#include "implant/evaluation.hpp"
#include "implant/kinematics.hpp"
#include "implant/pipeline.hpp"
#include "implant/registration.hpp"
#include "implant/serialization.hpp"
#include "implant/synthetic.hpp"

using namespace implant;
using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_root;

fs::path case_root(const std::string& name) {
    const fs::path p = g_root / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// 1. Reference cohort statistics.
Outcome cohort_statistics() {
    const double rms[] = {0.46, 0.54, 0.58, 0.84, 0.45, 0.66, 0.39, 0.53, 0.49, 0.62,
                          0.49, 0.81, 0.65, 0.53, 0.45, 0.51, 0.83, 0.56, 0.81};
    const double largest[] = {1.54, 2.75, 1.76, 3.68, 3.27, 3.47, 1.94, 1.86, 4.52, 2.68,
                              2.71, 2.97, 2.97, 2.74, 1.75, 2.52, 3.48, 2.35, 3.75};
    std::vector<CohortRow> rows;
    for (int i = 0; i < 19; ++i) rows.push_back({std::to_string(i + 1), rms[i], largest[i]});
    const CohortSummary s = summarize_cohort(rows);
    const bool ok = s.rms.mean >= 0.58 && s.rms.mean <= 0.59 && s.rms.std >= 0.13 && s.rms.std <= 0.15 &&
                    std::abs(s.largest.mean - 2.77) <= 0.01 && s.largest.std >= 0.77 && s.largest.std <= 0.81;
    char buf[160];
    std::snprintf(buf, sizeof buf, "rms %.4f ± %.4f mm, largest %.4f ± %.4f mm over %zu cases", s.rms.mean, s.rms.std,
                  s.largest.mean, s.largest.std, s.rows.size());
    return {ok, buf};
}

struct SizeCase {
    std::string shape;
    double scale;
};

const std::vector<SizeCase> kSizeCases = {
    {"femoral", 0.90}, {"femoral", 1.10}, {"femoral", 1.15}, {"condyle", 0.92}, {"condyle", 1.12}};

fs::path run_size_case(const fs::path& root, const SizeCase& c, std::size_t index, double* seconds,
                       ErrorReport* report, double* diagonal) {
    char id[64];
    std::snprintf(id, sizeof id, "%s_%03d", c.shape.c_str(), static_cast<int>(std::lround(c.scale * 100)));
    const fs::path dir = root / id;
    SynthConfig cfg = synth_config_from_json(
        Json{{"template", "builtin:" + c.shape}, {"scale", c.scale}, {"resolution", 1024}, {"seed", 100 + index}}, ".");
    cfg.case_id = id;
    const auto t0 = Clock::now();
    const SyntheticCase sc = cmd_synth(cfg, dir);
    cmd_reconstruct(dir);
    *report = cmd_evaluate(dir);
    *seconds = seconds_since(t0);
    *diagonal = bounding_box(sc.truth_mesh).diagonal();
    return dir;
}

// 2. Closed-loop size morph; the run directories are reused by criterion 10.
Outcome size_morph(const fs::path& root) {
    bool ok = true;
    double worst_rms = 0.0, worst_largest = 0.0, slowest = 0.0;
    std::ostringstream notes;
    for (std::size_t i = 0; i < kSizeCases.size(); ++i) {
        double secs = 0.0, diag = 0.0;
        ErrorReport rep;
        try {
            run_size_case(root, kSizeCases[i], i, &secs, &rep, &diag);
        } catch (const std::exception& e) {
            ok = false;
            notes << ' ' << kSizeCases[i].shape << 'x' << kSizeCases[i].scale << ": " << e.what() << ';';
            continue;
        }
        const double rf = rep.rms_mm / diag, lf = rep.largest_mm / diag;
        worst_rms = std::max(worst_rms, rf);
        worst_largest = std::max(worst_largest, lf);
        slowest = std::max(slowest, secs);
        if (rf > 0.01 || lf > 0.06 || secs > 120.0) ok = false;
        std::fprintf(stderr, "  %s x%.2f: rms %.4f mm (%.3f%%), largest %.4f mm (%.3f%%), %.1f s\n",
                     kSizeCases[i].shape.c_str(), kSizeCases[i].scale, rep.rms_mm, 100 * rf, rep.largest_mm, 100 * lf,
                     secs);
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu cases, worst rms %.3f%% / largest %.3f%% of diagonal, slowest %.1f s",
                  kSizeCases.size(), 100 * worst_rms, 100 * worst_largest, slowest);
    return {ok, buf + notes.str()};
}

// 3. Fixed point through the full pipeline.
Outcome fixed_point() {
    const fs::path dir = case_root("fixed_point");
    SynthConfig cfg =
        synth_config_from_json(Json{{"template", "builtin:femoral"}, {"scale", 1.0}, {"resolution", 1024}}, ".");
    cfg.case_id = "fixed_point";
    cmd_synth(cfg, dir);
    const auto t0 = Clock::now();
    const CaseResult r = cmd_reconstruct(dir);
    const double secs = seconds_since(t0);
    double sq = 0.0;
    for (const auto& d : r.morph.displacements) sq += d.squaredNorm();
    const double rms = std::sqrt(sq / static_cast<double>(r.morph.displacements.size()));
    char buf[160];
    std::snprintf(buf, sizeof buf, "displacement rms %.4f mm, reconstruct %.1f s", rms, secs);
    return {rms <= 0.1 && secs < 30.0, buf};
}

// 4. Registration recovery over randomized perturbations.
Outcome registration_trials() {
    const TriMesh mesh = builtin_template("femoral");
    const Camera cam = Camera::with_resolution(512);
    const Vec3 c = mesh.centroid();
    const RigidTransform truth =
        pose_from_parameters(RigidTransform::from_translation(Vec3(0, 0, 500) - c), c, {6, -4, 8, 1.5, -2, 3});
    std::vector<ViewTarget> views;
    for (const auto& v : standard_views()) {
        const RigidTransform vt = view_transform(v, 500.0);
        views.push_back({view_dir_name(v), cam, vt, silhouette_contour(cam, vt * truth, mesh)});
    }
    Rng rng(2024);
    int recovered = 0, silent_failures = 0;
    double slowest = 0.0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
        std::array<double, 6> p{};
        for (auto& v : p) v = rng.uniform(-10.0, 10.0);
        const RigidTransform init = pose_from_parameters(truth, c, p);
        const auto t0 = Clock::now();
        bool good = false, converged = false;
        try {
            const RegistrationResult r = register_multi_view(views, mesh, init);
            converged = r.converged;
            good = pose_difference(r.pose, truth).rotation_deg <= 1.0 && (r.pose.apply(c) - truth.apply(c)).norm() <= 1.0;
        } catch (const StageError&) {
        }
        slowest = std::max(slowest, seconds_since(t0));
        if (good) ++recovered;
        else if (converged) ++silent_failures;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d/%d recovered within 1 deg / 1 mm, %d failures reported converged, slowest %.1f s",
                  recovered, trials, silent_failures, slowest);
    return {recovered >= 45 && silent_failures == 0 && slowest < 10.0, buf};
}

// 5. ICP apply-and-recover and identity.
Outcome icp_exactness() {
    const TriMesh target = builtin_template("condyle");
    const SpatialIndex index(target);
    const Vec3 c = target.centroid();
    const IcpResult id = icp_align(target, index);
    double id_err = std::max((id.transform.rotation() - Mat3::Identity()).norm(), id.transform.translation().norm());
    // The default stop (mean change < 1e-6 mm) leaves ~1e-5 in the slow
    // tangential mode of point-to-point ICP; recovery runs to a tighter stop.
    IcpConfig tight;
    tight.tolerance_mm = 1e-10;
    tight.max_iterations = 500;
    Rng rng(5);
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
        const Vec3 axis(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const double deg = rng.uniform(2.0, 20.0);
        const RigidTransform applied =
            RigidTransform::from_translation(Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))) *
            RigidTransform::rotation_about(Eigen::AngleAxisd(deg * kDeg, axis.normalized()).toRotationMatrix(), c);
        const IcpResult r = icp_align(transform_mesh(target, applied), index, {}, tight);
        const RigidTransform residual = r.transform * applied;
        worst = std::max({worst, (residual.rotation() - Mat3::Identity()).norm(), residual.translation().norm()});
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "recovery error %.2e (5 transforms up to 20 deg), identity error %.2e", worst, id_err);
    return {worst <= 1e-6 && id_err <= 1e-9 && id.mean_distance_mm < 1e-9, buf};
}

// Closest point on triangle abc to p, by region tests.
Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return a;
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

// 6. Indexed queries against brute force.
Outcome distance_oracle() {
    const TriMesh mesh = make_icosphere(20.0, 3);
    const SpatialIndex index(mesh);
    Rng rng(6);
    std::vector<Vec3> queries(100);
    for (auto& q : queries) q = Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-30, 30));
    int mismatches = 0;
    double worst_oracle = 0.0;
    for (const auto& q : queries) {
        const SurfaceHit fast = index.closest_point(q);
        const SurfaceHit slow = index.closest_point_exhaustive(q);
        if (fast.distance != slow.distance || fast.signed_distance != slow.signed_distance ||
            fast.point != slow.point) {
            ++mismatches;
        }
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
            const auto& tri = mesh.triangle(t);
            best = std::min(best, (q - closest_on_triangle(q, mesh.vertex(tri[0]), mesh.vertex(tri[1]),
                                                           mesh.vertex(tri[2])))
                                      .norm());
        }
        worst_oracle = std::max(worst_oracle, std::abs(best - fast.distance));
    }
    std::vector<Vec3> moved(mesh.vertices().begin(), mesh.vertices().end());
    for (auto& p : moved) p *= 1.0 + rng.uniform(-0.1, 0.1);
    const TriMesh morphed = mesh.with_vertices(moved);
    const auto d = vertex_surface_errors(morphed, index);
    for (std::size_t v = 0; v < 100; ++v) {
        if (d[v] != index.closest_point_exhaustive(morphed.vertex(v)).signed_distance) ++mismatches;
    }
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "%d mismatches over 100 queries + 100 vertices on %zu triangles; independent oracle within %.1e mm",
                  mismatches, mesh.triangle_count(), worst_oracle);
    return {mismatches == 0 && worst_oracle <= 1e-9 && mesh.triangle_count() <= 1280, buf};
}

Mask random_blob(std::mt19937_64& rng, int size) {
    std::uniform_real_distribution<double> pos(size * 0.3, size * 0.7);
    std::uniform_real_distribution<double> rad(size * 0.05, size * 0.2);
    Mask m(size, size);
    const double cx0 = pos(rng), cy0 = pos(rng);
    for (int k = 0; k < 4; ++k) {
        const double cx = k == 0 ? cx0 : cx0 + (pos(rng) - size * 0.5) * 0.5;
        const double cy = k == 0 ? cy0 : cy0 + (pos(rng) - size * 0.5) * 0.5;
        const double r = rad(rng);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y, true);
            }
        }
    }
    return m;
}

// 7. Contour integrity on random masks.
Outcome contour_integrity() {
    std::mt19937_64 rng(7);
    int bad = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const Mask m = random_blob(rng, 128);
        const Contour c = extract_contour(m);
        if (c.points.size() < 4 || !c.closed) {
            ++bad;
            continue;
        }
        bool ok = true;
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            const Pixel& p = c.points[i];
            const Pixel& q = c.points[(i + 1) % c.points.size()];  // wraps: last joins first
            const bool edge = !m.foreground(p.x - 1, p.y) || !m.foreground(p.x + 1, p.y) ||
                              !m.foreground(p.x, p.y - 1) || !m.foreground(p.x, p.y + 1);
            ok = ok && m.foreground(p.x, p.y) && edge && std::max(std::abs(p.x - q.x), std::abs(p.y - q.y)) == 1;
        }
        if (!ok) ++bad;
    }
    return {bad == 0, std::to_string(20 - bad) + "/20 contours one pixel thick and closed"};
}

// 8. Cardan round trip and constant-offset traces.
Outcome kinematics_oracle() {
    Rng rng(8);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double a = rng.uniform(-180, 180), b = rng.uniform(-79.9, 79.9), c = rng.uniform(-180, 180);
        const CardanAngles d = decompose_cardan(compose_cardan(a, b, c));
        worst = std::max({worst, std::abs(d.flexion_deg - a), std::abs(d.adduction_deg - b), std::abs(d.axial_deg - c)});
    }
    KinematicsTrace truth, recon;
    for (int i = 0; i < 25; ++i) {
        truth.frames.push_back(i);
        truth.flexion_deg.push_back(i * 4.0);
        truth.ap_mm.push_back(0.25 * i - 3.0);
        truth.axial_deg.push_back(0.5 * i);
        truth.gimbal.push_back(false);
    }
    recon = truth;
    for (auto& v : recon.ap_mm) v += 0.75;
    for (auto& v : recon.axial_deg) v -= 1.25;
    const KinematicsError e = compare_traces(recon, truth);
    const KinematicsError z = compare_traces(truth, truth);
    const bool offsets = e.translation_mean_mm == 0.75 && e.translation_std_mm == 0.0 && e.rotation_mean_deg == 1.25 &&
                         e.rotation_std_deg == 0.0 && z.translation_mean_mm == 0.0 && z.rotation_mean_deg == 0.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "round-trip error %.2e deg over 1000 triples; offsets %s", worst,
                  offsets ? "exact" : "inexact");
    return {worst <= 1e-9 && offsets, buf};
}

// 9. COCO polygon round trip.
Outcome coco_round_trip() {
    std::mt19937_64 rng(9);
    double worst = 1.0;
    const Camera cam = Camera::with_resolution(512);
    std::vector<Mask> masks;
    for (int i = 0; i < 10; ++i) masks.push_back(random_blob(rng, 128));
    for (const char* shape : {"femoral", "condyle"}) {
        const TriMesh m = builtin_template(shape);
        masks.push_back(render_silhouette(cam, RigidTransform::from_translation(Vec3(0, 0, 500) - m.centroid()), m));
    }
    for (const auto& m : masks) {
        const Json doc = export_coco({{"mask.pgm", m, "femur"}});
        const std::vector<double> poly = doc["annotations"][0]["segmentation"][0];
        worst = std::min(worst, mask_iou(rasterize_polygon(poly, m.width(), m.height()), m));
    }
    char buf[120];
    std::snprintf(buf, sizeof buf, "minimum IoU %.4f over %zu masks", worst, masks.size());
    return {worst >= 0.98, buf};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// 10. Second run of criterion 2 compared byte for byte.
Outcome determinism(const fs::path& first) {
    const fs::path second = case_root("size_morph_rerun");
    for (std::size_t i = 0; i < kSizeCases.size(); ++i) {
        double secs = 0.0, diag = 0.0;
        ErrorReport rep;
        try {
            run_size_case(second, kSizeCases[i], i, &secs, &rep, &diag);
        } catch (const std::exception& e) {
            return {false, std::string("rerun failed: ") + e.what()};
        }
    }
    int compared = 0;
    std::vector<std::string> differing;
    for (const auto& entry : fs::recursive_directory_iterator(first)) {
        if (!entry.is_regular_file() || entry.path().filename() == "run_log.jsonl") continue;
        const fs::path rel = fs::relative(entry.path(), first);
        ++compared;
        if (!fs::exists(second / rel) || slurp(entry.path()) != slurp(second / rel)) differing.push_back(rel.string());
    }
    std::string detail = std::to_string(compared) + " artifacts compared, " + std::to_string(differing.size()) +
                         " differ";
    for (std::size_t i = 0; i < std::min<std::size_t>(differing.size(), 3); ++i) detail += " " + differing[i];
    return {differing.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
    // Optional criterion numbers on the command line select a subset.
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    auto selected = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

    const char* env = std::getenv(kOutputRootEnv);
    g_root = (env && *env) ? fs::path(env) / "acceptance" : fs::temp_directory_path() / "implant3d_acceptance";
    fs::create_directories(g_root);

    int failed = 0;
    int ran = 0;
    auto report = [&](int n, const char* name, const std::function<Outcome()>& run) {
        if (!selected(n)) return;
        ++ran;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    };

    const fs::path size_dir = case_root("size_morph");
    report(1, "cohort statistics", cohort_statistics);
    report(2, "closed-loop size morph", [&] { return size_morph(size_dir); });
    report(3, "fixed-point morph", fixed_point);
    report(4, "registration recovery", registration_trials);
    report(5, "ICP exactness", icp_exactness);
    report(6, "distance oracle", distance_oracle);
    report(7, "contour integrity", contour_integrity);
    report(8, "kinematics oracle", kinematics_oracle);
    report(9, "COCO round trip", coco_round_trip);
    report(10, "determinism", [&] {
        if (!selected(2)) size_morph(size_dir);
        return determinism(size_dir);
    });
    std::printf("%d of %d criteria failed\n", failed, ran);
    return failed == 0 ? 0 : 1;
}
