#include "implant/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "implant/error.hpp"
#include "implant/image_io.hpp"
#include "implant/mesh_io.hpp"
#include "implant/serialization.hpp"

namespace implant {

namespace {

constexpr const char* kLogName = "run_log.jsonl";

// Typed access to config values; every failure names the dotted key.

double as_double(const Json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("config field '" + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError("config field '" + key + "' must be finite");
    return d;
}

int as_int(const Json& v, const std::string& key) {
    if (!v.is_number_integer()) throw ConfigError("config field '" + key + "' must be an integer");
    return v.get<int>();
}

std::uint64_t as_seed(const Json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError("config field '" + key + "' must be a nonnegative integer");
    }
    return v.get<std::uint64_t>();
}

bool as_bool(const Json& v, const std::string& key) {
    if (!v.is_boolean()) throw ConfigError("config field '" + key + "' must be true or false");
    return v.get<bool>();
}

std::string as_string(const Json& v, const std::string& key) {
    if (!v.is_string() || v.get<std::string>().empty()) {
        throw ConfigError("config field '" + key + "' must be a nonempty string");
    }
    return v.get<std::string>();
}

Vec3 as_vec3(const Json& v, const std::string& key) {
    if (!v.is_array() || v.size() != 3) throw ConfigError("config field '" + key + "' must be [x, y, z]");
    return {as_double(v[0], key), as_double(v[1], key), as_double(v[2], key)};
}

void require_object(const Json& v, const std::string& key) {
    if (!v.is_object()) throw ConfigError("config field '" + key + "' must be an object");
}

[[noreturn]] void unknown_key(const std::string& prefix, const std::string& key) {
    throw ConfigError("unknown config field '" + (prefix.empty() ? key : prefix + "." + key) + "'");
}

void apply_icp_overrides(IcpConfig& cfg, const Json& doc) {
    require_object(doc, "icp");
    for (const auto& [k, v] : doc.items()) {
        if (k == "max_iterations") {
            cfg.max_iterations = as_int(v, "icp.max_iterations");
        } else if (k == "tolerance_mm") {
            cfg.tolerance_mm = as_double(v, "icp.tolerance_mm");
        } else if (k == "max_samples") {
            const int n = as_int(v, "icp.max_samples");
            if (n < 3) throw ConfigError("config field 'icp.max_samples' must be at least 3");
            cfg.max_samples = static_cast<std::size_t>(n);
        } else {
            unknown_key("icp", k);
        }
    }
    if (cfg.max_iterations <= 0) throw ConfigError("config field 'icp.max_iterations' must be positive");
    if (!(cfg.tolerance_mm > 0.0)) throw ConfigError("config field 'icp.tolerance_mm' must be positive");
}

fs::path under(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

std::array<std::string, 4> view_names() {
    std::array<std::string, 4> out;
    const auto views = standard_views();
    for (std::size_t i = 0; i < 4; ++i) out[i] = view_dir_name(views[i]);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void require_case_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("case directory " + dir.string() + " does not exist");
}

TriMesh load_template_source(const std::string& source, const fs::path& base_dir) {
    const std::string prefix = "builtin:";
    if (source.rfind(prefix, 0) == 0) {
        try {
            return builtin_template(source.substr(prefix.size()));
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("config field 'template': ") + e.what());
        }
    }
    return load_mesh(under(base_dir, source));
}

std::vector<ViewTarget> load_views(const CaseConfig& cfg, const fs::path& case_dir) {
    const auto views = standard_views();
    std::vector<ViewTarget> out;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string name = view_dir_name(views[i]);
        ViewTarget t;
        t.name = name;
        try {
            t.camera = load_camera(cfg.camera_paths[i]);
            t.target = load_contour(case_dir / "views" / name / "contour.json");
        } catch (const FormatError& e) {
            throw FormatError("view " + name + ": " + e.what());
        } catch (const IoError& e) {
            throw IoError("view " + name + ": " + e.what());
        }
        if (t.target.empty()) throw FormatError("view " + name + ": contour has no points");
        t.view = view_transform(views[i], cfg.isocenter_mm);
        out.push_back(std::move(t));
    }
    return out;
}

Json registration_to_json(const std::string& case_id, const RegistrationResult& r) {
    Json per_view = Json::array();
    for (const auto& v : r.per_view) {
        per_view.push_back({{"view", v.name}, {"residual_px", v.residual_px}, {"residual_mm", v.residual_mm}});
    }
    return {{"case_id", case_id},
            {"pose", pose_to_json(r.pose)},
            {"residual_px", r.residual_px},
            {"residual_mm", r.residual_mm},
            {"converged", r.converged},
            {"iterations", r.iterations},
            {"evaluations", r.evaluations},
            {"per_view", per_view}};
}

}  // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const StageError*>(&e) || dynamic_cast<const InvalidArgument*>(&e)) return kExitStage;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
    return kExitFailure;
}

void apply_registration_overrides(RegistrationConfig& cfg, const Json& doc) {
    require_object(doc, "registration");
    for (const auto& [k, v] : doc.items()) {
        const std::string key = "registration." + k;
        if (k == "max_iterations") cfg.max_iterations = as_int(v, key);
        else if (k == "tolerance_px") cfg.tolerance_px = as_double(v, key);
        else if (k == "simplex_tolerance") cfg.simplex_tolerance = as_double(v, key);
        else if (k == "initial_rotation_deg") cfg.initial_rotation_deg = as_double(v, key);
        else if (k == "initial_translation_mm") cfg.initial_translation_mm = as_double(v, key);
        else if (k == "restarts") cfg.restarts = as_int(v, key);
        else if (k == "restart_jitter_deg") cfg.restart_jitter_deg = as_double(v, key);
        else if (k == "symmetric") cfg.symmetric = as_bool(v, key);
        else if (k == "coarse_to_fine") cfg.coarse_to_fine = as_bool(v, key);
        else if (k == "accept_residual_px") cfg.accept_residual_px = as_double(v, key);
        else unknown_key("registration", k);
    }
    cfg.validate();
}

void apply_morph_overrides(MorphConfig& cfg, const Json& doc) {
    require_object(doc, "morph");
    for (const auto& [k, v] : doc.items()) {
        const std::string key = "morph." + k;
        if (k == "max_iterations") cfg.max_iterations = as_int(v, key);
        else if (k == "tolerance_mm") cfg.tolerance_mm = as_double(v, key);
        else if (k == "step_fraction") cfg.step_fraction = as_double(v, key);
        else if (k == "smoothing_lambda") cfg.smoothing_lambda = as_double(v, key);
        else if (k == "smoothing_iterations") cfg.smoothing_iterations = as_int(v, key);
        else if (k == "influence_radius_mm") cfg.influence_radius_mm = as_double(v, key);
        else if (k == "rim_distance_px") cfg.rim_distance_px = as_double(v, key);
        else if (k == "outlier_factor") cfg.outlier_factor = as_double(v, key);
        else if (k == "outlier_floor_px") cfg.outlier_floor_px = as_double(v, key);
        else if (k == "prefit") cfg.prefit = as_bool(v, key);
        else if (k == "scale_min") cfg.scale_min = as_double(v, key);
        else if (k == "scale_max") cfg.scale_max = as_double(v, key);
        else if (k == "scale_tolerance") cfg.scale_tolerance = as_double(v, key);
        else unknown_key("morph", k);
    }
    cfg.validate();
}

SynthConfig synth_config_from_json(const Json& doc, const fs::path& base_dir) {
    require_object(doc, "synth config");
    SynthConfig cfg;
    if (!doc.contains("template")) throw ConfigError("synth config: missing field 'template'");
    for (const auto& [k, v] : doc.items()) {
        if (k == "case_id") cfg.case_id = as_string(v, k);
        else if (k == "template") cfg.template_source = as_string(v, k);
        else if (k == "scale") cfg.scale = as_double(v, k);
        else if (k == "resolution") cfg.resolution_px = as_int(v, k);
        else if (k == "seed") cfg.seed = as_seed(v, k);
        else if (k == "isocenter_mm") cfg.isocenter_mm = as_double(v, k);
        else if (k == "rotation_deg") cfg.rotation_deg = as_vec3(v, k);
        else if (k == "offset_mm") cfg.offset_mm = as_vec3(v, k);
        else if (k == "noise") {
            require_object(v, "noise");
            for (const auto& [nk, nv] : v.items()) {
                if (nk == "enabled") cfg.noise.enabled = as_bool(nv, "noise.enabled");
                else if (nk == "probability") cfg.noise.probability = as_double(nv, "noise.probability");
                else unknown_key("noise", nk);
            }
        } else if (k == "init_perturbation") {
            require_object(v, "init_perturbation");
            for (const auto& [pk, pv] : v.items()) {
                if (pk == "rotation_deg") cfg.init_rotation_deg = as_double(pv, "init_perturbation.rotation_deg");
                else if (pk == "translation_mm") cfg.init_translation_mm = as_double(pv, "init_perturbation.translation_mm");
                else unknown_key("init_perturbation", pk);
            }
        } else if (k == "registration") {
            RegistrationConfig check;
            apply_registration_overrides(check, v);
            cfg.registration = v;
        } else if (k == "morph") {
            MorphConfig check;
            apply_morph_overrides(check, v);
            cfg.morph = v;
        } else {
            unknown_key("", k);
        }
    }
    if (!(cfg.scale > 0.0)) throw ConfigError("config field 'scale' must be positive");
    if (cfg.resolution_px < 16) throw ConfigError("config field 'resolution' must be at least 16");
    if (!(cfg.isocenter_mm > 0.0)) throw ConfigError("config field 'isocenter_mm' must be positive");
    if (!(cfg.noise.probability >= 0.0 && cfg.noise.probability <= 1.0)) {
        throw ConfigError("config field 'noise.probability' must be in [0, 1]");
    }
    if (!(cfg.init_rotation_deg >= 0.0) || !(cfg.init_translation_mm >= 0.0)) {
        throw ConfigError("config field 'init_perturbation' bounds must be nonnegative");
    }
    if (cfg.template_source.rfind("builtin:", 0) != 0) {
        cfg.template_source = under(base_dir, cfg.template_source).string();
    }
    if (cfg.case_id.empty()) {
        std::ostringstream id;
        id << "case_seed" << cfg.seed;
        cfg.case_id = id.str();
    }
    return cfg;
}

CaseConfig case_config_from_json(const Json& doc, const fs::path& case_dir) {
    require_object(doc, "case config");
    CaseConfig cfg;
    cfg.case_id = case_dir.filename().string();
    if (cfg.case_id.empty()) cfg.case_id = case_dir.parent_path().filename().string();
    cfg.template_path = case_dir / "template.stl";
    if (fs::exists(case_dir / "truth.stl")) cfg.truth_path = case_dir / "truth.stl";
    if (fs::exists(case_dir / "initial_pose.json")) cfg.initial_pose_path = case_dir / "initial_pose.json";
    const auto names = view_names();
    for (std::size_t i = 0; i < 4; ++i) cfg.camera_paths[i] = case_dir / "views" / names[i] / "camera.json";

    Json registration = Json::object();
    Json morph = Json::object();
    for (const auto& [k, v] : doc.items()) {
        if (k == "case_id") cfg.case_id = as_string(v, k);
        else if (k == "template") cfg.template_path = under(case_dir, as_string(v, k));
        else if (k == "truth") {
            if (v.is_null()) cfg.truth_path.reset();
            else cfg.truth_path = under(case_dir, as_string(v, k));
        } else if (k == "initial_pose") {
            if (v.is_null()) cfg.initial_pose_path.reset();
            else cfg.initial_pose_path = under(case_dir, as_string(v, k));
        } else if (k == "views") {
            require_object(v, "views");
            for (const auto& [vk, vv] : v.items()) {
                std::size_t i = 0;
                while (i < 4 && names[i] != vk) ++i;
                if (i == 4) unknown_key("views", vk);
                cfg.camera_paths[i] = under(case_dir, as_string(vv, "views." + vk));
            }
        } else if (k == "isocenter_mm") {
            cfg.isocenter_mm = as_double(v, k);
            if (!(cfg.isocenter_mm > 0.0)) throw ConfigError("config field 'isocenter_mm' must be positive");
        } else if (k == "seed") {
            cfg.seed = as_seed(v, k);
        } else if (k == "registration") {
            registration = v;
        } else if (k == "morph") {
            morph = v;
        } else if (k == "icp") {
            apply_icp_overrides(cfg.icp, v);
        } else if (k == "synthetic") {
            // Provenance of generated cases; not used by reconstruction.
        } else {
            unknown_key("", k);
        }
    }
    apply_registration_overrides(cfg.registration, registration);
    apply_morph_overrides(cfg.morph, morph);
    cfg.registration.seed = cfg.seed;
    cfg.icp.seed = cfg.seed;
    return cfg;
}

CaseConfig load_case_config(const fs::path& case_dir, const Json& overrides) {
    require_case_dir(case_dir);
    Json doc = Json::object();
    const fs::path file = case_dir / "case.json";
    if (fs::exists(file)) doc = read_json_file(file);
    if (!doc.is_object()) throw ConfigError(file.string() + ": case config must be a JSON object");
    if (!overrides.is_null() && !overrides.empty()) {
        require_object(overrides, "overrides");
        doc.merge_patch(overrides);
    }
    try {
        return case_config_from_json(doc, case_dir);
    } catch (const ConfigError& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
}

RunLog::RunLog(fs::path path, std::string command) : path_(std::move(path)), command_(std::move(command)) {}

void RunLog::record(const std::string& stage, const std::string& status, double duration_s,
                    const std::vector<std::string>& warnings, const std::string& message) {
    Json line{{"command", command_},
              {"stage", stage},
              {"status", status},
              {"duration_s", duration_s},
              {"warnings", warnings}};
    if (!message.empty()) line["message"] = message;
    std::lock_guard<std::mutex> lock(mutex_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to " + path_.string());
    out << line.dump() << '\n';
}

fs::path resolve_case_dir(const std::optional<fs::path>& explicit_dir, const std::string& case_id) {
    if (explicit_dir) return *explicit_dir;
    const char* root = std::getenv(kOutputRootEnv);
    if (root == nullptr || *root == '\0') {
        throw ConfigError(std::string("no case directory given: pass --case or set ") + kOutputRootEnv);
    }
    return fs::path(root) / case_id;
}

SyntheticCase cmd_synth(const SynthConfig& cfg, const fs::path& case_dir) {
    ensure_dir(case_dir);
    RunLog log(case_dir / kLogName, "synth");
    std::vector<std::string> warnings;

    const TriMesh tmpl = run_stage(log, "load_template", warnings,
                                   [&] { return load_template_source(cfg.template_source, fs::current_path()); });
    const Vec3 c = tmpl.centroid();
    const RigidTransform placed =
        RigidTransform::from_translation(Vec3(0.0, 0.0, cfg.isocenter_mm) + cfg.offset_mm - c);
    const RigidTransform object_pose =
        pose_from_parameters(placed, c, {cfg.rotation_deg.x(), cfg.rotation_deg.y(), cfg.rotation_deg.z(), 0, 0, 0});

    SyntheticCase sc = run_stage(log, "render", warnings, [&] {
        const Camera cam = Camera::with_resolution(cfg.resolution_px);
        NoiseConfig noise = cfg.noise;
        noise.seed = cfg.seed;
        return generate_synthetic_case(tmpl, cfg.scale, {cam, cam, cam, cam}, object_pose, noise, cfg.isocenter_mm);
    });
    sc.case_id = cfg.case_id;
    sc.template_path = (case_dir / "template.stl").string();
    sc.truth_path = (case_dir / "truth.stl").string();

    run_stage(log, "write", warnings, [&] {
        save_mesh(sc.template_mesh, sc.template_path);
        save_mesh(sc.truth_mesh, sc.truth_path);

        Rng rng(cfg.seed);
        std::array<double, 6> p{};
        for (int i = 0; i < 3; ++i) p[i] = rng.uniform(-cfg.init_rotation_deg, cfg.init_rotation_deg);
        for (int i = 3; i < 6; ++i) p[i] = rng.uniform(-cfg.init_translation_mm, cfg.init_translation_mm);
        write_json_file(pose_to_json(pose_from_parameters(object_pose, c, p)), case_dir / "initial_pose.json");

        Json views = Json::object();
        for (const auto& v : sc.views) {
            const std::string name = view_dir_name(v.view);
            const fs::path dir = case_dir / "views" / name;
            ensure_dir(dir);
            write_json_file(camera_to_json(v.camera), dir / "camera.json");
            write_pgm(v.mask, dir / "mask.pgm");
            write_json_file(contour_to_json(v.contour), dir / "contour.json");
            write_json_file(pose_to_json(v.pose), dir / "pose_true.json");
            views[name] = (fs::path("views") / name / "camera.json").generic_string();
            if (v.contour.fragmented) warnings.push_back("view " + name + ": mask has several components");
        }
        const Json case_doc{{"case_id", cfg.case_id},
                            {"template", "template.stl"},
                            {"truth", "truth.stl"},
                            {"initial_pose", "initial_pose.json"},
                            {"views", views},
                            {"isocenter_mm", cfg.isocenter_mm},
                            {"seed", cfg.seed},
                            {"registration", cfg.registration},
                            {"morph", cfg.morph},
                            {"synthetic",
                             {{"scale", cfg.scale},
                              {"resolution", cfg.resolution_px},
                              {"rotation_deg", {cfg.rotation_deg.x(), cfg.rotation_deg.y(), cfg.rotation_deg.z()}},
                              {"offset_mm", {cfg.offset_mm.x(), cfg.offset_mm.y(), cfg.offset_mm.z()}},
                              {"noise", cfg.noise.enabled},
                              {"object_pose", pose_to_json(object_pose)}}}};
        write_json_file(case_doc, case_dir / "case.json");
    });
    return sc;
}

CaseResult cmd_reconstruct(const fs::path& case_dir, const Json& overrides) {
    require_case_dir(case_dir);
    RunLog log(case_dir / kLogName, "reconstruct");
    std::vector<std::string> warnings;
    auto timed = [&](const std::string& stage, auto&& body) {
        return run_stage(log, stage, warnings, body);
    };

    CaseResult out;
    const CaseConfig cfg = timed("config", [&] { return load_case_config(case_dir, overrides); });
    out.case_id = cfg.case_id;
    const TriMesh tmpl = timed("load_template", [&] { return load_mesh(cfg.template_path); });
    const std::vector<ViewTarget> views = timed("load_views", [&] {
        auto v = load_views(cfg, case_dir);
        for (const auto& t : v) {
            if (t.target.fragmented) warnings.push_back("view " + t.name + ": contour traced from a fragmented mask");
        }
        return v;
    });
    const RigidTransform init = timed("initial_pose", [&] {
        if (cfg.initial_pose_path) return load_pose(*cfg.initial_pose_path);
        warnings.push_back("no initial pose; template centroid placed at the isocenter");
        return RigidTransform::from_translation(Vec3(0.0, 0.0, cfg.isocenter_mm) - tmpl.centroid());
    });

    out.registration = timed("registration", [&] {
        auto r = register_multi_view(views, tmpl, init, cfg.registration);
        if (!r.converged) {
            std::ostringstream w;
            w << "registration not converged (mean residual " << r.residual_px << " px)";
            warnings.push_back(w.str());
        }
        return r;
    });
    out.morph = timed("morph", [&] {
        auto m = morph(tmpl, views, out.registration.pose, cfg.morph, cfg.registration);
        if (m.diverged) warnings.push_back("morph diverged; last mesh kept");
        else if (!m.converged) warnings.push_back("morph reached the iteration limit");
        return m;
    });

    timed("write", [&] {
        write_json_file(registration_to_json(cfg.case_id, out.registration), case_dir / "registration.json");
        save_mesh(out.morph.mesh, case_dir / "morphed.stl");

        std::ostringstream hist;
        hist << "iteration,contour_rms_mm\n";
        for (std::size_t i = 0; i < out.morph.history_mm.size(); ++i) {
            hist << i + 1 << ',' << format_double(out.morph.history_mm[i]) << '\n';
        }
        write_text(case_dir / "morph_history.csv", hist.str());

        std::ostringstream disp;
        disp << "vertex,dx_mm,dy_mm,dz_mm,magnitude_mm\n";
        double sq = 0.0, largest = 0.0;
        for (std::size_t v = 0; v < out.morph.displacements.size(); ++v) {
            const Vec3& d = out.morph.displacements[v];
            disp << v << ',' << format_double(d.x()) << ',' << format_double(d.y()) << ',' << format_double(d.z())
                 << ',' << format_double(d.norm()) << '\n';
            sq += d.squaredNorm();
            largest = std::max(largest, d.norm());
        }
        write_text(case_dir / "displacements.csv", disp.str());

        const double n = static_cast<double>(std::max<std::size_t>(out.morph.displacements.size(), 1));
        const Json summary{
            {"case_id", cfg.case_id},
            {"prefit",
             {{"enabled", cfg.morph.prefit},
              {"scale", out.morph.prefit.scale},
              {"residual_px", out.morph.prefit.residual_px},
              {"pose", pose_to_json(out.morph.prefit.pose)}}},
            {"pose", pose_to_json(out.morph.pose)},
            {"iterations", out.morph.iterations},
            {"converged", out.morph.converged},
            {"diverged", out.morph.diverged},
            {"history_mm", out.morph.history_mm},
            {"displacement_rms_mm", std::sqrt(sq / n)},
            {"displacement_max_mm", largest},
            {"vertex_count", out.morph.mesh.vertex_count()}};
        write_json_file(summary, case_dir / "morph_summary.json");
    });
    for (const char* name :
         {"registration.json", "morphed.stl", "morph_history.csv", "displacements.csv", "morph_summary.json"}) {
        out.artifacts.push_back(case_dir / name);
    }
    return out;
}

ErrorReport cmd_evaluate(const fs::path& case_dir, const Json& overrides) {
    require_case_dir(case_dir);
    RunLog log(case_dir / kLogName, "evaluate");
    std::vector<std::string> warnings;
    auto timed = [&](const std::string& stage, auto&& body) {
        return run_stage(log, stage, warnings, body);
    };

    const CaseConfig cfg = timed("config", [&] { return load_case_config(case_dir, overrides); });
    const TriMesh truth = timed("load_truth", [&] {
        const fs::path p = cfg.truth_path.value_or(case_dir / "truth.stl");
        if (!fs::exists(p)) throw StageError("no ground truth: " + p.string() + " does not exist");
        return load_mesh(p);
    });
    const TriMesh morphed = timed("load_morphed", [&] { return load_mesh(case_dir / "morphed.stl"); });

    const SpatialIndex index(truth);
    const IcpResult icp = timed("icp", [&] {
        auto r = icp_align(morphed, index, RigidTransform(), cfg.icp);
        if (!r.converged) warnings.push_back("ICP reached the iteration limit");
        return r;
    });
    const TriMesh aligned = transform_mesh(morphed, icp.transform);

    ErrorReport report = timed("errors", [&] { return error_report(vertex_surface_errors(aligned, index), cfg.case_id); });

    timed("write", [&] {
        const double diag = bounding_box(truth).diagonal();
        Json doc = report_to_json(report);
        doc["truth_diagonal_mm"] = diag;
        doc["rms_fraction_of_diagonal"] = report.rms_mm / diag;
        doc["largest_fraction_of_diagonal"] = report.largest_mm / diag;
        doc["icp"] = {{"iterations", icp.iterations},
                      {"converged", icp.converged},
                      {"mean_distance_mm", icp.mean_distance_mm},
                      {"transform", pose_to_json(icp.transform)}};
        write_json_file(doc, case_dir / "report.json");
        export_heatmap(aligned, report.distances, case_dir / "heatmap.ply", case_dir / "errors.csv");
    });
    return report;
}

CohortSummary cmd_cohort(const std::vector<fs::path>& case_dirs, const fs::path& output_dir,
                         std::vector<std::string>* warnings_out) {
    ensure_dir(output_dir);
    RunLog log(output_dir / kLogName, "cohort");
    std::vector<std::string> warnings;
    const CohortSummary summary = run_stage(log, "cohort", warnings, [&] {
        std::vector<CohortRow> rows;
        for (const auto& dir : case_dirs) {
            const fs::path file = dir / "report.json";
            if (!fs::exists(file)) {
                warnings.push_back("skipped " + dir.string() + ": no report.json");
                continue;
            }
            const Json doc = read_json_file(file);
            try {
                rows.push_back({doc.at("case_id").get<std::string>(), doc.at("rms_mm").get<double>(),
                                doc.at("largest_mm").get<double>()});
            } catch (const Json::exception& e) {
                throw FormatError(file.string() + ": " + e.what());
            }
        }
        if (warnings_out) *warnings_out = warnings;
        if (rows.empty()) throw StageError("no evaluated cases among " + std::to_string(case_dirs.size()) + " given");
        auto s = summarize_cohort(rows);
        write_cohort_csv(s, output_dir / "cohort.csv");
        write_json_file(cohort_to_json(s), output_dir / "cohort.json");
        return s;
    });
    return summary;
}

KinematicsError cmd_kinematics(const fs::path& recon_csv, const fs::path& truth_csv, const fs::path& output_dir) {
    ensure_dir(output_dir);
    RunLog log(output_dir / kLogName, "kinematics");
    std::vector<std::string> warnings;
    return run_stage(log, "compare", warnings, [&] {
        const KinematicsTrace recon = read_trace_csv(recon_csv);
        const KinematicsTrace truth = read_trace_csv(truth_csv);
        const KinematicsError err = compare_traces(recon, truth);
        Json doc = kinematics_error_to_json(err);
        doc["reconstructed"] = recon_csv.string();
        doc["truth"] = truth_csv.string();
        write_json_file(doc, output_dir / "kinematics_error.json");
        write_difference_csv(recon, err, output_dir / "kinematics_diff.csv");
        return err;
    });
}

std::array<Contour, 4> cmd_import_masks(const std::map<std::string, fs::path>& masks, const fs::path& case_dir,
                                        std::vector<std::string>* warnings_out) {
    const auto names = view_names();
    std::vector<std::string> missing;
    for (const auto& n : names) {
        if (!masks.count(n)) missing.push_back(n);
    }
    for (const auto& [k, v] : masks) {
        if (std::find(names.begin(), names.end(), k) == names.end()) {
            throw ConfigError("unknown view '" + k + "' (expected ap, ml, rot+45, rot-45)");
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw ConfigError("missing mask for view(s): " + list);
    }

    ensure_dir(case_dir);
    RunLog log(case_dir / kLogName, "import-masks");
    std::vector<std::string> warnings;
    std::array<Contour, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string& name = names[i];
        out[i] = run_stage(log, "import_" + name, warnings, [&] {
            const Mask mask = import_mask(masks.at(name));
            if (mask.count() == 0) throw StageError("mask for view " + name + " is empty: " + masks.at(name).string());
            Contour c = extract_contour(mask);
            if (c.fragmented) {
                warnings.push_back("view " + name + ": mask has several components; largest used");
                if (warnings_out) warnings_out->push_back(warnings.back());
            }
            const fs::path dir = case_dir / "views" / name;
            ensure_dir(dir);
            write_pgm(mask, dir / "mask.pgm");
            write_json_file(contour_to_json(c), dir / "contour.json");
            return c;
        });
    }
    return out;
}

}  // namespace implant
