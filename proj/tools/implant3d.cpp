// implant3d: command-line front end for the reconstruction pipeline.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "implant/error.hpp"
#include "implant/kinematics.hpp"
#include "implant/pipeline.hpp"
#include "implant/serialization.hpp"

using namespace implant;

namespace {

std::mutex g_print;

void report_error(const std::string& context, const std::exception& e) {
    std::lock_guard<std::mutex> lock(g_print);
    std::cerr << "error";
    if (!context.empty()) std::cerr << " [" << context << "]";
    std::cerr << ": " << e.what() << '\n';
}

fs::path default_output_dir() {
    const char* root = std::getenv(kOutputRootEnv);
    return (root && *root) ? fs::path(root) : fs::current_path();
}

Json read_overrides(const std::string& path) { return path.empty() ? Json::object() : read_json_file(path); }

// Runs `work` on each case with up to `jobs` worker threads; returns the
// largest exit code seen.
template <typename Work>
int for_each_case(const std::vector<std::string>& cases, int jobs, Work work) {
    std::atomic<std::size_t> next{0};
    std::atomic<int> worst{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cases.size(); i = next++) {
            int code = kExitOk;
            try {
                work(fs::path(cases[i]));
            } catch (const std::exception& e) {
                report_error(cases[i], e);
                code = exit_code_for(e);
            }
            int seen = worst.load();
            while (code > seen && !worst.compare_exchange_weak(seen, code)) {
            }
        }
    };
    const int n = std::clamp(jobs, 1, static_cast<int>(cases.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return worst.load();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reconstruct implant meshes from four calibrated silhouettes and evaluate them."};
    app.require_subcommand(1);
    app.footer(std::string("Exit codes: 0 ok, 2 config error, 3 stage error, 4 I/O error.\n") + kOutputRootEnv +
               " sets the default output root.");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic case from a template");
    std::string synth_config, synth_template, synth_case_id;
    std::optional<std::string> synth_case;
    std::optional<double> synth_scale;
    std::optional<std::uint64_t> synth_seed;
    std::optional<int> synth_resolution;
    synth->add_option("--config", synth_config, "Synthetic case JSON");
    synth->add_option("--case", synth_case, "Output case directory");
    synth->add_option("--template", synth_template, "Template STL or builtin:femoral / builtin:condyle");
    synth->add_option("--case-id", synth_case_id, "Case identifier");
    synth->add_option("--scale", synth_scale, "Truth scale factor");
    synth->add_option("--seed", synth_seed, "Random seed");
    synth->add_option("--resolution", synth_resolution, "Detector resolution in pixels (square)");

    // import-masks
    auto* import = app.add_subcommand("import-masks", "Threshold masks and extract contours into a case");
    std::string import_case;
    std::vector<std::string> import_masks;
    import->add_option("--case", import_case, "Case directory")->required();
    import->add_option("--mask", import_masks, "VIEW=FILE, one per view (ap, ml, rot+45, rot-45)")->required();

    // reconstruct / evaluate
    std::vector<std::string> recon_cases, eval_cases;
    std::string recon_config, eval_config;
    int recon_jobs = 1, eval_jobs = 1;
    std::optional<std::uint64_t> recon_seed, eval_seed;
    auto* recon = app.add_subcommand("reconstruct", "Register and morph the template to the case contours");
    recon->add_option("--case", recon_cases, "Case directory (repeatable)")->required();
    recon->add_option("--config", recon_config, "JSON overrides merged into case.json");
    recon->add_option("--jobs", recon_jobs, "Cases processed in parallel")->check(CLI::PositiveNumber);
    recon->add_option("--seed", recon_seed, "Random seed");
    auto* eval = app.add_subcommand("evaluate", "ICP-align the reconstruction to the truth and report errors");
    eval->add_option("--case", eval_cases, "Case directory (repeatable)")->required();
    eval->add_option("--config", eval_config, "JSON overrides merged into case.json");
    eval->add_option("--jobs", eval_jobs, "Cases processed in parallel")->check(CLI::PositiveNumber);
    eval->add_option("--seed", eval_seed, "Random seed (ICP subsampling)");

    // cohort
    auto* cohort = app.add_subcommand("cohort", "Summarize evaluated cases");
    std::vector<std::string> cohort_cases;
    std::string cohort_output;
    cohort->add_option("--case", cohort_cases, "Case directory (repeatable)")->required();
    cohort->add_option("--output", cohort_output, "Output directory");

    // kinematics
    auto* kin = app.add_subcommand("kinematics", "Compare kinematic traces, or reduce frame poses to a trace");
    std::string kin_recon, kin_truth, kin_output, kin_frames, kin_trace;
    kin->add_option("--recon", kin_recon, "Reconstructed-model trace CSV");
    kin->add_option("--truth", kin_truth, "Ground-truth trace CSV");
    kin->add_option("--output", kin_output, "Output directory");
    kin->add_option("--frames", kin_frames, "Frame poses JSON to reduce");
    kin->add_option("--trace", kin_trace, "Trace CSV written from --frames");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*synth) {
            Json doc = synth_config.empty() ? Json::object() : read_json_file(synth_config);
            if (!doc.is_object()) throw ConfigError("synth config must be a JSON object");
            if (!synth_template.empty()) doc["template"] = synth_template;
            if (!synth_case_id.empty()) doc["case_id"] = synth_case_id;
            if (synth_scale) doc["scale"] = *synth_scale;
            if (synth_seed) doc["seed"] = *synth_seed;
            if (synth_resolution) doc["resolution"] = *synth_resolution;
            if (!doc.contains("case_id") && synth_case) doc["case_id"] = fs::path(*synth_case).filename().string();
            const fs::path base = synth_config.empty() ? fs::current_path() : fs::path(synth_config).parent_path();
            const SynthConfig cfg = synth_config_from_json(doc, base);
            const fs::path dir = resolve_case_dir(synth_case ? std::optional<fs::path>(*synth_case) : std::nullopt,
                                                  cfg.case_id);
            const SyntheticCase sc = cmd_synth(cfg, dir);
            std::cout << sc.case_id << ": wrote " << dir.string() << " (scale " << sc.scale << ")\n";
            return kExitOk;
        }
        if (*import) {
            std::map<std::string, fs::path> masks;
            for (const auto& m : import_masks) {
                const auto eq = m.find('=');
                if (eq == std::string::npos || eq == 0 || eq + 1 == m.size()) {
                    throw ConfigError("--mask expects VIEW=FILE, got '" + m + "'");
                }
                if (!masks.emplace(m.substr(0, eq), m.substr(eq + 1)).second) {
                    throw ConfigError("mask for view '" + m.substr(0, eq) + "' given twice");
                }
            }
            std::vector<std::string> warnings;
            cmd_import_masks(masks, import_case, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
            std::cout << "imported 4 masks into " << import_case << '\n';
            return kExitOk;
        }
        if (*recon) {
            Json overrides = read_overrides(recon_config);
            if (recon_seed) overrides["seed"] = *recon_seed;
            return for_each_case(recon_cases, recon_jobs, [&](const fs::path& dir) {
                const CaseResult r = cmd_reconstruct(dir, overrides);
                std::lock_guard<std::mutex> lock(g_print);
                std::cout << r.case_id << ": registration " << r.registration.residual_px << " px"
                          << (r.registration.converged ? "" : " (not converged)") << ", scale " << r.morph.prefit.scale
                          << ", morph " << r.morph.iterations << " iterations"
                          << (r.morph.converged ? "" : (r.morph.diverged ? " (diverged)" : " (not converged)")) << '\n';
            });
        }
        if (*eval) {
            Json overrides = read_overrides(eval_config);
            if (eval_seed) overrides["seed"] = *eval_seed;
            return for_each_case(eval_cases, eval_jobs, [&](const fs::path& dir) {
                const ErrorReport r = cmd_evaluate(dir, overrides);
                std::lock_guard<std::mutex> lock(g_print);
                std::cout << r.case_id << ": rms " << r.rms_mm << " mm, largest " << r.largest_mm << " mm\n";
            });
        }
        if (*cohort) {
            std::vector<fs::path> dirs(cohort_cases.begin(), cohort_cases.end());
            std::vector<std::string> warnings;
            const fs::path out = cohort_output.empty() ? default_output_dir() : fs::path(cohort_output);
            const CohortSummary s = cmd_cohort(dirs, out, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
            std::printf("%zu cases: rms %.2f ± %.2f mm, largest %.2f ± %.2f mm\n", s.rows.size(), s.rms.mean, s.rms.std,
                        s.largest.mean, s.largest.std);
            return kExitOk;
        }
        if (*kin) {
            if (!kin_frames.empty()) {
                if (kin_trace.empty()) throw ConfigError("--frames needs --trace for the output CSV");
                const KinematicsTrace t = reduce_trace(frames_from_json(read_json_file(kin_frames)));
                write_trace_csv(t, kin_trace);
                std::size_t flagged = 0;
                for (bool g : t.gimbal) flagged += g ? 1 : 0;
                if (flagged) std::cerr << "warning: " << flagged << " gimbal-degenerate frame(s) carried from neighbors\n";
                std::cout << "wrote " << t.size() << " frames to " << kin_trace << '\n';
                return kExitOk;
            }
            if (kin_recon.empty() || kin_truth.empty()) throw ConfigError("kinematics needs --recon and --truth");
            const fs::path out = kin_output.empty() ? default_output_dir() : fs::path(kin_output);
            const KinematicsError e = cmd_kinematics(kin_recon, kin_truth, out);
            std::printf("translation %.2f ± %.2f mm, axial rotation %.2f ± %.2f deg\n", e.translation_mean_mm,
                        e.translation_std_mm, e.rotation_mean_deg, e.rotation_std_deg);
            return kExitOk;
        }
    } catch (const std::exception& e) {
        report_error("", e);
        return exit_code_for(e);
    }
    return kExitOk;
}
