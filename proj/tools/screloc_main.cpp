#include "screloc/pipeline.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <exception>

namespace {

screloc::RunConfig resolve_config(const std::string& config_path, const std::string& preset, bool preset_set,
                                  std::uint64_t seed, bool seed_set) {
    screloc::RunConfig rc;
    if (!config_path.empty()) rc = screloc::load_run_config(config_path);
    if (preset_set) rc.preset = preset;
    if (seed_set) rc.seed = seed;
    if (rc.preset != "desk" && rc.preset != "full") throw std::invalid_argument("preset must be desk or full");
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"map-free LiDAR relocalization toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string preset = "desk";
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string checkpoint;

    app.add_option("--config", config_path, "run configuration file (key=value lines)");
    CLI::Option* preset_opt = app.add_option("--preset", preset, "model preset")->check(CLI::IsMember({"desk", "full"}));
    CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed");
    app.add_option("--out", out_dir, "output directory");

    CLI::App* cmd_train = app.add_subcommand("train", "train a model and write a checkpoint");
    CLI::App* cmd_eval = app.add_subcommand("eval", "run a checkpoint over a dataset and solve poses");
    cmd_eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
    CLI::App* cmd_bench = app.add_subcommand("bench", "attention cost scaling benchmark");
    CLI::App* cmd_invariance = app.add_subcommand("invariance", "invariance and collapse test bench");
    std::string inv_checkpoint;
    cmd_invariance->add_option("--checkpoint", inv_checkpoint, "drift-test a trained model instead of random weights");
    CLI::App* cmd_synth = app.add_subcommand("synth", "materialize the synthetic dataset");

    CLI11_PARSE(app, argc, argv);

    try {
        const screloc::RunConfig rc =
            resolve_config(config_path, preset, preset_opt->count() > 0, seed, seed_opt->count() > 0);

        if (cmd_train->parsed()) {
            const screloc::TrainOutcome outcome = screloc::cmd_train(rc, out_dir);
            std::printf("checkpoint: %s\n", outcome.checkpoint_path.c_str());
            std::printf("loss curve: %s\n", outcome.loss_csv_path.c_str());
            std::printf("final mean loss: %.6f\n", outcome.final_loss);
        } else if (cmd_eval->parsed()) {
            const screloc::EvalReport report = screloc::cmd_eval(rc, checkpoint, out_dir);
            std::printf("trajectory: %s\n", report.trajectory_csv_path.c_str());
            std::printf("scans: %zu  failures: %zu\n", report.rows.size(), report.failures);
            std::printf("median position error: %.4f m\n", report.median_pos_err_m);
            std::printf("median orientation error: %.4f deg\n", report.median_rot_err_deg);
        } else if (cmd_bench->parsed()) {
            const auto rows = screloc::cmd_bench(rc, out_dir);
            std::printf("tokens  dot_count  bound  time_ms\n");
            for (const auto& r : rows)
                std::printf("%6zu  %9llu  %5llu  %.3f\n", r.tokens, static_cast<unsigned long long>(r.dot_count),
                            static_cast<unsigned long long>(r.bound), r.time_ms);
        } else if (cmd_invariance->parsed()) {
            const screloc::InvarianceReport rep = screloc::cmd_invariance(rc, inv_checkpoint, out_dir);
            std::printf("geo token max diff:     %.3e\n", rep.geo_token_max_diff);
            std::printf("layer max diff:         %.3e\n", rep.layer_max_diff);
            std::printf("collapse variance:      %.3e\n", rep.collapse_variance);
            std::printf("softmax-free variance:  %.3e\n", rep.softmax_free_variance);
            std::printf("pipeline drift max:     %.3e m\n", rep.pipeline_drift_max);
            std::printf("pipeline drift mean:    %.3e m\n", rep.pipeline_drift_mean);
            std::printf("exact checks: %s\n", rep.exact_ok ? "ok" : "FAILED");
            if (!rep.exact_ok) return 1;
        } else if (cmd_synth->parsed()) {
            const screloc::SynthOutcome outcome = screloc::cmd_synth(rc, out_dir);
            std::printf("wrote %zu scans and %s\n", outcome.scan_paths.size(), outcome.pose_csv_path.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
