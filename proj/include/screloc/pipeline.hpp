#pragma once

#include "screloc/config.hpp"
#include "screloc/io.hpp"
#include "screloc/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace screloc {

/// A loaded dataset: scans in the sensor frame plus ground-truth poses,
/// ordered by scan id.
struct Dataset {
    std::vector<std::string> ids;
    std::vector<TrainSample> samples;
};

/// Builds the dataset a command runs on, either simulated from the synth
/// recipe or loaded from disk.
Dataset make_dataset(const RunConfig& rc);

struct TrainOutcome {
    std::string checkpoint_path;
    std::string loss_csv_path;
    double final_loss = 0.0;
};

/// Trains from scratch and writes `model.ckpt` and `loss.csv` to out_dir.
TrainOutcome cmd_train(const RunConfig& rc, const std::string& out_dir);

struct EvalRow {
    std::string scan_id;
    bool ok = false;
    Pose est;
    Pose gt;
    double pos_err_m = 0.0;
    double rot_err_deg = 0.0;
    std::size_t inliers = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::size_t failures = 0;
    // over successful scans only; failures are counted, not averaged
    double median_pos_err_m = 0.0;
    double median_rot_err_deg = 0.0;
    double mean_pos_err_m = 0.0;
    double mean_rot_err_deg = 0.0;
    std::string trajectory_csv_path;
};

/// Runs the checkpointed model over the dataset, solves a pose per scan and
/// writes `trajectory.csv`. The checkpoint's embedded model config wins; the
/// run config only supplies data, seeds and solver settings.
EvalReport cmd_eval(const RunConfig& rc, const std::string& checkpoint_path, const std::string& out_dir);

struct BenchRow {
    std::size_t tokens = 0;
    int heads = 0;
    int window_k = 0;
    std::uint64_t dot_count = 0;
    std::uint64_t bound = 0;  // (2k+1) * tokens * heads
    double time_ms = 0.0;
};

/// Measures one attention layer at doubling token counts; writes `bench.csv`.
/// The timing column varies run to run, everything else is deterministic.
std::vector<BenchRow> cmd_bench(const RunConfig& rc, const std::string& out_dir);

struct InvarianceReport {
    double geo_token_max_diff = 0.0;       // exact: should be ~1e-16
    double layer_max_diff = 0.0;           // exact: fixed-order layer outputs
    double collapse_variance = 0.0;        // constant tokens + softmax layer
    double softmax_free_variance = 0.0;    // same layer, softmax removed
    double pipeline_drift_max = 0.0;       // empirical: full model, re-binned voxels
    double pipeline_drift_mean = 0.0;
    bool exact_ok = false;
};

/// Invariance test bench; writes `invariance.csv` with the numbers above.
/// The drift measurement uses the checkpoint when one is given, otherwise
/// seeded random weights.
InvarianceReport cmd_invariance(const RunConfig& rc, const std::string& checkpoint_path, const std::string& out_dir);

struct SynthOutcome {
    std::vector<std::string> scan_paths;
    std::string pose_csv_path;
};

/// Materializes the synth recipe as scan containers plus a pose table.
SynthOutcome cmd_synth(const RunConfig& rc, const std::string& out_dir);

double median(std::vector<double> values);

}  // namespace screloc
