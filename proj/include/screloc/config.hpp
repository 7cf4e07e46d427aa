#pragma once

#include "screloc/encoder.hpp"
#include "screloc/pose_solver.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace screloc {

/// Flat `key=value` text, one pair per line, '#' comments. Sorted keys keep
/// the serialized form stable.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string serialize_key_values(const KeyValues& kv);
KeyValues load_key_values(const std::string& path);

std::string format_double(double v);  // round-trippable %.17g

/// Synthetic data recipe: one fixed scene, poses drawn above it.
struct SynthSpec {
    std::uint64_t scene_seed = 1;
    std::uint64_t pose_seed = 2;
    double extent = 100.0;
    std::size_t buildings = 18;
    std::size_t scan_count = 20;
    std::size_t ray_count = 6000;
    double alt_min = 14.0;
    double alt_max = 26.0;
    double xy_span = 30.0;  // poses drawn from [-xy_span, xy_span]^2
    double max_range = 120.0;
    bool randomize_yaw = true;
};

struct TrainBudget {
    std::size_t epochs = 60;
    std::size_t batch = 8;
    double lr = 0.002;
    std::uint64_t shuffle_seed = 0;
};

struct RunConfig {
    int config_version = 1;
    std::string preset = "desk";        // desk | full
    std::uint64_t seed = 0;
    std::string data_source = "synth";  // synth | files
    SynthSpec synth;
    std::string scan_dir;  // files mode: directory of .mlsc scans
    std::string pose_csv;  // files mode: ground-truth pose table
    TrainBudget train;
    RansacConfig ransac;
    std::size_t bench_max_tokens = 16384;
    std::size_t bench_repeats = 3;
};

/// Rejects unknown keys, bad values, version mismatches, and configs that
/// mix the synthetic recipe with on-disk scan paths.
RunConfig parse_run_config(const KeyValues& kv);
KeyValues to_key_values(const RunConfig& rc);
RunConfig load_run_config(const std::string& path);

ModelConfig model_for_preset(const std::string& preset);

/// Model hyperparameters as key=values, for embedding in checkpoints.
KeyValues model_to_key_values(const ModelConfig& cfg);
ModelConfig model_from_key_values(const KeyValues& kv);

}  // namespace screloc
