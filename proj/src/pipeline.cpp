#include "screloc/pipeline.hpp"

#include "screloc/pose_solver.hpp"
#include "screloc/simulator.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>

namespace fs = std::filesystem;

namespace screloc {
namespace {

constexpr double kPi = 3.14159265358979323846;

std::string scan_id_for(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "scan_%04zu", index);
    return buf;
}

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot write " + path);
    return out;
}

void write_pose_fields(std::ostream& out, const Pose& pose) {
    const Eigen::Quaterniond q(pose.rotation);
    for (int a = 0; a < 3; ++a) out << ',' << format_double(pose.translation[a]);
    out << ',' << format_double(q.w()) << ',' << format_double(q.x()) << ',' << format_double(q.y()) << ','
        << format_double(q.z());
}

Pose random_sensor_pose(std::mt19937_64& rng, const SynthSpec& spec) {
    std::uniform_real_distribution<double> xy(-spec.xy_span, spec.xy_span);
    std::uniform_real_distribution<double> alt(spec.alt_min, spec.alt_max);
    std::uniform_real_distribution<double> yaw(0.0, 2.0 * kPi);
    const double x = xy(rng);
    const double y = xy(rng);
    const double z = alt(rng);
    Pose pose = yaw_rotation(spec.randomize_yaw ? yaw(rng) : 0.0, z);
    pose.translation.x() = x;
    pose.translation.y() = y;
    return pose;
}

SensorModel sensor_for(const SynthSpec& spec) {
    SensorModel sensor;
    sensor.ray_count = spec.ray_count;
    sensor.max_range = spec.max_range;
    return sensor;
}

// Every command leaves the resolved settings next to its outputs so the run
// can be repeated exactly.
void write_config_snapshot(const RunConfig& rc, const std::string& out_dir) {
    std::ofstream out((fs::path(out_dir) / "config.txt").string());
    if (!out) throw std::invalid_argument("cannot write config snapshot in " + out_dir);
    out << serialize_key_values(to_key_values(rc));
}

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

Dataset make_dataset(const RunConfig& rc) {
    Dataset ds;
    if (rc.data_source == "synth") {
        const SyntheticScene scene = synth_scene(rc.synth.scene_seed, rc.synth.extent, rc.synth.buildings);
        const SensorModel sensor = sensor_for(rc.synth);
        std::mt19937_64 rng(rc.synth.pose_seed);
        for (std::size_t i = 0; i < rc.synth.scan_count; ++i) {
            TrainSample s;
            s.pose = random_sensor_pose(rng, rc.synth);
            s.scan = simulate_scan(scene, sensor, s.pose);
            ds.ids.push_back(scan_id_for(i));
            ds.samples.push_back(std::move(s));
        }
        return ds;
    }

    const std::vector<PoseRecord> poses = load_poses_csv(rc.pose_csv);
    if (poses.empty()) throw std::invalid_argument("dataset: pose table " + rc.pose_csv + " is empty");
    std::set<std::string> seen;
    std::vector<std::size_t> order(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) {
        if (!seen.insert(poses[i].scan_id).second)
            throw std::invalid_argument("dataset: duplicate scan id " + poses[i].scan_id);
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return poses[a].scan_id < poses[b].scan_id; });
    for (const std::size_t i : order) {
        TrainSample s;
        s.pose = poses[i].pose;
        s.scan = load_scan((fs::path(rc.scan_dir) / (poses[i].scan_id + ".mlsc")).string());
        ds.ids.push_back(poses[i].scan_id);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

TrainOutcome cmd_train(const RunConfig& rc, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_snapshot(rc, out_dir);
    const Dataset ds = make_dataset(rc);
    const ModelConfig model = model_for_preset(rc.preset);
    NamedTensors weights = init_weights(model, rc.seed);

    TrainOutcome outcome;
    outcome.loss_csv_path = (fs::path(out_dir) / "loss.csv").string();
    std::ofstream loss_csv = open_csv(outcome.loss_csv_path);
    loss_csv << "epoch,mean_loss\n";

    TrainConfig tc;
    tc.adam.lr = rc.train.lr;
    tc.epochs = rc.train.epochs;
    tc.batch_size = rc.train.batch;
    tc.shuffle_seed = rc.train.shuffle_seed;
    const std::vector<EpochStats> stats = train(weights, model, ds.samples, tc, [&](const EpochStats& es) {
        loss_csv << es.epoch << ',' << format_double(es.mean_loss) << '\n';
    });
    loss_csv.close();

    outcome.final_loss = stats.back().mean_loss;
    outcome.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(outcome.checkpoint_path, {model_to_key_values(model), weights});
    return outcome;
}

EvalReport cmd_eval(const RunConfig& rc, const std::string& checkpoint_path, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_snapshot(rc, out_dir);
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const ModelConfig model = model_from_key_values(ck.config);
    const Dataset ds = make_dataset(rc);
    if (ds.samples.empty()) throw std::invalid_argument("eval: the dataset is empty");

    EvalReport report;
    report.trajectory_csv_path = (fs::path(out_dir) / "trajectory.csv").string();
    std::ofstream csv = open_csv(report.trajectory_csv_path);
    csv << "scan_id,est_tx,est_ty,est_tz,est_qw,est_qx,est_qy,est_qz,"
           "gt_tx,gt_ty,gt_tz,gt_qw,gt_qx,gt_qy,gt_qz,pos_err_m,rot_err_deg\n";

    std::vector<double> pos_errs, rot_errs;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        EvalRow row;
        row.scan_id = ds.ids[i];
        row.gt = ds.samples[i].pose;
        try {
            const CorrespondenceSet corr = forward(ds.samples[i].scan, model, ck.tensors);
            RansacConfig rcfg = rc.ransac;
            rcfg.seed = rc.seed;
            const PoseEstimate est = ransac_pose(corr, rcfg);
            row.est = est.pose;
            row.inliers = est.inlier_count;
            const PoseError err = pose_error(row.est, row.gt);
            row.pos_err_m = err.position_m;
            row.rot_err_deg = err.orientation_deg;
            row.ok = true;
        } catch (const NoConsensusError&) {
            row.ok = false;
        } catch (const DegenerateGeometryError&) {
            row.ok = false;
        }

        csv << row.scan_id;
        if (row.ok) {
            write_pose_fields(csv, row.est);
        } else {
            for (int a = 0; a < 7; ++a) csv << ",nan";
        }
        write_pose_fields(csv, row.gt);
        if (row.ok)
            csv << ',' << format_double(row.pos_err_m) << ',' << format_double(row.rot_err_deg) << '\n';
        else
            csv << ",nan,nan\n";

        if (row.ok) {
            pos_errs.push_back(row.pos_err_m);
            rot_errs.push_back(row.rot_err_deg);
        } else {
            ++report.failures;
        }
        report.rows.push_back(std::move(row));
    }

    report.median_pos_err_m = median(pos_errs);
    report.median_rot_err_deg = median(rot_errs);
    if (!pos_errs.empty()) {
        double ps = 0.0, rs = 0.0;
        for (std::size_t i = 0; i < pos_errs.size(); ++i) {
            ps += pos_errs[i];
            rs += rot_errs[i];
        }
        report.mean_pos_err_m = ps / static_cast<double>(pos_errs.size());
        report.mean_rot_err_deg = rs / static_cast<double>(rot_errs.size());
    } else {
        report.mean_pos_err_m = std::numeric_limits<double>::quiet_NaN();
        report.mean_rot_err_deg = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

std::vector<BenchRow> cmd_bench(const RunConfig& rc, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_snapshot(rc, out_dir);
    constexpr int dim = 32, heads = 4, window_k = 8, bias_dim = 8, phi3_hidden = 16;
    const AttnWeights w = init_attn_weights(dim, heads, bias_dim, phi3_hidden, rc.seed);

    std::vector<std::size_t> sizes;
    for (std::size_t v = 1024; v <= rc.bench_max_tokens; v *= 2) sizes.push_back(v);
    if (sizes.empty()) sizes.push_back(std::max<std::size_t>(rc.bench_max_tokens, 2));

    std::vector<BenchRow> rows;
    std::mt19937_64 rng(rc.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> span(-50.0, 50.0);
    for (const std::size_t v : sizes) {
        FeatureSequence f(v, dim);
        for (std::size_t i = 0; i < v; ++i)
            for (int d = 0; d < dim; ++d) f(static_cast<Eigen::Index>(i), d) = gauss(rng);
        std::vector<Vec3> positions(v);
        for (Vec3& p : positions) p = Vec3(span(rng), span(rng), span(rng));

        BenchRow row;
        row.tokens = v;
        row.heads = heads;
        row.window_k = window_k;
        row.bound = static_cast<std::uint64_t>(2 * window_k + 1) * v * heads;

        ad::reset_dot_count();
        loswatt_layer(f, positions, w, heads, bias_dim, window_k, true, true, ad::Activation::Gelu);
        row.dot_count = ad::dot_count();

        const std::size_t repeats = std::max<std::size_t>(rc.bench_repeats, 1);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            loswatt_layer(f, positions, w, heads, bias_dim, window_k, true, true, ad::Activation::Gelu);
            const auto t1 = std::chrono::steady_clock::now();
            best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        row.time_ms = best;
        rows.push_back(row);
    }

    std::ofstream csv = open_csv((fs::path(out_dir) / "bench.csv").string());
    csv << "tokens,heads,window_k,dot_count,bound,time_ms\n";
    for (const BenchRow& r : rows)
        csv << r.tokens << ',' << r.heads << ',' << r.window_k << ',' << r.dot_count << ',' << r.bound << ','
            << format_double(r.time_ms) << '\n';
    return rows;
}

InvarianceReport cmd_invariance(const RunConfig& rc, const std::string& checkpoint_path, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_config_snapshot(rc, out_dir);
    InvarianceReport rep;
    std::mt19937_64 rng(rc.seed);
    std::uniform_real_distribution<double> span(-50.0, 50.0);
    std::uniform_real_distribution<double> yaw(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> dz(-10.0, 10.0);

    // Geometric tokens under yaw + altitude shifts, exact.
    for (int n = 0; n < 200; ++n) {
        const Vec3 a(span(rng), span(rng), span(rng));
        const Vec3 b(span(rng), span(rng), span(rng));
        const GeometricToken base = geometric_token(a, b);
        for (int t = 0; t < 20; ++t) {
            const Pose T = yaw_rotation(yaw(rng), dz(rng));
            const GeometricToken moved = geometric_token(T * a, T * b);
            rep.geo_token_max_diff = std::max({rep.geo_token_max_diff, std::abs(moved.range_xy - base.range_xy),
                                               std::abs(moved.elevation - base.elevation)});
        }
    }

    // One attention layer over a fixed token order, exact.
    constexpr int dim = 16, heads = 2, bias_dim = 8, hidden = 16, window_k = 4;
    const int v = 256;
    const AttnWeights w = init_attn_weights(dim, heads, bias_dim, hidden, rc.seed + 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    FeatureSequence f(v, dim);
    for (int i = 0; i < v; ++i)
        for (int d = 0; d < dim; ++d) f(i, d) = gauss(rng);
    std::vector<Vec3> positions(v);
    for (Vec3& p : positions) p = Vec3(span(rng), span(rng), span(rng));
    const FeatureSequence base_out =
        loswatt_layer(f, positions, w, heads, bias_dim, window_k, true, true, ad::Activation::Gelu);
    for (int t = 0; t < 20; ++t) {
        const Pose T = yaw_rotation(yaw(rng), dz(rng));
        std::vector<Vec3> moved(positions.size());
        for (std::size_t i = 0; i < positions.size(); ++i) moved[i] = T * positions[i];
        const FeatureSequence out =
            loswatt_layer(f, moved, w, heads, bias_dim, window_k, true, true, ad::Activation::Gelu);
        rep.layer_max_diff = std::max(rep.layer_max_diff, (out - base_out).cwiseAbs().maxCoeff());
    }

    // Collapse probe: identical tokens in, softmax on and off.
    FeatureSequence constant_f(v, dim);
    Eigen::RowVectorXd one_row(dim);
    for (int d = 0; d < dim; ++d) one_row(d) = gauss(rng);
    for (int i = 0; i < v; ++i) constant_f.row(i) = one_row;
    auto row_variance = [](const FeatureSequence& x) {
        const Eigen::RowVectorXd mean = x.colwise().mean();
        return (x.rowwise() - mean).squaredNorm() / static_cast<double>(x.size());
    };
    rep.collapse_variance = row_variance(
        loswatt_layer(constant_f, positions, w, heads, bias_dim, window_k, true, true, ad::Activation::Gelu));
    rep.softmax_free_variance = row_variance(
        loswatt_layer(constant_f, positions, w, heads, bias_dim, window_k, false, true, ad::Activation::Gelu));

    // Whole pipeline, empirical: re-voxelization makes this approximate.
    {
        RunConfig small = rc;
        small.data_source = "synth";
        small.synth.scan_count = 1;
        small.synth.ray_count = std::min<std::size_t>(rc.synth.ray_count, 2000);
        const Dataset ds = make_dataset(small);
        ModelConfig model = model_for_preset(rc.preset);
        NamedTensors weights;
        if (checkpoint_path.empty()) {
            weights = init_weights(model, rc.seed);
        } else {
            Checkpoint ck = load_checkpoint(checkpoint_path);
            model = model_from_key_values(ck.config);
            weights = std::move(ck.tensors);
        }
        const CorrespondenceSet base = forward(ds.samples[0].scan, model, weights);
        double sum = 0.0;
        std::size_t count = 0;
        for (int t = 0; t < 10; ++t) {
            const Pose T = yaw_rotation(yaw(rng), dz(rng));
            PointCloud movedScan;
            movedScan.points.reserve(ds.samples[0].scan.size());
            for (const Vec3& p : ds.samples[0].scan.points) movedScan.points.push_back(T * p);
            const CorrespondenceSet moved = forward(movedScan, model, weights);
            const Pose Tinv = invert_pose(T);
            for (const Correspondence& c : moved) {
                const Vec3 back = Tinv * c.local;
                double best_d = std::numeric_limits<double>::infinity();
                std::size_t best_i = 0;
                for (std::size_t i = 0; i < base.size(); ++i) {
                    const double d = (base[i].local - back).squaredNorm();
                    if (d < best_d) {
                        best_d = d;
                        best_i = i;
                    }
                }
                const double drift = (c.world - base[best_i].world).norm();
                rep.pipeline_drift_max = std::max(rep.pipeline_drift_max, drift);
                sum += drift;
                ++count;
            }
        }
        rep.pipeline_drift_mean = count ? sum / static_cast<double>(count) : 0.0;
    }

    rep.exact_ok = rep.geo_token_max_diff <= 1e-9 && rep.layer_max_diff <= 1e-6 && rep.collapse_variance <= 1e-12 &&
                   rep.softmax_free_variance > 1e-8;

    std::ofstream csv = open_csv((fs::path(out_dir) / "invariance.csv").string());
    csv << "metric,value\n";
    csv << "geo_token_max_diff," << format_double(rep.geo_token_max_diff) << '\n';
    csv << "layer_max_diff," << format_double(rep.layer_max_diff) << '\n';
    csv << "collapse_variance," << format_double(rep.collapse_variance) << '\n';
    csv << "softmax_free_variance," << format_double(rep.softmax_free_variance) << '\n';
    csv << "pipeline_drift_max," << format_double(rep.pipeline_drift_max) << '\n';
    csv << "pipeline_drift_mean," << format_double(rep.pipeline_drift_mean) << '\n';
    csv << "exact_ok," << (rep.exact_ok ? 1 : 0) << '\n';
    return rep;
}

SynthOutcome cmd_synth(const RunConfig& rc, const std::string& out_dir) {
    if (rc.data_source != "synth")
        throw std::invalid_argument("synth command needs the synth recipe, not on-disk data");
    fs::create_directories(out_dir);
    write_config_snapshot(rc, out_dir);
    const Dataset ds = make_dataset(rc);
    SynthOutcome outcome;
    std::vector<PoseRecord> poses;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const std::string path = (fs::path(out_dir) / (ds.ids[i] + ".mlsc")).string();
        save_scan(path, ds.samples[i].scan);
        outcome.scan_paths.push_back(path);
        poses.push_back({ds.ids[i], ds.samples[i].pose});
    }
    outcome.pose_csv_path = (fs::path(out_dir) / "poses.csv").string();
    save_poses_csv(outcome.pose_csv_path, poses);
    return outcome;
}

}  // namespace screloc
