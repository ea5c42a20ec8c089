#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "l2r/core.hpp"
#include "l2r/curriculum.hpp"
#include "l2r/distill.hpp"
#include "l2r/eval.hpp"
#include "l2r/io.hpp"
#include "l2r/mixing.hpp"
#include "l2r/rng.hpp"
#include "l2r/sampling.hpp"
#include "l2r/synth.hpp"

namespace l2r::cli {

namespace fs = std::filesystem;

inline constexpr const char* kConfigEnvVar = "L2R_CONFIG";

struct GlobalConfig {
    uint64_t seed = 0;
    int jobs = 1;
    std::optional<std::string> eval_config_path;
    // Fallback channel layouts for .bin files without a sidecar.
    std::vector<std::string> lidar_schema = default_lidar_schema();
    std::vector<std::string> radar_schema = default_radar_schema();
};

inline GlobalConfig load_global_config(const std::string& path) {
    const nlohmann::json j = detail::read_json_file(path);
    GlobalConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.jobs = j.value("jobs", cfg.jobs);
    if (j.contains("eval_config")) cfg.eval_config_path = j["eval_config"].get<std::string>();
    if (j.contains("lidar_schema")) cfg.lidar_schema = j["lidar_schema"].get<std::vector<std::string>>();
    if (j.contains("radar_schema")) cfg.radar_schema = j["radar_schema"].get<std::vector<std::string>>();
    if (cfg.jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
    for (const auto* schema : {&cfg.lidar_schema, &cfg.radar_schema})
        if (schema->size() < 3) throw std::invalid_argument("config: schemas need x,y,z channels");
    return cfg;
}

namespace detail_cli {

// Runs fn(0..n-1) on `jobs` threads. Work items must be independent; the
// first exception wins and is rethrown after all threads join.
inline void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    const int count = std::min<int>(jobs, static_cast<int>(n));
    threads.reserve(static_cast<size_t>(count));
    for (int t = 0; t < count; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

struct FrameFile {
    std::string stem;
    std::string path;
};

inline std::vector<FrameFile> list_bin_files(const std::string& dir) {
    std::vector<FrameFile> out;
    for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".bin")
            out.push_back({e.path().stem().string(), e.path().string()});
    }
    std::sort(out.begin(), out.end(),
              [](const FrameFile& a, const FrameFile& b) { return a.stem < b.stem; });
    return out;
}

// Shares: "1", "1/16", "1/2^4" or a decimal. halvings is set for exact
// powers of one half.
struct ParsedShare {
    double value = 1.0;
    std::optional<unsigned> halvings;
};

inline ParsedShare parse_share_string(const std::string& text) {
    ParsedShare out;
    const auto fail = [&] {
        throw std::invalid_argument("cannot parse share '" + text + "' (use 1/2^k, 1/N or a decimal)");
    };
    if (text.empty()) fail();
    const size_t slash = text.find('/');
    if (slash != std::string::npos) {
        if (text.substr(0, slash) != "1") fail();
        const std::string den_str = text.substr(slash + 1);
        uint64_t den = 0;
        const size_t caret = den_str.find('^');
        try {
            if (caret != std::string::npos) {
                const uint64_t base = std::stoull(den_str.substr(0, caret));
                const uint64_t exp = std::stoull(den_str.substr(caret + 1));
                if (base != 2 || exp > 62) fail();
                den = 1ull << exp;
            } else {
                den = std::stoull(den_str);
            }
        } catch (const std::exception&) {
            fail();
        }
        if (den == 0) fail();
        out.value = 1.0 / static_cast<double>(den);
        if ((den & (den - 1)) == 0) {
            unsigned h = 0;
            while ((1ull << h) < den) ++h;
            out.halvings = h;
        }
        return out;
    }
    try {
        size_t used = 0;
        out.value = std::stod(text, &used);
        if (used != text.size()) fail();
    } catch (const std::exception&) {
        fail();
    }
    if (out.value == 1.0) out.halvings = 0;
    return out;
}

// Applies `process(stem, cloud)` over a file or a directory of frames.
inline void for_each_cloud(const std::string& input, const std::string& output, int jobs,
                           std::optional<size_t> channels, Source fallback_source,
                           const std::vector<std::string>* fallback_schema,
                           const std::function<PointCloud(const std::string&, PointCloud)>& process) {
    if (fs::is_directory(input)) {
        fs::create_directories(output);
        const std::vector<FrameFile> files = list_bin_files(input);
        parallel_for(files.size(), jobs, [&](size_t i) {
            const PointCloud in =
                read_cloud_bin(files[i].path, channels, fallback_source, fallback_schema);
            const PointCloud out = process(files[i].stem, in);
            write_cloud_bin((fs::path(output) / (files[i].stem + ".bin")).string(), out);
        });
    } else {
        const PointCloud in = read_cloud_bin(input, channels, fallback_source, fallback_schema);
        const std::string stem = fs::path(input).stem().string();
        write_cloud_bin(output, process(stem, in));
    }
}

inline Range3D parse_range_string(const std::string& text) {
    std::array<double, 6> v{};
    size_t start = 0, idx = 0;
    while (idx < 6) {
        const size_t comma = text.find(',', start);
        const std::string tok = text.substr(start, comma == std::string::npos
                                                       ? std::string::npos
                                                       : comma - start);
        try {
            v[idx] = std::stod(tok);
        } catch (const std::exception&) {
            throw std::invalid_argument("cannot parse range '" + text +
                                        "' (use xmin,xmax,ymin,ymax,zmin,zmax)");
        }
        ++idx;
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (idx != 6)
        throw std::invalid_argument("range needs six values xmin,xmax,ymin,ymax,zmin,zmax");
    Range3D r{{v[0], v[2], v[4]}, {v[1], v[3], v[5]}};
    validate(r);
    return r;
}

inline SceneSpec read_scene_spec(const std::string& path) {
    const nlohmann::json j = l2r::detail::read_json_file(path);
    SceneSpec spec;
    if (j.contains("class_counts")) spec.class_counts = j["class_counts"].get<std::vector<int>>();
    if (j.contains("priors")) {
        spec.priors.clear();
        for (const auto& p : j["priors"]) {
            ClassPrior prior;
            prior.name = p.at("name").get<std::string>();
            prior.dims_mean = p.at("dims_mean").get<std::array<double, 3>>();
            if (p.contains("dims_sd")) prior.dims_sd = p["dims_sd"].get<std::array<double, 3>>();
            spec.priors.push_back(prior);
        }
    }
    spec.lidar_density = j.value("lidar_density", spec.lidar_density);
    spec.ground_density = j.value("ground_density", spec.ground_density);
    spec.radar_density = j.value("radar_density", spec.radar_density);
    spec.clutter_rate = j.value("clutter_rate", spec.clutter_rate);
    spec.rcs_mean = j.value("rcs_mean", spec.rcs_mean);
    spec.rcs_sd = j.value("rcs_sd", spec.rcs_sd);
    spec.doppler_sd = j.value("doppler_sd", spec.doppler_sd);
    spec.falloff_reference = j.value("falloff_reference", spec.falloff_reference);
    spec.ground_z = j.value("ground_z", spec.ground_z);
    spec.min_radar_lidar_ratio = j.value("min_radar_lidar_ratio", spec.min_radar_lidar_ratio);
    if (j.contains("extent")) {
        spec.extent.min = j["extent"].at("min").get<std::array<double, 3>>();
        spec.extent.max = j["extent"].at("max").get<std::array<double, 3>>();
    }
    return spec;
}

}  // namespace detail_cli

// Command-line entry point. Exit codes: 0 success, 1 runtime/I/O failure,
// 2 usage errors (unknown subcommand, bad arguments).
inline int run(int argc, const char* const* argv) {
    using detail_cli::parse_share_string;

    CLI::App app{"lidar-to-radar point cloud toolkit"};
    app.require_subcommand(0, 1);
    app.fallthrough(false);

    GlobalConfig config;
    if (const char* env = std::getenv(kConfigEnvVar)) {
        try {
            config = load_global_config(env);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }
    std::string config_path;
    app.add_option("--config", config_path, "global config JSON (seed, jobs, eval_config)");

    uint64_t seed = config.seed;
    int jobs = config.jobs;
    std::optional<size_t> channels;
    std::string channels_str;
    auto add_common = [&](CLI::App* cmd, bool with_channels = true) {
        cmd->add_option("--seed", seed, "global seed; per-frame seeds derive from it");
        cmd->add_option("--jobs", jobs, "parallel frames in directory mode")->check(CLI::Range(1, 1024));
        if (with_channels)
            cmd->add_option("--channels", channels_str,
                            "channel count for .bin files without a sidecar");
    };

    // --- gen-scene ---
    auto* gen = app.add_subcommand("gen-scene", "generate deterministic synthetic frames");
    std::string gen_spec_path, gen_out_dir;
    int gen_frames = 1;
    gen->add_option("--spec", gen_spec_path, "scene spec JSON");
    gen->add_option("--frames", gen_frames, "number of frames")->check(CLI::Range(1, 1000000));
    gen->add_option("--out-dir", gen_out_dir, "output directory")->required();
    add_common(gen, false);

    // --- dedup ---
    auto* dedup_cmd = app.add_subcommand("dedup", "drop bitwise-duplicate points");
    std::string dedup_in, dedup_out;
    dedup_cmd->add_option("input", dedup_in, ".bin file or directory")->required();
    dedup_cmd->add_option("output", dedup_out, "output file or directory")->required();
    add_common(dedup_cmd);

    // --- crop ---
    auto* crop_cmd = app.add_subcommand("crop", "crop points to an axis-aligned range");
    std::string crop_in, crop_out, crop_range_str;
    crop_cmd->add_option("input", crop_in, ".bin file or directory")->required();
    crop_cmd->add_option("output", crop_out, "output file or directory")->required();
    crop_cmd->add_option("--range", crop_range_str, "xmin,xmax,ymin,ymax,zmin,zmax (default: detector range)");
    add_common(crop_cmd);

    // --- thin-out ---
    auto* thin_cmd = app.add_subcommand("thin-out", "subsample a lidar cloud");
    std::string thin_method = "random", thin_share_str = "1/2", thin_radar, thin_in, thin_out_path;
    double thin_voxel = 1.0;
    thin_cmd->add_option("--method", thin_method, "random | knn | voxel")
        ->check(CLI::IsMember({"random", "knn", "voxel"}))
        ->required();
    thin_cmd->add_option("--share", thin_share_str, "kept fraction: 1/2^k, 1/N or decimal")->required();
    thin_cmd->add_option("--voxel-size", thin_voxel, "voxel edge length in meters (voxel method)");
    thin_cmd->add_option("--radar", thin_radar, "radar .bin file or directory (knn method)");
    thin_cmd->add_option("input", thin_in, "lidar .bin file or directory")->required();
    thin_cmd->add_option("output", thin_out_path, "output file or directory")->required();
    add_common(thin_cmd);

    // --- mix ---
    auto* mix_cmd = app.add_subcommand("mix", "merge radar and lidar clouds");
    std::string mix_radar, mix_lidar, mix_out;
    mix_cmd->add_option("radar", mix_radar, "radar .bin file or directory")->required();
    mix_cmd->add_option("lidar", mix_lidar, "lidar .bin file or directory")->required();
    mix_cmd->add_option("output", mix_out, "output file or directory")->required();
    add_common(mix_cmd);

    // --- pillarize ---
    auto* pillar_cmd = app.add_subcommand("pillarize", "bin a mixed cloud into pillars");
    std::string pillar_in, pillar_out, pillar_range_str;
    double pillar_size = 0.16;
    int pillar_max_points = 32;
    pillar_cmd->add_option("--pillar", pillar_size, "pillar edge length in meters");
    pillar_cmd->add_option("--max-points", pillar_max_points, "points kept per pillar")
        ->check(CLI::Range(1, 100000));
    pillar_cmd->add_option("--range", pillar_range_str, "xmin,xmax,ymin,ymax,zmin,zmax");
    pillar_cmd->add_option("input", pillar_in, "mixed .bin file")->required();
    pillar_cmd->add_option("output", pillar_out, "output .pillars file")->required();
    add_common(pillar_cmd);

    // --- kd-loss ---
    auto* kd_cmd = app.add_subcommand("kd-loss", "evaluate distillation losses on exported tensors");
    std::string kd_student, kd_teacher, kd_student_reg, kd_teacher_reg;
    std::string kd_student_feat, kd_teacher_feat, kd_gt, kd_weights, kd_preds, kd_out;
    double kd_tau = 0.3, kd_label_reg = 0.0, kd_label_cls = 0.0, kd_beta = 1.0;
    int kd_grid = 7;
    std::string kd_reduction = "mean";
    kd_cmd->add_option("--student", kd_student, "student classification tensor");
    kd_cmd->add_option("--teacher", kd_teacher, "teacher classification tensor");
    kd_cmd->add_option("--student-reg", kd_student_reg, "student regression tensor");
    kd_cmd->add_option("--teacher-reg", kd_teacher_reg, "teacher regression tensor");
    kd_cmd->add_option("--student-feat", kd_student_feat, "student feature tensor");
    kd_cmd->add_option("--teacher-feat", kd_teacher_feat, "teacher feature tensor");
    kd_cmd->add_option("--gt", kd_gt, "ground-truth boxes JSON (feature loss RoIs)");
    kd_cmd->add_option("--teacher-preds", kd_preds, "teacher detections JSON (label-KD targets)");
    kd_cmd->add_option("--tau", kd_tau, "label-KD score threshold")->check(CLI::Range(0.0, 1.0));
    kd_cmd->add_option("--weights", kd_weights, "loss weights JSON");
    kd_cmd->add_option("--label-reg", kd_label_reg, "precomputed detector regression loss");
    kd_cmd->add_option("--label-cls", kd_label_cls, "precomputed detector classification loss");
    kd_cmd->add_option("--grid", kd_grid, "RoI grid size")->check(CLI::Range(1, 64));
    kd_cmd->add_option("--beta", kd_beta, "smooth-L1 transition point");
    kd_cmd->add_option("--reduction", kd_reduction, "mean | sum")
        ->check(CLI::IsMember({"mean", "sum"}));
    kd_cmd->add_option("--out", kd_out, "write the loss report JSON here (default: stdout)");

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "range-binned detection evaluation");
    std::string eval_dets, eval_gts, eval_cfg_path, eval_out;
    eval_cmd->add_option("--dets", eval_dets, "detections JSON")->required();
    eval_cmd->add_option("--gts", eval_gts, "ground-truth JSON")->required();
    eval_cmd->add_option("--config", eval_cfg_path, "eval config JSON");
    eval_cmd->add_option("--out", eval_out, "write the report JSON here (default: stdout)");

    // --- schedule ---
    auto* sched_cmd = app.add_subcommand("schedule", "expand training notation into a stage manifest");
    std::string sched_notation, sched_out = "plan.json";
    ManifestPaths sched_paths;
    EpochsConfig sched_epochs;
    sched_cmd->add_option("notation", sched_notation, "training notation, e.g. RL^MSTM_{1-1/16/vox}->R")
        ->required();
    sched_cmd->add_option("--out", sched_out, "manifest output path");
    sched_cmd->add_option("--lidar-dir", sched_paths.lidar_dir, "lidar frames directory");
    sched_cmd->add_option("--radar-dir", sched_paths.radar_dir, "radar frames directory");
    sched_cmd->add_option("--stage-dir", sched_paths.output_dir, "stage dataset root");
    sched_cmd->add_option("--epochs-initial", sched_epochs.initial, "epochs for the first stage");
    sched_cmd->add_option("--epochs-refine", sched_epochs.refine, "epochs per refinement stage");
    add_common(sched_cmd, false);

    std::string export_format = "json";
    app.add_option("--format", export_format, "box export format: json | csv")
        ->check(CLI::IsMember({"json", "csv"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    if (app.get_subcommands().empty()) {
        std::cout << app.help();
        return 2;
    }

    try {
        if (!config_path.empty()) {
            CLI::App* sub = app.get_subcommands().front();
            auto given = [&](const std::string& name) {
                const CLI::Option* o = sub->get_option_no_throw(name);
                return o != nullptr && o->count() > 0;
            };
            config = load_global_config(config_path);
            if (!given("--seed")) seed = config.seed;
            if (!given("--jobs")) jobs = config.jobs;
        }
        if (!channels_str.empty()) {
            const unsigned long c = std::stoul(channels_str);
            if (c < 3) throw std::invalid_argument("--channels must be >= 3");
            channels = static_cast<size_t>(c);
        }

        if (gen->parsed()) {
            SceneSpec spec;
            if (!gen_spec_path.empty()) spec = detail_cli::read_scene_spec(gen_spec_path);
            fs::create_directories(fs::path(gen_out_dir) / "lidar");
            fs::create_directories(fs::path(gen_out_dir) / "radar");
            std::vector<std::string> class_names;
            for (const ClassPrior& p : spec.priors) class_names.push_back(p.name);
            std::vector<std::vector<BoxRecord>> per_frame(static_cast<size_t>(gen_frames));
            detail_cli::parallel_for(static_cast<size_t>(gen_frames), jobs, [&](size_t i) {
                char id[16];
                std::snprintf(id, sizeof(id), "%06zu", i);
                SceneSpec frame_spec = spec;
                frame_spec.seed = derive_seed(seed, id);
                const Frame frame = generate_scene(frame_spec, id);
                write_cloud_bin((fs::path(gen_out_dir) / "lidar" / (frame.id + ".bin")).string(),
                                frame.lidar);
                write_cloud_bin((fs::path(gen_out_dir) / "radar" / (frame.id + ".bin")).string(),
                                frame.radar);
                for (const Box3D& b : frame.gt) per_frame[i].push_back({frame.id, b});
            });
            std::vector<BoxRecord> gt;
            for (const auto& frame_gt : per_frame)
                gt.insert(gt.end(), frame_gt.begin(), frame_gt.end());
            const std::string gt_path = (fs::path(gen_out_dir) / "gt.json").string();
            if (export_format == "csv")
                write_boxes_csv((fs::path(gen_out_dir) / "gt.csv").string(), gt, class_names);
            else
                write_boxes_json(gt_path, gt, class_names);
            std::cout << "wrote " << gen_frames << " frame(s) to " << gen_out_dir << "\n";
        } else if (dedup_cmd->parsed()) {
            detail_cli::for_each_cloud(dedup_in, dedup_out, jobs, channels, Source::Lidar,
                                       &config.lidar_schema,
                                       [](const std::string&, PointCloud pc) {
                                           return dedup_points(pc);
                                       });
        } else if (crop_cmd->parsed()) {
            const Range3D range = crop_range_str.empty()
                                      ? Range3D::detector_default()
                                      : detail_cli::parse_range_string(crop_range_str);
            detail_cli::for_each_cloud(crop_in, crop_out, jobs, channels, Source::Lidar,
                                       &config.lidar_schema,
                                       [&](const std::string&, PointCloud pc) {
                                           return crop_to_range(pc, range);
                                       });
        } else if (thin_cmd->parsed()) {
            const detail_cli::ParsedShare share = parse_share_string(thin_share_str);
            if (!(share.value > 0.0) || share.value > 1.0)
                throw std::invalid_argument("share must be in (0, 1]");
            if (thin_method == "voxel" && !share.halvings)
                throw std::invalid_argument("voxel thin-out shares must be powers of 1/2");
            if (thin_method == "knn" && thin_radar.empty())
                throw std::invalid_argument("knn thin-out needs --radar");
            const bool dir_mode = fs::is_directory(thin_in);
            if (thin_method == "knn" && dir_mode && !fs::is_directory(thin_radar))
                throw std::invalid_argument("directory mode needs a radar directory");
            ThinOutMethod method;
            method.kind = thin_method == "random" ? ThinOutMethod::Kind::Random
                          : thin_method == "knn"  ? ThinOutMethod::Kind::Knn
                                                  : ThinOutMethod::Kind::Voxel;
            method.voxel_size = {thin_voxel, thin_voxel, thin_voxel};
            detail_cli::for_each_cloud(
                thin_in, thin_out_path, jobs, channels, Source::Lidar, &config.lidar_schema,
                [&](const std::string& stem, PointCloud pc) -> PointCloud {
                    const uint64_t frame_seed = derive_seed(seed, stem);
                    if (method.kind == ThinOutMethod::Kind::Knn) {
                        const std::string radar_path =
                            dir_mode ? (fs::path(thin_radar) / (stem + ".bin")).string()
                                     : thin_radar;
                        const PointCloud radar =
                            read_cloud_bin(radar_path, channels, Source::Radar,
                                           &config.radar_schema);
                        return knn_sample(pc, radar, share.value);
                    }
                    if (share.halvings && *share.halvings == 0) return pc;
                    if (share.halvings) {
                        const auto seq =
                            thin_out_sequence(pc, method, *share.halvings, frame_seed);
                        return seq.entries.back().cloud;
                    }
                    return random_sample(pc, share.value, frame_seed);
                });
        } else if (mix_cmd->parsed()) {
            if (fs::is_directory(mix_radar) != fs::is_directory(mix_lidar))
                throw std::invalid_argument("mix needs two files or two directories");
            if (fs::is_directory(mix_radar)) {
                fs::create_directories(mix_out);
                const auto radar_files = detail_cli::list_bin_files(mix_radar);
                detail_cli::parallel_for(radar_files.size(), jobs, [&](size_t i) {
                    const std::string lidar_path =
                        (fs::path(mix_lidar) / (radar_files[i].stem + ".bin")).string();
                    const PointCloud radar = read_cloud_bin(radar_files[i].path, std::nullopt,
                                                            Source::Radar, &config.radar_schema);
                    const PointCloud lidar = read_cloud_bin(lidar_path, std::nullopt,
                                                            Source::Lidar, &config.lidar_schema);
                    write_cloud_bin(
                        (fs::path(mix_out) / (radar_files[i].stem + ".bin")).string(),
                        merge_clouds(radar, lidar));
                });
            } else {
                const PointCloud radar =
                    read_cloud_bin(mix_radar, std::nullopt, Source::Radar, &config.radar_schema);
                const PointCloud lidar =
                    read_cloud_bin(mix_lidar, std::nullopt, Source::Lidar, &config.lidar_schema);
                write_cloud_bin(mix_out, merge_clouds(radar, lidar));
            }
        } else if (pillar_cmd->parsed()) {
            PillarGridParams params;
            params.pillar_dx = params.pillar_dy = pillar_size;
            params.max_points = pillar_max_points;
            if (!pillar_range_str.empty())
                params.range = detail_cli::parse_range_string(pillar_range_str);
            const PointCloud mixed = read_cloud_bin(pillar_in, std::nullopt, Source::Mixed);
            write_pillars(pillar_out, pillarize_prioritized(mixed, params, seed));
        } else if (kd_cmd->parsed()) {
            LossComponents components;
            components.reg = kd_label_reg;
            components.cls = kd_label_cls;
            const Reduction reduction =
                kd_reduction == "sum" ? Reduction::Sum : Reduction::Mean;
            if ((!kd_student_reg.empty() || !kd_teacher_reg.empty()) && kd_student.empty())
                throw std::invalid_argument(
                    "regression tensors belong to the logit loss; pass --student/--teacher too");
            if (!kd_student.empty() || !kd_teacher.empty()) {
                if (kd_student.empty() || kd_teacher.empty())
                    throw std::invalid_argument("logit loss needs --student and --teacher");
                const DenseMap student = tensor_to_dense_map(read_tensor(kd_student));
                const DenseMap teacher = tensor_to_dense_map(read_tensor(kd_teacher));
                RegressionSet reg;
                if (!kd_student_reg.empty() || !kd_teacher_reg.empty()) {
                    if (kd_student_reg.empty() || kd_teacher_reg.empty())
                        throw std::invalid_argument(
                            "regression distillation needs --student-reg and --teacher-reg");
                    const Tensor s = read_tensor(kd_student_reg);
                    const Tensor t = read_tensor(kd_teacher_reg);
                    if (s.shape != t.shape)
                        throw std::invalid_argument("regression tensors must have equal shape");
                    reg.dim = s.shape.size() == 2 ? s.shape[1] : 1;
                    reg.student.assign(s.values.begin(), s.values.end());
                    reg.teacher.assign(t.values.begin(), t.values.end());
                }
                const LogitKdResult logit =
                    logit_kd_loss(student, teacher, reg, {kd_beta, reduction});
                components.logit_cls = logit.cls;
                components.logit_reg = logit.reg;
            }
            std::vector<std::string> class_names = EvalConfig{}.class_names;
            std::vector<Box3D> gt_boxes;
            if (!kd_gt.empty())
                for (const BoxRecord& r : read_boxes_json(kd_gt, class_names))
                    gt_boxes.push_back(r.box);
            if (!kd_student_feat.empty() || !kd_teacher_feat.empty()) {
                if (kd_student_feat.empty() || kd_teacher_feat.empty())
                    throw std::invalid_argument(
                        "feature loss needs --student-feat and --teacher-feat");
                if (kd_gt.empty())
                    throw std::invalid_argument("feature loss needs --gt for the RoIs");
                const DenseMap fs_map = tensor_to_dense_map(read_tensor(kd_student_feat));
                DenseMap ft_map = tensor_to_dense_map(read_tensor(kd_teacher_feat));
                if (!ft_map.geom) ft_map.geom = MapGeometry{};
                if (gt_boxes.empty())
                    std::cerr << "warning: no ground-truth boxes; feature loss is 0\n";
                components.feat =
                    feature_kd_loss(fs_map, ft_map, gt_boxes, nullptr, kd_grid, reduction);
            }
            nlohmann::json extra;
            if (!kd_preds.empty()) {
                std::vector<Box3D> preds;
                for (const BoxRecord& r : read_boxes_json(kd_preds, class_names))
                    preds.push_back(r.box);
                extra["label_kd_target_count"] =
                    label_kd_targets(gt_boxes, preds, kd_tau).size();
                extra["tau"] = kd_tau;
            }
            LossWeights weights;
            if (!kd_weights.empty()) weights = read_loss_weights(kd_weights);
            nlohmann::json report = loss_report_json(joint_loss(components, weights), weights);
            for (auto& [key, value] : extra.items()) report[key] = value;
            if (kd_out.empty())
                std::cout << report.dump(2) << "\n";
            else
                l2r::detail::write_json_file(kd_out, report);
        } else if (eval_cmd->parsed()) {
            EvalConfig cfg;
            std::string cfg_path = eval_cfg_path;
            if (cfg_path.empty() && config.eval_config_path) cfg_path = *config.eval_config_path;
            if (!cfg_path.empty()) cfg = read_eval_config(cfg_path);
            const std::vector<BoxRecord> det_records = read_boxes_json(eval_dets, cfg.class_names);
            const std::vector<BoxRecord> gt_records = read_boxes_json(eval_gts, cfg.class_names);
            std::map<std::string, EvalFrame> frames;
            for (const BoxRecord& r : det_records) {
                frames[r.frame_id].id = r.frame_id;
                frames[r.frame_id].dets.push_back(r.box);
            }
            for (const BoxRecord& r : gt_records) {
                frames[r.frame_id].id = r.frame_id;
                frames[r.frame_id].gts.push_back(r.box);
            }
            std::vector<EvalFrame> frame_list;
            for (auto& [id, frame] : frames) frame_list.push_back(std::move(frame));
            const EvalReport report = evaluate(frame_list, cfg);
            const nlohmann::json j = eval_report_json(report);
            for (size_t b = 0; b < report.bins.size(); ++b) {
                std::cout << "bin [" << report.bins[b].first << ", " << report.bins[b].second
                          << "): mAP ";
                if (report.bin_map[b])
                    std::cout << *report.bin_map[b];
                else
                    std::cout << "n/a";
                std::cout << "\n";
            }
            if (eval_out.empty())
                std::cout << j.dump(2) << "\n";
            else
                l2r::detail::write_json_file(eval_out, j);
        } else if (sched_cmd->parsed()) {
            const TrainingSpec spec = parse_notation(sched_notation);
            const StagePlan plan = build_schedule(spec, sched_epochs);
            emit_manifest(plan, sched_paths, seed, sched_out);
            std::cout << format_notation(spec) << ": " << plan.stages.size() << " stage(s) -> "
                      << sched_out << "\n";
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace l2r::cli
