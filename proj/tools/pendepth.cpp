/*
 * pendepth - Pose and expression normalization of facial depth images.
 *
 * Copyright 2026 The pendepth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "pen.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

/// Failure attributed to a named stage of a subcommand.
class StageError : public std::runtime_error
{
public:
    StageError(std::string stage, const std::string& what) : std::runtime_error(what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Problem with the configuration file; reported like a flag error.
class ConfigError : public std::runtime_error
{
    using std::runtime_error::runtime_error;
};

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const pen::PipelineError& e) {
        throw StageError(name + "/" + e.stage(), e.what());
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

/**
 * Settings shared by subcommands that may come from a JSON file given with
 * --config. Flags given on the command line take precedence.
 */
struct Config
{
    json values = json::object();

    static Config load(const fs::path& path)
    {
        Config c;
        json j;
        try {
            j = json::parse(pen::read_file(path));
        } catch (const std::exception& e) {
            throw ConfigError("config " + path.string() + ": " + e.what());
        }
        if (!j.is_object()) {
            throw ConfigError("config " + path.string() + ": top level must be an object");
        }
        static const std::map<std::string, std::vector<std::string>> allowed = {
            {"model", {}},
            {"estimator", {}},
            {"camera", {}},
            {"threads", {}},
            {"hha", {"d_min", "d_max", "h_max", "window_radius", "gravity_iterations"}},
            {"augment",
             {"downsample_factor", "noise_sigma", "occlusion_count", "occlusion_min_frac", "occlusion_max_frac"}},
        };
        for (const auto& [key, value] : j.items()) {
            const auto it = allowed.find(key);
            if (it == allowed.end()) {
                throw ConfigError("config " + path.string() + ": unknown key '" + key + "'");
            }
            if (!it->second.empty()) {
                if (!value.is_object()) {
                    throw ConfigError("config " + path.string() + ": '" + key + "' must be an object");
                }
                for (const auto& [sub, v] : value.items()) {
                    if (std::find(it->second.begin(), it->second.end(), sub) == it->second.end()) {
                        throw ConfigError("config " + path.string() + ": unknown key '" + key + "." + sub + "'");
                    }
                    if (!v.is_number()) {
                        throw ConfigError("config " + path.string() + ": '" + key + "." + sub + "' must be a number");
                    }
                }
            }
        }
        for (const char* key : {"model", "estimator", "camera"}) {
            if (j.contains(key) && !j[key].is_string()) {
                throw ConfigError("config " + path.string() + ": '" + key + "' must be a string");
            }
        }
        if (j.contains("threads") && !j["threads"].is_number_integer()) {
            throw ConfigError("config " + path.string() + ": 'threads' must be an integer");
        }
        // Relative file references are taken relative to the config file.
        for (const char* key : {"model", "camera"}) {
            if (j.contains(key)) {
                fs::path p = j[key].get<std::string>();
                if (std::string(key) == "camera" && p == "default") {
                    continue;
                }
                if (p.is_relative()) {
                    p = path.parent_path() / p;
                }
                if (!fs::exists(p)) {
                    throw ConfigError("config " + path.string() + ": '" + key + "' file " + p.string() +
                                      " does not exist");
                }
                j[key] = p.string();
            }
        }
        c.values = std::move(j);
        return c;
    }

    /// Copies config value \p key (dotted for nested) into \p target unless \p opt was given.
    template <typename T>
    void apply(const CLI::Option* opt, const std::string& key, T& target) const
    {
        if (opt->count() > 0) {
            return;
        }
        const auto dot = key.find('.');
        const json* v = nullptr;
        if (dot == std::string::npos) {
            if (values.contains(key)) {
                v = &values[key];
            }
        } else {
            const auto head = key.substr(0, dot);
            const auto tail = key.substr(dot + 1);
            if (values.contains(head) && values[head].contains(tail)) {
                v = &values[head][tail];
            }
        }
        if (v) {
            target = v->get<T>();
        }
    }
};

json params_json(const pen::FaceParams& p)
{
    json j;
    j["pose"] = p.pose.to_array();
    j["shape"] = std::vector<double>(p.shape.data(), p.shape.data() + p.shape.size());
    j["expression"] = std::vector<double>(p.expression.data(), p.expression.data() + p.expression.size());
    return j;
}

std::string format_jsonl(const std::vector<json>& records)
{
    std::string out;
    for (const auto& r : records) {
        out += r.dump() + "\n";
    }
    return out;
}

void ensure_parent(const fs::path& p)
{
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
}

// Options grouped per subcommand; CLI11 binds directly into these.

struct GenModelOptions
{
    std::uint64_t seed = 1;
    int vertices = 200;
    int shape = 10;
    int expression = 4;
    std::string out;
};

int run_gen_model(const GenModelOptions& o)
{
    const auto model = stage("build", [&] { return pen::make_toy_model(o.seed, o.vertices, o.shape, o.expression); });
    stage("write", [&] {
        ensure_parent(o.out);
        pen::save_model(model, o.out);
    });
    std::cout << "wrote model with " << model.n_vertices() << " vertices, " << model.num_shape() << " shape and "
              << model.num_expression() << " expression components to " << o.out << "\n";
    return 0;
}

struct AugmentOptions
{
    int downsample = 2;
    double noise = 3.0;
    int occlusions = 1;
    double occlusion_min = 0.05;
    double occlusion_max = 0.15;
    CLI::Option* downsample_opt = nullptr;
    CLI::Option* noise_opt = nullptr;
    CLI::Option* occlusions_opt = nullptr;
    CLI::Option* occlusion_min_opt = nullptr;
    CLI::Option* occlusion_max_opt = nullptr;

    void add(CLI::App* app)
    {
        downsample_opt = app->add_option("--downsample", downsample, "Downsampling factor")->capture_default_str();
        noise_opt = app->add_option("--noise", noise, "Gaussian depth noise sigma (mm)")->capture_default_str();
        occlusions_opt =
            app->add_option("--occlusions", occlusions, "Occluding rectangles per image")->capture_default_str();
        occlusion_min_opt = app->add_option("--occlusion-min", occlusion_min, "Smallest occluder area fraction")
                                ->capture_default_str();
        occlusion_max_opt = app->add_option("--occlusion-max", occlusion_max, "Largest occluder area fraction")
                                ->capture_default_str();
    }

    pen::AugmentConfig resolve(const Config& cfg)
    {
        cfg.apply(downsample_opt, "augment.downsample_factor", downsample);
        cfg.apply(noise_opt, "augment.noise_sigma", noise);
        cfg.apply(occlusions_opt, "augment.occlusion_count", occlusions);
        cfg.apply(occlusion_min_opt, "augment.occlusion_min_frac", occlusion_min);
        cfg.apply(occlusion_max_opt, "augment.occlusion_max_frac", occlusion_max);
        pen::AugmentConfig a;
        a.downsample_factor = downsample;
        a.noise_sigma = noise;
        a.occlusion = {occlusions, occlusion_min, occlusion_max};
        return a;
    }
};

struct HhaOptions
{
    double d_min = 0.3;
    double d_max = 10.0;
    double h_max = 2.5;
    int window_radius = 2;
    int gravity_iterations = 5;
    std::vector<CLI::Option*> opts;

    void add(CLI::App* app)
    {
        opts.push_back(app->add_option("--d-min", d_min, "Nearest encoded depth (m)")->capture_default_str());
        opts.push_back(app->add_option("--d-max", d_max, "Farthest encoded depth (m)")->capture_default_str());
        opts.push_back(app->add_option("--h-max", h_max, "Height range (m)")->capture_default_str());
        opts.push_back(
            app->add_option("--normal-radius", window_radius, "Normal estimation window radius (px)")
                ->capture_default_str());
        opts.push_back(app->add_option("--gravity-iterations", gravity_iterations, "Gravity refinement iterations")
                           ->capture_default_str());
    }

    pen::HhaConfig resolve(const Config& cfg)
    {
        cfg.apply(opts[0], "hha.d_min", d_min);
        cfg.apply(opts[1], "hha.d_max", d_max);
        cfg.apply(opts[2], "hha.h_max", h_max);
        cfg.apply(opts[3], "hha.window_radius", window_radius);
        cfg.apply(opts[4], "hha.gravity_iterations", gravity_iterations);
        pen::HhaConfig h;
        h.d_min = d_min;
        h.d_max = d_max;
        h.h_max = h_max;
        h.window_radius = window_radius;
        h.gravity_iterations = gravity_iterations;
        h.validate();
        return h;
    }
};

struct GenDataOptions
{
    std::string model;
    CLI::Option* model_opt = nullptr;
    std::string out;
    int subjects = 10;
    int images = 40;
    int size = pen::default_crop_size;
    std::uint64_t seed = 0;
    double shape_range = 1.0;
    double expression_range = 1.0;
    double yaw_deg = 60.0;
    double pitch_deg = 30.0;
    double roll_deg = 15.0;
    double scale_jitter = 0.05;
    double translation_jitter = 4.0;
    double landmark_noise = 0.0;
    bool no_gallery = false;
    int threads = 1;
    CLI::Option* threads_opt = nullptr;
    AugmentOptions aug;
};

int run_gen_data(GenDataOptions& o, const Config& cfg)
{
    cfg.apply(o.model_opt, "model", o.model);
    cfg.apply(o.threads_opt, "threads", o.threads);
    if (o.model.empty()) {
        throw ConfigError("--model is required (flag or config)");
    }
    const auto model = stage("load-model", [&] { return pen::load_model(o.model); });
    pen::DatagenConfig dc;
    stage("config", [&] {
        dc.n_subjects = o.subjects;
        dc.images_per_subject = o.images;
        dc.image_size = o.size;
        dc.seed = o.seed;
        dc.shape_range = o.shape_range;
        dc.expression_range = o.expression_range;
        const double deg = std::numbers::pi / 180.0;
        dc.pose.yaw = o.yaw_deg * deg;
        dc.pose.pitch = o.pitch_deg * deg;
        dc.pose.roll = o.roll_deg * deg;
        dc.pose.scale_jitter = o.scale_jitter;
        dc.pose.translation_jitter = o.translation_jitter;
        dc.aug = o.aug.resolve(cfg);
        dc.landmark_sigma = o.landmark_noise;
        dc.gallery = !o.no_gallery;
        dc.threads = o.threads;
        dc.validate();
    });
    const auto ds = stage("generate", [&] { return pen::generate_dataset(model, dc, o.out); });
    std::cout << "wrote " << ds.records.size() << " images to " << o.out << "\n";
    return 0;
}

struct HhaCmdOptions
{
    std::string input;
    std::string out;
    std::string metadata;
    double scale = 1.0;
    std::optional<double> fx;
    std::optional<double> fy;
    std::optional<double> cx;
    std::optional<double> cy;
    HhaOptions hha;
};

int run_hha(HhaCmdOptions& o, const Config& cfg)
{
    const auto hc = stage("config", [&] { return o.hha.resolve(cfg); });
    const auto depth = stage("read", [&] { return pen::read_depth(o.input); });
    pen::Intrinsics k = pen::surrogate_intrinsics(o.scale, depth.width(), depth.height());
    if (o.fx) {
        k.fx = *o.fx;
    }
    if (o.fy) {
        k.fy = *o.fy;
    }
    if (o.cx) {
        k.cx = *o.cx;
    }
    if (o.cy) {
        k.cy = *o.cy;
    }
    const auto result = stage("hha", [&] { return pen::depth_to_hha_detailed(depth, k, hc); });
    stage("write", [&] {
        ensure_parent(o.out);
        pen::write_hha(result.image, o.out);
        if (!o.metadata.empty()) {
            ensure_parent(o.metadata);
            pen::write_file_atomic(o.metadata, pen::format_hha_metadata(hc, k, result.gravity));
        }
    });
    return 0;
}

struct FitProjectionOptions
{
    std::string model;
    CLI::Option* model_opt = nullptr;
    std::vector<std::string> landmarks;
    std::string out;
};

int run_fit_projection(FitProjectionOptions& o, const Config& cfg)
{
    cfg.apply(o.model_opt, "model", o.model);
    if (o.model.empty()) {
        throw ConfigError("--model is required (flag or config)");
    }
    const auto model = stage("load-model", [&] { return pen::load_model(o.model); });
    std::vector<Eigen::Vector3d> points;
    for (const auto idx : model.landmark_indices()) {
        points.push_back(model.mean_shape().segment<3>(3 * static_cast<Eigen::Index>(idx)));
    }
    std::vector<pen::WeakPerspective> cams;
    for (const auto& file : o.landmarks) {
        const auto obs = stage("read", [&] { return pen::read_landmarks(file); });
        cams.push_back(stage("fit", [&] {
            if (obs.size() != points.size()) {
                throw pen::InvalidInput(file + " has " + std::to_string(obs.size()) + " landmarks, model has " +
                                        std::to_string(points.size()));
            }
            return pen::fit_weak_perspective(points, obs);
        }));
    }
    const auto cam = stage("mean", [&] { return pen::mean_projection(cams); });
    stage("write", [&] {
        ensure_parent(o.out);
        pen::write_camera(cam, o.out);
    });
    return 0;
}

struct NormalizeOptions
{
    std::string model;
    CLI::Option* model_opt = nullptr;
    std::string manifest;
    std::string estimator = "landmark";
    CLI::Option* estimator_opt = nullptr;
    std::string camera = "default";
    CLI::Option* camera_opt = nullptr;
    std::string out;
    std::string exchange_dir;
    double timeout_s = 60.0;
    int size = pen::default_crop_size;
    int threads = 1;
    CLI::Option* threads_opt = nullptr;
    bool record_timing = false;
    HhaOptions hha;
};

struct ManifestItem
{
    json record;
    pen::PenInput input;
};

std::unique_ptr<pen::Estimator> make_estimator(const std::string& choice, const fs::path& exchange_dir,
                                               double timeout_s)
{
    if (choice == "passthrough") {
        return std::make_unique<pen::PassthroughEstimator>();
    }
    if (choice == "landmark") {
        return std::make_unique<pen::LandmarkFitter>();
    }
    if (choice.rfind("external:", 0) == 0) {
        return std::make_unique<pen::ExternalEstimator>(
            choice.substr(9), exchange_dir, std::chrono::milliseconds(static_cast<std::int64_t>(timeout_s * 1000.0)));
    }
    throw ConfigError("unknown estimator '" + choice + "' (expected passthrough, landmark or external:<cmd>)");
}

int run_normalize(NormalizeOptions& o, const Config& cfg)
{
    cfg.apply(o.model_opt, "model", o.model);
    cfg.apply(o.estimator_opt, "estimator", o.estimator);
    cfg.apply(o.camera_opt, "camera", o.camera);
    cfg.apply(o.threads_opt, "threads", o.threads);
    if (o.model.empty()) {
        throw ConfigError("--model is required (flag or config)");
    }
    const fs::path out_dir = o.out;
    const auto estimator =
        make_estimator(o.estimator, o.exchange_dir.empty() ? out_dir / "exchange" : fs::path(o.exchange_dir),
                       o.timeout_s);
    const auto model = stage("load-model", [&] { return pen::load_model(o.model); });
    const auto pen_cfg = stage("config", [&] {
        auto c = pen::default_pen_config(model, o.size);
        if (o.camera != "default") {
            c.canonical_pose = pen::read_camera(o.camera);
            c.intrinsics = pen::surrogate_intrinsics(c.canonical_pose.scale, o.size, o.size);
        }
        c.hha = o.hha.resolve(cfg);
        c.validate();
        return c;
    });

    // Inputs: JSON lines with at least "id" and "depth"; "landmarks",
    // "params" and "subject"/"role" are used when present.
    const fs::path manifest_path = o.manifest;
    const auto items = stage("read-manifest", [&] {
        std::vector<ManifestItem> items;
        const auto lines = pen::split_lines(pen::read_file(manifest_path));
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i].find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            const auto where = manifest_path.string() + ":" + std::to_string(i + 1);
            ManifestItem item;
            try {
                item.record = json::parse(lines[i]);
            } catch (const std::exception& e) {
                throw pen::ParseError(where, e.what());
            }
            if (!item.record.is_object() || !item.record.contains("id") || !item.record.contains("depth")) {
                throw pen::ParseError(where, "record needs \"id\" and \"depth\"");
            }
            item.input.id = item.record["id"].get<std::string>();
            items.push_back(std::move(item));
        }
        return items;
    });

    std::vector<pen::PenInput> inputs;
    std::vector<std::string> load_errors(items.size());
    const auto resolve = [&](const json& rec, const char* key) {
        fs::path p = rec[key].get<std::string>();
        return p.is_relative() ? manifest_path.parent_path() / p : p;
    };
    for (std::size_t i = 0; i < items.size(); ++i) {
        pen::PenInput in;
        in.id = items[i].input.id;
        const auto& rec = items[i].record;
        try {
            in.depth = pen::read_depth(resolve(rec, "depth"));
            if (rec.contains("landmarks")) {
                in.landmarks = pen::read_landmarks(resolve(rec, "landmarks"));
            }
            if (rec.contains("params")) {
                in.reference = pen::read_params(resolve(rec, "params"), model);
            }
        } catch (const std::exception& e) {
            load_errors[i] = e.what();
            in.depth = pen::DepthImage();
        }
        inputs.push_back(std::move(in));
    }

    const auto t0 = std::chrono::steady_clock::now();
    const auto results = pen::batch_normalize(inputs, model, *estimator, pen_cfg, o.threads);
    const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    std::vector<json> audit;
    std::vector<pen::ManifestEntry> gallery;
    std::vector<pen::ManifestEntry> probes;
    std::vector<pen::ManifestEntry> estimates;
    int failures = 0;
    stage("write", [&] {
        fs::create_directories(out_dir);
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& r = results[i];
            const auto& rec = items[i].record;
            json a;
            a["id"] = r.id;
            a["estimator"] = estimator->name();
            if (!load_errors[i].empty() || !r.ok()) {
                ++failures;
                a["status"] = "error";
                a["stage"] = load_errors[i].empty() ? r.stage : "input";
                a["error"] = load_errors[i].empty() ? r.error : load_errors[i];
                std::cerr << "pendepth normalize: item " << r.id << " failed at stage '" << a["stage"].get<std::string>()
                          << "': " << a["error"].get<std::string>() << "\n";
                audit.push_back(std::move(a));
                continue;
            }
            const std::string pen_name = r.id + ".pen.pgm";
            const std::string est_name = r.id + ".est.params.txt";
            pen::write_depth(r.result->pen, out_dir / pen_name);
            pen::write_params(r.result->estimate.params, out_dir / est_name);
            a["status"] = "ok";
            a["pen"] = pen_name;
            a["params_file"] = est_name;
            a["converged"] = r.result->estimate.converged;
            a["iterations"] = r.result->estimate.iterations;
            a["residual"] = r.result->estimate.final_residual;
            a["params"] = params_json(r.result->estimate.params);
            if (o.record_timing) {
                a["batch_elapsed_ms"] = elapsed;
            }
            audit.push_back(std::move(a));
            estimates.push_back({r.id, est_name});
            if (rec.contains("subject")) {
                const auto subject = rec["subject"].get<std::string>();
                const bool is_gallery = rec.contains("role") && rec["role"] == "gallery";
                (is_gallery ? gallery : probes).push_back({subject, pen_name});
            }
        }
        pen::write_file_atomic(out_dir / "audit.jsonl", format_jsonl(audit));
        pen::write_file_atomic(out_dir / "estimates.tsv", pen::format_tsv_manifest(estimates));
        if (!gallery.empty()) {
            pen::write_file_atomic(out_dir / "gallery.tsv", pen::format_tsv_manifest(gallery));
        }
        if (!probes.empty()) {
            pen::write_file_atomic(out_dir / "probes.tsv", pen::format_tsv_manifest(probes));
        }
    });
    std::cout << "normalized " << results.size() - failures << " of " << results.size() << " images into "
              << out_dir.string() << "\n";
    return failures == 0 ? 0 : 1;
}

struct ReconstructEvalOptions
{
    std::string model;
    CLI::Option* model_opt = nullptr;
    std::string ground_truth;
    std::string estimates;
    bool with_expression = false;
    std::string out;
};

int run_reconstruct_eval(ReconstructEvalOptions& o, const Config& cfg)
{
    cfg.apply(o.model_opt, "model", o.model);
    if (o.model.empty()) {
        throw ConfigError("--model is required (flag or config)");
    }
    const auto model = stage("load-model", [&] { return pen::load_model(o.model); });
    const auto gt = stage("read-manifest", [&] { return pen::read_tsv_manifest(o.ground_truth); });
    const auto est = stage("read-manifest", [&] { return pen::read_tsv_manifest(o.estimates); });
    const auto report = stage("evaluate", [&] {
        std::map<std::string, fs::path> gt_by_id;
        for (const auto& e : gt) {
            if (!gt_by_id.emplace(e.identity, e.path).second) {
                throw pen::InvalidInput("duplicate ground-truth id '" + e.identity + "'");
            }
        }
        std::vector<pen::FaceShape> a;
        std::vector<pen::FaceShape> b;
        std::vector<std::string> ids;
        const auto shape_of = [&](const fs::path& p) {
            auto params = pen::read_params(p, model);
            params.pose = pen::Pose{};
            if (!o.with_expression) {
                params.expression.setZero();
            }
            return pen::synthesize_shape(model, params);
        };
        for (const auto& e : est) {
            const auto it = gt_by_id.find(e.identity);
            if (it == gt_by_id.end()) {
                throw pen::InvalidInput("estimate id '" + e.identity + "' has no ground truth");
            }
            a.push_back(shape_of(it->second));
            b.push_back(shape_of(e.path));
            ids.push_back(e.identity);
        }
        return pen::reconstruction_rmse(a, b, ids);
    });
    stage("write", [&] {
        if (!o.out.empty()) {
            ensure_parent(o.out);
            pen::write_file_atomic(o.out, pen::format_report_json(report));
        }
    });
    std::cout << pen::format_report_table(report);
    return 0;
}

struct IdentifyOptions
{
    std::string gallery;
    std::string probes;
    int grid = 8;
    std::string out;
    std::string table;
};

/// Feature for one manifest entry: a PGM is described by the block-mean
/// descriptor; any other file is read as a precomputed feature vector.
Eigen::VectorXd load_feature(const fs::path& p, int grid)
{
    if (p.extension() == ".pgm") {
        return pen::extract_feature(pen::read_depth(p), grid).values;
    }
    return pen::read_feature(p);
}

int run_identify(const IdentifyOptions& o)
{
    const auto load = [&](const std::string& manifest) {
        std::vector<pen::LabelledFeature> out;
        for (const auto& e : pen::read_tsv_manifest(manifest)) {
            out.push_back({e.identity, load_feature(e.path, o.grid), e.path.stem().string()});
        }
        return out;
    };
    const auto gallery = stage("gallery", [&] { return load(o.gallery); });
    const auto probes = stage("probes", [&] { return load(o.probes); });
    const auto report = stage("identify", [&] { return pen::rank1_identify(gallery, probes); });
    const auto table = pen::format_report_table(report);
    stage("write", [&] {
        if (!o.out.empty()) {
            ensure_parent(o.out);
            pen::write_file_atomic(o.out, pen::format_report_json(report));
        }
        if (!o.table.empty()) {
            ensure_parent(o.table);
            pen::write_file_atomic(o.table, table);
        }
    });
    std::cout << "rank-1: " << pen::format_double(*report.rank1) << " over " << report.n_samples << " probes\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"pendepth: pose and expression normalization of facial depth images"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON file with model, estimator, camera, threads, hha and augment "
                                            "settings; flags override it")
        ->check(CLI::ExistingFile);

    GenModelOptions gm;
    auto* gen_model = app.add_subcommand("gen-model", "Generate a seeded toy morphable model");
    gen_model->add_option("--seed", gm.seed, "Random seed")->capture_default_str();
    gen_model->add_option("--vertices", gm.vertices, "Number of mesh vertices")->capture_default_str();
    gen_model->add_option("--shape", gm.shape, "Number of shape components")->capture_default_str();
    gen_model->add_option("--expression", gm.expression, "Number of expression components")->capture_default_str();
    gen_model->add_option("--out", gm.out, "Output model file")->required();

    GenDataOptions gd;
    auto* gen_data = app.add_subcommand("gen-data", "Render a synthetic, augmented depth dataset");
    gd.model_opt = gen_data->add_option("--model", gd.model, "Model file");
    gen_data->add_option("--out", gd.out, "Output directory")->required();
    gen_data->add_option("--subjects", gd.subjects, "Number of identities")->capture_default_str();
    gen_data->add_option("--images", gd.images, "Probe images per identity")->capture_default_str();
    gen_data->add_option("--size", gd.size, "Image side length (px)")->capture_default_str();
    gen_data->add_option("--seed", gd.seed, "Random seed")->capture_default_str();
    gen_data->add_option("--shape-range", gd.shape_range, "Shape coefficient half-range (normalized)")
        ->capture_default_str();
    gen_data->add_option("--expression-range", gd.expression_range, "Expression coefficient half-range (normalized)")
        ->capture_default_str();
    gen_data->add_option("--yaw", gd.yaw_deg, "Yaw half-range (degrees)")->capture_default_str();
    gen_data->add_option("--pitch", gd.pitch_deg, "Pitch half-range (degrees)")->capture_default_str();
    gen_data->add_option("--roll", gd.roll_deg, "Roll half-range (degrees)")->capture_default_str();
    gen_data->add_option("--scale-jitter", gd.scale_jitter, "Relative scale jitter")->capture_default_str();
    gen_data->add_option("--translation-jitter", gd.translation_jitter, "Translation jitter (px)")
        ->capture_default_str();
    gen_data->add_option("--landmark-noise", gd.landmark_noise, "Gaussian noise on probe landmark depths (mm)")
        ->capture_default_str();
    gen_data->add_flag("--no-gallery", gd.no_gallery, "Skip the neutral frontal gallery image per identity");
    gd.threads_opt = gen_data->add_option("--threads", gd.threads, "Worker threads")->capture_default_str();
    gd.aug.add(gen_data);

    HhaCmdOptions hh;
    auto* hha = app.add_subcommand("hha", "Encode a depth image as HHA (disparity, height, angle)");
    hha->add_option("--input", hh.input, "Input depth PGM")->required()->check(CLI::ExistingFile);
    hha->add_option("--out", hh.out, "Output PPM")->required();
    hha->add_option("--metadata", hh.metadata, "Optional sidecar with the encoding constants");
    hha->add_option("--scale", hh.scale, "Camera scale (px/mm) for the surrogate intrinsics fx = fy = 1000*scale")
        ->capture_default_str();
    hha->add_option("--fx", hh.fx, "Focal length x (px); default from --scale");
    hha->add_option("--fy", hh.fy, "Focal length y (px); default from --scale");
    hha->add_option("--cx", hh.cx, "Principal point x (px); default image centre");
    hha->add_option("--cy", hh.cy, "Principal point y (px); default image centre");
    hh.hha.add(hha);

    FitProjectionOptions fp;
    auto* fit = app.add_subcommand("fit-projection",
                                   "Fit a weak-perspective camera to landmark files (mean camera for several)");
    fp.model_opt = fit->add_option("--model", fp.model, "Model file");
    fit->add_option("--landmarks", fp.landmarks, "Landmark files (u v depth per line)")
        ->required()
        ->check(CLI::ExistingFile);
    fit->add_option("--out", fp.out, "Output camera file")->required();

    NormalizeOptions nm;
    auto* normalize = app.add_subcommand("normalize", "Produce pose and expression normalized depth images");
    nm.model_opt = normalize->add_option("--model", nm.model, "Model file");
    normalize->add_option("--manifest", nm.manifest, "Input manifest (JSON lines with id, depth, landmarks, params)")
        ->required()
        ->check(CLI::ExistingFile);
    nm.estimator_opt =
        normalize->add_option("--estimator", nm.estimator, "passthrough | landmark | external:<command>")
            ->capture_default_str();
    nm.camera_opt =
        normalize->add_option("--camera", nm.camera, "Canonical camera file or 'default'")->capture_default_str();
    normalize->add_option("--out", nm.out, "Output directory")->required();
    normalize->add_option("--exchange-dir", nm.exchange_dir, "Exchange directory for external estimators")
        ->default_str("<out>/exchange");
    normalize->add_option("--timeout", nm.timeout_s, "External estimator timeout (s)")->capture_default_str();
    normalize->add_option("--size", nm.size, "PEN image side length (px)")->capture_default_str();
    nm.threads_opt = normalize->add_option("--threads", nm.threads, "Worker threads")->capture_default_str();
    normalize->add_flag("--record-timing", nm.record_timing, "Add wall-clock timing to the audit records");
    nm.hha.add(normalize);

    ReconstructEvalOptions re;
    auto* recon = app.add_subcommand("reconstruct-eval", "Reconstruction RMSE between parameter manifests");
    re.model_opt = recon->add_option("--model", re.model, "Model file");
    recon->add_option("--ground-truth", re.ground_truth, "id<TAB>params manifest")
        ->required()
        ->check(CLI::ExistingFile);
    recon->add_option("--estimates", re.estimates, "id<TAB>params manifest")->required()->check(CLI::ExistingFile);
    recon->add_flag("--with-expression", re.with_expression, "Compare expressive shapes instead of neutral ones");
    recon->add_option("--out", re.out, "JSON report file");

    IdentifyOptions id;
    auto* identify = app.add_subcommand("identify", "Rank-1 identification over gallery and probe manifests");
    identify->add_option("--gallery", id.gallery, "identity<TAB>path manifest")
        ->required()
        ->check(CLI::ExistingFile);
    identify->add_option("--probes", id.probes, "identity<TAB>path manifest")->required()->check(CLI::ExistingFile);
    identify->add_option("--grid", id.grid, "Feature grid size")->capture_default_str();
    identify->add_option("--out", id.out, "JSON report file");
    identify->add_option("--table", id.table, "Plain-text report file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            return app.exit(e);
        }
        app.exit(e);
        return 2;
    }

    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        const Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
        if (sub == gen_model) {
            return run_gen_model(gm);
        }
        if (sub == gen_data) {
            return run_gen_data(gd, cfg);
        }
        if (sub == hha) {
            return run_hha(hh, cfg);
        }
        if (sub == fit) {
            return run_fit_projection(fp, cfg);
        }
        if (sub == normalize) {
            return run_normalize(nm, cfg);
        }
        if (sub == recon) {
            return run_reconstruct_eval(re, cfg);
        }
        return run_identify(id);
    } catch (const ConfigError& e) {
        std::cerr << "pendepth " << name << ": configuration: " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << "pendepth " << name << ": stage '" << e.stage() << "': " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "pendepth " << name << ": " << e.what() << "\n";
        return 1;
    }
}
