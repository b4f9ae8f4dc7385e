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
#pragma once

#ifndef PEN_DATAGEN_HPP_
#define PEN_DATAGEN_HPP_

#include "pen/error.hpp"
#include "pen/estimate.hpp"
#include "pen/image.hpp"
#include "pen/io.hpp"
#include "pen/model.hpp"
#include "pen/pipeline.hpp"
#include "pen/projection.hpp"
#include "pen/random.hpp"
#include "pen/render.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

namespace pen {

struct OcclusionConfig
{
    int count = 1;
    double min_frac = 0.05; ///< smallest patch area as a fraction of the image
    double max_frac = 0.15;
};

/**
 * Depth augmentation settings. The defaults (downsample 2, 3 mm noise, one
 * occluder of 5 to 15 % of the area) are conventions of this library.
 */
struct AugmentConfig
{
    int downsample_factor = 2;
    double noise_sigma = 3.0; ///< millimetres, additive Gaussian on valid pixels
    OcclusionConfig occlusion;
    std::uint64_t seed = 0;

    /// Settings under which augment() is the identity.
    static AugmentConfig none()
    {
        AugmentConfig c;
        c.downsample_factor = 1;
        c.noise_sigma = 0.0;
        c.occlusion.count = 0;
        return c;
    }

    void validate() const
    {
        if (downsample_factor < 1) {
            throw InvalidInput("downsample_factor must be at least 1");
        }
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
            throw InvalidInput("noise_sigma must be a finite value >= 0");
        }
        if (occlusion.count < 0) {
            throw InvalidInput("occlusion count must be >= 0");
        }
        if (!(occlusion.min_frac > 0.0 && occlusion.min_frac < 1.0) ||
            !(occlusion.max_frac > 0.0 && occlusion.max_frac < 1.0)) {
            throw InvalidInput("occlusion fractions must lie in (0, 1)");
        }
        if (occlusion.min_frac > occlusion.max_frac) {
            throw InvalidInput("occlusion min_frac exceeds max_frac");
        }
    }
};

/// Side record of the random choices made by augment().
struct AugmentTrace
{
    std::vector<BBox> occlusions;
};

/// Noisy depths never drop below this value (mm), so they stay valid.
inline constexpr double min_noisy_depth = 0.1;

/**
 * Applies, in this order: downsampling (keep the top-left pixel of every
 * factor x factor block, then nearest-neighbour upsample back to the input
 * size), additive Gaussian noise on valid pixels clamped to min_noisy_depth,
 * and `occlusion.count` axis-aligned sentinel rectangles. Sentinel pixels
 * never become valid. Output is fully determined by the config seed.
 */
inline DepthImage augment(const DepthImage& img, const AugmentConfig& cfg, AugmentTrace* trace = nullptr)
{
    cfg.validate();
    const int w = img.width();
    const int h = img.height();
    DepthImage out = img;
    if (trace) {
        trace->occlusions.clear();
    }
    if (img.empty()) {
        return out;
    }
    Random rng(cfg.seed);

    if (cfg.downsample_factor > 1) {
        const int f = cfg.downsample_factor;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(x, y) = img.at(x / f * f, y / f * f);
            }
        }
    }

    if (cfg.noise_sigma > 0.0) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (out.valid(x, y)) {
                    out.at(x, y) = std::max(min_noisy_depth, out.at(x, y) + rng.normal(0.0, cfg.noise_sigma));
                }
            }
        }
    }

    for (int k = 0; k < cfg.occlusion.count; ++k) {
        const double frac = rng.uniform(cfg.occlusion.min_frac, cfg.occlusion.max_frac);
        const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
        const int rw = std::clamp(static_cast<int>(std::lround(std::sqrt(frac * aspect) * w)), 1, w);
        const int rh = std::clamp(static_cast<int>(std::lround(std::sqrt(frac / aspect) * h)), 1, h);
        const int rx = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - rw + 1)));
        const int ry = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - rh + 1)));
        for (int y = ry; y < ry + rh; ++y) {
            for (int x = rx; x < rx + rw; ++x) {
                out.at(x, y) = depth_sentinel;
            }
        }
        if (trace) {
            trace->occlusions.push_back({rx, ry, rw, rh});
        }
    }
    return out;
}

/// Half-widths of the uniform pose distribution; angles in radians.
struct PoseRange
{
    double yaw = std::numbers::pi / 3.0;
    double pitch = std::numbers::pi / 6.0;
    double roll = std::numbers::pi / 12.0;
    double scale_jitter = 0.05;      ///< relative
    double translation_jitter = 4.0; ///< pixels

    void validate() const
    {
        for (const double v : {yaw, pitch, roll, scale_jitter, translation_jitter}) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw InvalidInput("pose range values must be finite and >= 0");
            }
        }
        if (pitch >= std::numbers::pi / 2.0 || yaw >= std::numbers::pi / 2.0 || roll > std::numbers::pi) {
            throw InvalidInput("pose range exceeds the representable angles");
        }
        if (scale_jitter >= 1.0) {
            throw InvalidInput("scale_jitter must be below 1");
        }
    }
};

/**
 * Camera viewing the model under the given angles. The mean face's bounding
 * box centre projects to the raster centre plus \p shift, the scale is the
 * canonical scale times \p scale_factor, and tz keeps the nearest mean-shape
 * vertex at 600 mm.
 */
inline WeakPerspective posed_camera(const MorphableModel& model, double pitch, double yaw, double roll,
                                    double scale_factor, const Eigen::Vector2d& shift, int size)
{
    const WeakPerspective canonical = default_canonical_camera(model, size);
    const auto& mean = model.mean_shape();
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (int v = 0; v < model.n_vertices(); ++v) {
        lo = lo.cwiseMin(mean.segment<3>(3 * v));
        hi = hi.cwiseMax(mean.segment<3>(3 * v));
    }
    WeakPerspective cam;
    cam.rotation = euler_to_rotation(pitch, yaw, roll);
    cam.scale = canonical.scale * scale_factor;
    const Eigen::Vector3d c = cam.rotation * (0.5 * (lo + hi));
    double min_z = std::numeric_limits<double>::infinity();
    for (int v = 0; v < model.n_vertices(); ++v) {
        min_z = std::min(min_z, (cam.rotation * mean.segment<3>(3 * v)).z());
    }
    cam.translation = Eigen::Vector3d(size / 2.0 - cam.scale * c.x() + shift.x(),
                                      size / 2.0 - cam.scale * c.y() + shift.y(), 600.0 - min_z);
    return cam;
}

/// Projected (u, v, depth) of the model's landmark vertices.
inline std::vector<Eigen::Vector3d> observe_landmarks(const MorphableModel& model, const FaceShape& shape,
                                                      const WeakPerspective& cam)
{
    std::vector<Eigen::Vector3d> out;
    out.reserve(model.landmark_indices().size());
    for (const auto idx : model.landmark_indices()) {
        const Eigen::Vector3d p = cam.rotation * shape.vertex(static_cast<int>(idx));
        out.emplace_back(cam.scale * p.x() + cam.translation.x(), cam.scale * p.y() + cam.translation.y(),
                         p.z() + cam.translation.z());
    }
    return out;
}

struct DatagenConfig
{
    int n_subjects = 10;
    int images_per_subject = 40;
    int image_size = default_crop_size;
    double shape_range = 1.0;      ///< alpha uniform in [-r, r] (normalised units)
    double expression_range = 1.0; ///< beta uniform in [-r, r] (normalised units)
    PoseRange pose;
    AugmentConfig aug; ///< aug.seed is ignored; each image gets a derived seed
    double landmark_sigma = 0.0; ///< Gaussian noise on probe landmark depths (mm); 0 = exact projections
    bool gallery = true; ///< also write one clean, neutral, canonical image per subject
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const
    {
        if (n_subjects < 1 || images_per_subject < 1) {
            throw InvalidInput("need at least one subject and one image per subject");
        }
        if (image_size < 8) {
            throw InvalidInput("image_size must be at least 8");
        }
        if (!(shape_range >= 0.0) || !(expression_range >= 0.0) || !std::isfinite(shape_range) ||
            !std::isfinite(expression_range)) {
            throw InvalidInput("coefficient ranges must be finite and >= 0");
        }
        if (!(landmark_sigma >= 0.0) || !std::isfinite(landmark_sigma)) {
            throw InvalidInput("landmark_sigma must be finite and >= 0");
        }
        if (threads < 1) {
            throw InvalidInput("threads must be at least 1");
        }
        pose.validate();
        aug.validate();
    }
};

/// One written image. Paths are relative to the dataset directory.
struct SampleRecord
{
    std::string id;
    std::string subject;
    std::string role; ///< "gallery" or "probe"
    std::string depth;
    std::string landmarks;
    std::string params;
    Pose pose;
};

struct Dataset
{
    std::filesystem::path root;
    std::vector<SampleRecord> records; ///< per subject: gallery first, then probes
};

inline std::string format_manifest_line(const SampleRecord& r)
{
    return "{\"id\":\"" + r.id + "\",\"subject\":\"" + r.subject + "\",\"role\":\"" + r.role + "\",\"depth\":\"" +
           r.depth + "\",\"landmarks\":\"" + r.landmarks + "\",\"params\":\"" + r.params +
           "\",\"pose\":{\"scale\":" + format_double(r.pose.scale) + ",\"pitch\":" + format_double(r.pose.pitch) +
           ",\"yaw\":" + format_double(r.pose.yaw) + ",\"roll\":" + format_double(r.pose.roll) + "}}\n";
}

namespace detail {

inline std::string numbered(const std::string& prefix, int value, int digits)
{
    std::string s = std::to_string(value);
    if (static_cast<int>(s.size()) < digits) {
        s.insert(0, static_cast<std::size_t>(digits) - s.size(), '0');
    }
    return prefix + s;
}

struct SubjectOutput
{
    std::vector<SampleRecord> records;
    std::vector<std::filesystem::path> written;
    std::exception_ptr error;
};

inline void write_sample(const std::filesystem::path& root, SampleRecord& rec, const DepthImage& depth,
                         const std::vector<Eigen::Vector3d>& landmarks, const FaceParams& params,
                         std::vector<std::filesystem::path>& written)
{
    rec.depth = rec.id + ".pgm";
    rec.landmarks = rec.id + ".lm.txt";
    rec.params = rec.id + ".params.txt";
    write_depth(depth, root / rec.depth);
    written.push_back(root / rec.depth);
    write_landmarks(landmarks, root / rec.landmarks);
    written.push_back(root / rec.landmarks);
    write_params(params, root / rec.params);
    written.push_back(root / rec.params);
}

inline void generate_subject(const MorphableModel& model, const DatagenConfig& cfg, int s,
                             const std::filesystem::path& root, SubjectOutput& out)
{
    Random rng(cfg.seed ^ static_cast<std::uint64_t>(s));
    const int id_digits = std::max(3, static_cast<int>(std::to_string(cfg.n_subjects - 1).size()));
    const int img_digits = std::max(3, static_cast<int>(std::to_string(cfg.images_per_subject - 1).size()));
    const std::string subject = numbered("s", s, id_digits);
    const int size = cfg.image_size;

    FaceParams base = zero_params(model);
    for (int k = 0; k < model.num_shape(); ++k) {
        base.shape(k) = rng.uniform(-cfg.shape_range, cfg.shape_range);
    }

    if (cfg.gallery) {
        FaceParams p = base;
        const WeakPerspective cam = default_canonical_camera(model, size);
        p.pose = cam.to_pose();
        const FaceShape shape = synthesize_shape(model, p);
        SampleRecord rec{subject + "_gallery", subject, "gallery", "", "", "", p.pose};
        write_sample(root, rec, rasterize_depth(shape, model.triangles(), cam, size, size),
                     observe_landmarks(model, shape, cam), p, out.written);
        out.records.push_back(std::move(rec));
    }

    for (int i = 0; i < cfg.images_per_subject; ++i) {
        FaceParams p = base;
        for (int l = 0; l < model.num_expression(); ++l) {
            p.expression(l) = rng.uniform(-cfg.expression_range, cfg.expression_range);
        }
        const double yaw = rng.uniform(-cfg.pose.yaw, cfg.pose.yaw);
        const double pitch = rng.uniform(-cfg.pose.pitch, cfg.pose.pitch);
        const double roll = rng.uniform(-cfg.pose.roll, cfg.pose.roll);
        const double scale = 1.0 + rng.uniform(-cfg.pose.scale_jitter, cfg.pose.scale_jitter);
        const Eigen::Vector2d shift(rng.uniform(-cfg.pose.translation_jitter, cfg.pose.translation_jitter),
                                    rng.uniform(-cfg.pose.translation_jitter, cfg.pose.translation_jitter));
        const WeakPerspective cam = posed_camera(model, pitch, yaw, roll, scale, shift, size);
        p.pose = cam.to_pose();
        const FaceShape shape = synthesize_shape(model, p);

        AugmentConfig aug = cfg.aug;
        aug.seed = rng.bits();
        const DepthImage depth = augment(rasterize_depth(shape, model.triangles(), cam, size, size), aug);
        auto landmarks = observe_landmarks(model, shape, cam);
        if (cfg.landmark_sigma > 0.0) {
            for (auto& lm : landmarks) {
                lm.z() += rng.normal(0.0, cfg.landmark_sigma);
            }
        }
        SampleRecord rec{subject + "_" + numbered("", i, img_digits), subject, "probe", "", "", "", p.pose};
        write_sample(root, rec, depth, landmarks, p, out.written);
        out.records.push_back(std::move(rec));
    }
}

} /* namespace detail */

/**
 * Writes a synthetic dataset into \p out_dir: per subject one shape vector
 * (shared by all of that subject's images), an optional gallery image and
 * `images_per_subject` probes with random expression and pose, augmented.
 * Every image comes with "<id>.pgm", "<id>.lm.txt" and "<id>.params.txt".
 * The directory also receives manifest.jsonl (one record per image) and the
 * identity manifests gallery.tsv and probes.tsv, plus params.tsv mapping each
 * image id to its ground-truth parameter file. Subject s draws from a
 * generator seeded with seed ^ s, so output does not depend on `threads`.
 * On failure every file written so far is removed before rethrowing.
 */
inline Dataset generate_dataset(const MorphableModel& model, const DatagenConfig& cfg,
                                const std::filesystem::path& out_dir)
{
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    std::vector<detail::SubjectOutput> subjects(static_cast<std::size_t>(cfg.n_subjects));
    std::atomic<int> next{0};
    const auto worker = [&] {
        for (int s = next++; s < cfg.n_subjects; s = next++) {
            try {
                detail::generate_subject(model, cfg, s, out_dir, subjects[static_cast<std::size_t>(s)]);
            } catch (...) {
                subjects[static_cast<std::size_t>(s)].error = std::current_exception();
            }
        }
    };
    const int n_threads = std::min(cfg.threads, cfg.n_subjects);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
    }

    std::vector<std::filesystem::path> written;
    for (const auto& s : subjects) {
        written.insert(written.end(), s.written.begin(), s.written.end());
    }
    const auto cleanup = [&] {
        std::error_code ec;
        for (const auto& p : written) {
            std::filesystem::remove(p, ec);
        }
    };
    for (const auto& s : subjects) {
        if (s.error) {
            cleanup();
            std::rethrow_exception(s.error);
        }
    }

    Dataset ds;
    ds.root = out_dir;
    std::string manifest;
    std::vector<ManifestEntry> gallery;
    std::vector<ManifestEntry> probes;
    std::vector<ManifestEntry> params;
    for (auto& s : subjects) {
        for (auto& r : s.records) {
            manifest += format_manifest_line(r);
            (r.role == "gallery" ? gallery : probes).push_back({r.subject, r.depth});
            params.push_back({r.id, r.params});
            ds.records.push_back(std::move(r));
        }
    }
    try {
        write_file_atomic(out_dir / "manifest.jsonl", manifest);
        written.push_back(out_dir / "manifest.jsonl");
        if (cfg.gallery) {
            write_file_atomic(out_dir / "gallery.tsv", format_tsv_manifest(gallery));
            written.push_back(out_dir / "gallery.tsv");
        }
        write_file_atomic(out_dir / "probes.tsv", format_tsv_manifest(probes));
        written.push_back(out_dir / "probes.tsv");
        write_file_atomic(out_dir / "params.tsv", format_tsv_manifest(params));
    } catch (...) {
        cleanup();
        throw;
    }
    return ds;
}

} /* namespace pen */

#endif /* PEN_DATAGEN_HPP_ */
