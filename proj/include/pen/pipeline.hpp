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

#ifndef PEN_PIPELINE_HPP_
#define PEN_PIPELINE_HPP_

#include "pen/error.hpp"
#include "pen/estimate.hpp"
#include "pen/hha.hpp"
#include "pen/image.hpp"
#include "pen/model.hpp"
#include "pen/projection.hpp"
#include "pen/render.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace pen {

/// Everything needed to render a pose-and-expression-normalised (PEN) image.
struct PenConfig
{
    WeakPerspective canonical_pose;
    int out_size = default_crop_size;
    Intrinsics intrinsics;
    HhaConfig hha;

    void validate() const
    {
        if (out_size < 8) {
            throw InvalidInput("PEN out_size must be at least 8");
        }
        canonical_pose.validate();
        intrinsics.validate();
        hha.validate();
    }
};

/**
 * Frontal camera framing the mean face: identity rotation, scale such that
 * the larger side of the mean shape's x/y bounding box spans 90% of the
 * raster, box centred, and tz placing the nearest vertex (nose tip) at 600 mm.
 */
inline WeakPerspective default_canonical_camera(const MorphableModel& model, int out_size = default_crop_size)
{
    const auto& mean = model.mean_shape();
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (int v = 0; v < model.n_vertices(); ++v) {
        lo = lo.cwiseMin(mean.segment<3>(3 * v));
        hi = hi.cwiseMax(mean.segment<3>(3 * v));
    }
    const double extent = std::max(hi.x() - lo.x(), hi.y() - lo.y());
    if (!(extent > 0.0)) {
        throw InvalidInput("mean shape has no extent in the image plane");
    }
    WeakPerspective cam;
    cam.scale = 0.9 * out_size / extent;
    cam.translation = Eigen::Vector3d(out_size / 2.0 - cam.scale * 0.5 * (lo.x() + hi.x()),
                                      out_size / 2.0 - cam.scale * 0.5 * (lo.y() + hi.y()), 600.0 - lo.z());
    return cam;
}

/// PenConfig with the default canonical camera and matching surrogate intrinsics.
inline PenConfig default_pen_config(const MorphableModel& model, int out_size = default_crop_size)
{
    PenConfig cfg;
    cfg.canonical_pose = default_canonical_camera(model, out_size);
    cfg.out_size = out_size;
    cfg.intrinsics = surrogate_intrinsics(cfg.canonical_pose.scale, out_size, out_size);
    return cfg;
}

/// Renders shape coefficients \p shape with zero expression through the canonical camera.
inline DepthImage render_pen(const MorphableModel& model, const Eigen::VectorXd& shape, const PenConfig& cfg)
{
    FaceParams p = zero_params(model);
    if (shape.size() != model.num_shape()) {
        throw InvalidInput("shape coefficient count does not match the model");
    }
    p.shape = shape;
    return rasterize_depth(synthesize_shape(model, p), model.triangles(), cfg.canonical_pose, cfg.out_size,
                           cfg.out_size);
}

/// One image to normalise, with optional side information for the estimator.
struct PenInput
{
    std::string id;
    DepthImage depth;
    std::optional<std::vector<Eigen::Vector3d>> landmarks;
    std::optional<FaceParams> reference;
};

struct PenResult
{
    DepthImage pen;
    EstimatorOutput estimate; ///< raw estimate, kept for auditing
};

/**
 * Depth image to PEN image: HHA encoding, parameter estimation, then the
 * estimated shape is re-rendered with zero expression through the canonical
 * camera. Estimated expression and pose only reach the audit record.
 * Failures are rethrown as PipelineError labelled "input", "hha",
 * "estimate" or "render"; no partial image is returned.
 */
inline PenResult normalize_depth_image(const PenInput& input, const MorphableModel& model,
                                       const Estimator& estimator, const PenConfig& cfg)
{
    try {
        cfg.validate();
        if (input.depth.empty()) {
            throw InvalidInput("depth image is empty");
        }
        input.depth.validate();
    } catch (const Error& e) {
        throw PipelineError("input", e.what());
    }

    EstimatorInput est_in;
    est_in.depth = input.depth;
    est_in.landmarks = input.landmarks;
    est_in.reference = input.reference;
    try {
        est_in.hha = depth_to_hha(input.depth, cfg.intrinsics, cfg.hha);
    } catch (const Error& e) {
        throw PipelineError("hha", e.what());
    }

    PenResult out;
    try {
        out.estimate = estimator.estimate(est_in, model);
        out.estimate.params.validate();
        if (out.estimate.params.shape.size() != model.num_shape()) {
            throw EstimationError("estimator returned the wrong number of shape coefficients");
        }
    } catch (const Error& e) {
        throw PipelineError("estimate", e.what());
    }

    try {
        out.pen = render_pen(model, out.estimate.params.shape, cfg);
    } catch (const Error& e) {
        throw PipelineError("render", e.what());
    }
    return out;
}

/// Convenience overload without side information.
inline PenResult normalize_depth_image(const DepthImage& depth, const MorphableModel& model,
                                       const Estimator& estimator, const PenConfig& cfg,
                                       std::optional<std::vector<Eigen::Vector3d>> landmarks = std::nullopt)
{
    return normalize_depth_image(PenInput{"", depth, std::move(landmarks), std::nullopt}, model, estimator, cfg);
}

struct BatchResult
{
    std::string id;
    std::optional<PenResult> result;
    std::string stage; ///< failing stage when result is empty
    std::string error;

    bool ok() const { return result.has_value(); }
};

/**
 * Normalises every input; item failures are recorded in place and do not
 * affect other items. Output order equals input order for any thread count.
 */
inline std::vector<BatchResult> batch_normalize(const std::vector<PenInput>& inputs, const MorphableModel& model,
                                                const Estimator& estimator, const PenConfig& cfg, int threads = 1)
{
    std::vector<BatchResult> results(inputs.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < inputs.size(); i = next++) {
            auto& r = results[i];
            r.id = inputs[i].id;
            try {
                r.result = normalize_depth_image(inputs[i], model, estimator, cfg);
            } catch (const PipelineError& e) {
                r.stage = e.stage();
                r.error = e.what();
            } catch (const Error& e) {
                r.stage = "unknown";
                r.error = e.what();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(inputs.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
    }
    return results;
}

} /* namespace pen */

#endif /* PEN_PIPELINE_HPP_ */
