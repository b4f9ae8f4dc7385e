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

#ifndef PEN_ESTIMATE_HPP_
#define PEN_ESTIMATE_HPP_

#include "pen/error.hpp"
#include "pen/image.hpp"
#include "pen/io.hpp"
#include "pen/model.hpp"
#include "pen/projection.hpp"

#include "Eigen/Core"
#include "Eigen/Dense"

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pen {

/**
 * What an estimator sees for one depth image. At least one of `hha` and
 * `landmarks` must be present. Landmarks are (u, v, depth) observations in
 * the order of the model's landmark indices. `reference` carries known
 * parameters for the passthrough estimator (e.g. stored ground truth).
 */
struct EstimatorInput
{
    DepthImage depth;
    std::optional<HhaImage> hha;
    std::optional<std::vector<Eigen::Vector3d>> landmarks;
    std::optional<FaceParams> reference;

    void validate(const MorphableModel& model) const
    {
        if (!hha && !landmarks) {
            throw InvalidInput("estimator input needs an HHA image or landmarks");
        }
        if (landmarks && landmarks->size() != model.landmark_indices().size()) {
            throw InvalidInput("expected " + std::to_string(model.landmark_indices().size()) + " landmarks, got " +
                               std::to_string(landmarks->size()));
        }
    }
};

struct EstimatorOutput
{
    FaceParams params;
    bool converged = false;
    int iterations = 0;
    double final_residual = 0.0; ///< RMS landmark residual, when landmarks were used
    std::vector<double> objective_log; ///< objective after every half-step (fitters only)
};

/**
 * Estimator contract: depth image (plus HHA and/or landmarks) to 3DMM
 * parameters. Implementations are immutable after construction, deterministic
 * for a fixed input, and report every failure as EstimationError (or a
 * subclass). Invalid input is rejected with InvalidInput.
 */
class Estimator
{
public:
    virtual ~Estimator() = default;
    virtual EstimatorOutput estimate(const EstimatorInput& input, const MorphableModel& model) const = 0;
    virtual std::string name() const = 0;
};

/// Returns the reference parameters carried by the input unchanged.
class PassthroughEstimator final : public Estimator
{
public:
    EstimatorOutput estimate(const EstimatorInput& input, const MorphableModel& model) const override
    {
        input.validate(model);
        if (!input.reference) {
            throw EstimationError("passthrough estimator needs reference parameters");
        }
        const auto& p = *input.reference;
        if (p.shape.size() != model.num_shape() || p.expression.size() != model.num_expression()) {
            throw EstimationError("reference parameters do not match the model dimensions");
        }
        try {
            p.validate();
        } catch (const InvalidInput& e) {
            throw EstimationError(std::string("reference parameters invalid: ") + e.what());
        }
        EstimatorOutput out;
        out.params = p;
        out.converged = true;
        return out;
    }

    std::string name() const override { return "passthrough"; }
};

struct LandmarkFitConfig
{
    int outer_iters = 10;
    double ridge_shape = 1e-2;
    double ridge_expr = 1e-2;
    double tol = 1e-8;
};

/**
 * Alternating least-squares fit of pose, shape and expression to landmarks.
 *
 * Minimises sum_i |project(theta, S_i(a, b)) - obs_i|^2 + ls |a|^2 + le |b|^2
 * over the landmark vertices. Each outer iteration (a) refits the camera to
 * the current landmark vertices, (b) solves the shape coefficients by ridge
 * regression with camera and expression fixed, then the expression
 * coefficients likewise. The camera step keeps the previous camera when the
 * refit is not better, so the objective never increases; the objective after
 * every half-step is recorded in EstimatorOutput::objective_log.
 */
class LandmarkFitter final : public Estimator
{
public:
    explicit LandmarkFitter(LandmarkFitConfig config = {}) : config_(config)
    {
        if (config_.outer_iters < 1 || config_.ridge_shape < 0.0 || config_.ridge_expr < 0.0 || config_.tol < 0.0) {
            throw InvalidInput("invalid landmark fitter configuration");
        }
    }

    const LandmarkFitConfig& config() const { return config_; }

    std::string name() const override { return "landmark"; }

    EstimatorOutput estimate(const EstimatorInput& input, const MorphableModel& model) const override
    {
        input.validate(model);
        if (!input.landmarks) {
            throw InvalidInput("landmark fitter needs landmarks");
        }
        return fit(*input.landmarks, model);
    }

    EstimatorOutput fit(const std::vector<Eigen::Vector3d>& observed, const MorphableModel& model) const
    {
        using Eigen::MatrixXd;
        using Eigen::VectorXd;

        const auto& idx = model.landmark_indices();
        const auto m = static_cast<Eigen::Index>(idx.size());
        if (static_cast<Eigen::Index>(observed.size()) != m) {
            throw InvalidInput("landmark count does not match the model");
        }
        if (m < 7) {
            throw InvalidInput("landmark fitting needs at least 7 landmarks");
        }
        for (const auto& o : observed) {
            if (!o.allFinite()) {
                throw InvalidInput("non-finite landmark observation");
            }
        }
        const int k = model.num_shape();
        const int l = model.num_expression();

        // Landmark rows of the mean and of the scaled bases.
        VectorXd mean(3 * m);
        MatrixXd shape_rows(3 * m, k);
        MatrixXd expr_rows(3 * m, l);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto v = static_cast<Eigen::Index>(idx[i]);
            mean.segment<3>(3 * i) = model.mean_shape().segment<3>(3 * v);
            shape_rows.middleRows<3>(3 * i) =
                model.shape_basis().middleRows<3>(3 * v) * model.shape_scales().asDiagonal();
            expr_rows.middleRows<3>(3 * i) =
                model.expression_basis().middleRows<3>(3 * v) * model.expression_scales().asDiagonal();
        }

        VectorXd alpha = VectorXd::Zero(k);
        VectorXd beta = VectorXd::Zero(l);
        std::vector<Eigen::Vector3d> vertices(m);
        const auto update_vertices = [&] {
            const VectorXd flat = mean + shape_rows * alpha + expr_rows * beta;
            for (Eigen::Index i = 0; i < m; ++i) {
                vertices[i] = flat.segment<3>(3 * i);
            }
        };
        const auto data_term = [&](const WeakPerspective& cam) {
            return projection_sq_error(cam, vertices, observed);
        };
        const auto objective = [&](const WeakPerspective& cam) {
            return data_term(cam) + config_.ridge_shape * alpha.squaredNorm() +
                   config_.ridge_expr * beta.squaredNorm();
        };
        // Ridge solve for one coefficient block with everything else fixed.
        const auto solve_block = [&](const WeakPerspective& cam, const MatrixXd& rows, const VectorXd& fixed_offset,
                                     double ridge) {
            Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
            d(0, 0) = d(1, 1) = cam.scale;
            const Eigen::Matrix3d dr = d * cam.rotation;
            MatrixXd a(3 * m, rows.cols());
            VectorXd b(3 * m);
            for (Eigen::Index i = 0; i < m; ++i) {
                a.middleRows<3>(3 * i) = dr * rows.middleRows<3>(3 * i);
                b.segment<3>(3 * i) = observed[i] - cam.translation - dr * fixed_offset.segment<3>(3 * i);
            }
            MatrixXd normal = a.transpose() * a;
            normal.diagonal().array() += ridge;
            return VectorXd(normal.ldlt().solve(a.transpose() * b));
        };

        EstimatorOutput out;
        update_vertices();
        WeakPerspective cam;
        bool have_cam = false;
        double previous = 0.0;
        for (int iter = 0; iter < config_.outer_iters; ++iter) {
            WeakPerspective refit;
            try {
                refit = fit_weak_perspective(vertices, observed);
            } catch (const Error& e) {
                throw EstimationError(std::string("camera fit failed: ") + e.what());
            }
            if (!have_cam || data_term(refit) < data_term(cam)) {
                cam = refit;
                have_cam = true;
            }
            out.objective_log.push_back(objective(cam));

            // Ridge solutions are exact block minimisers; the guards only absorb rounding.
            const double before_shape = out.objective_log.back();
            const VectorXd old_alpha = alpha;
            alpha = solve_block(cam, shape_rows, mean + expr_rows * beta, config_.ridge_shape);
            update_vertices();
            if (!(objective(cam) <= before_shape)) {
                alpha = old_alpha;
                update_vertices();
            }
            out.objective_log.push_back(objective(cam));

            const double before_expr = out.objective_log.back();
            const VectorXd old_beta = beta;
            beta = solve_block(cam, expr_rows, mean + shape_rows * alpha, config_.ridge_expr);
            update_vertices();
            if (!(objective(cam) <= before_expr)) {
                beta = old_beta;
                update_vertices();
            }
            const double current = objective(cam);
            out.objective_log.push_back(current);

            if (!std::isfinite(current) || !alpha.allFinite() || !beta.allFinite()) {
                throw EstimationError("landmark fit produced non-finite values");
            }
            out.iterations = iter + 1;
            if (iter > 0 && previous - current < config_.tol) {
                out.converged = true;
                break;
            }
            if (data_term(cam) == 0.0) {
                out.converged = true;
                break;
            }
            previous = current;
        }

        out.params.shape = alpha;
        out.params.expression = beta;
        try {
            out.params.pose = cam.to_pose();
        } catch (const Error& e) {
            throw EstimationError(std::string("camera is not a valid pose: ") + e.what());
        }
        out.final_residual = std::sqrt(data_term(cam) / static_cast<double>(m));
        return out;
    }

private:
    LandmarkFitConfig config_;
};

/// Mean squared difference over all 7 + K + L values (pose, shape, expression).
inline double param_l2_loss(const FaceParams& est, const FaceParams& gt)
{
    if (est.shape.size() != gt.shape.size() || est.expression.size() != gt.expression.size()) {
        throw InvalidInput("parameter dimensions differ");
    }
    const Eigen::VectorXd diff = est.to_vector() - gt.to_vector();
    return diff.squaredNorm() / static_cast<double>(diff.size());
}

/// Parameter exchange text: one decimal per line, pose (7), shape (K), expression (L).
inline std::string format_params(const FaceParams& p)
{
    const Eigen::VectorXd v = p.to_vector();
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out += format_double(v(i));
        out += '\n';
    }
    return out;
}

/**
 * Parses the exchange format for a model with \p num_shape and
 * \p num_expression coefficients. Throws ParamParseError (with the 1-based
 * line) for a bad token and ParamLengthError for a wrong value count. A single
 * trailing newline is allowed.
 */
inline FaceParams parse_params(const std::string& text, int num_shape, int num_expression)
{
    auto lines = split_lines(text);
    while (!lines.empty() && split_whitespace(lines.back()).empty()) {
        lines.pop_back();
    }
    const auto expected = static_cast<std::size_t>(Pose::size + num_shape + num_expression);
    Eigen::VectorXd v(static_cast<Eigen::Index>(lines.size()));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto tokens = split_whitespace(lines[i]);
        if (tokens.size() != 1) {
            throw ParamParseError(i + 1, "expected exactly one value");
        }
        double value = 0.0;
        if (!parse_double(tokens[0], value)) {
            throw ParamParseError(i + 1, "'" + tokens[0] + "' is not a finite decimal");
        }
        v(static_cast<Eigen::Index>(i)) = value;
    }
    if (lines.size() != expected) {
        throw ParamLengthError(expected, lines.size());
    }
    auto params = FaceParams::from_vector(v, num_shape, num_expression);
    try {
        params.validate();
    } catch (const InvalidInput& e) {
        throw EstimationError(std::string("parameter file: ") + e.what());
    }
    return params;
}

inline FaceParams read_params(const std::filesystem::path& path, const MorphableModel& model)
{
    return parse_params(read_file(path), model.num_shape(), model.num_expression());
}

inline void write_params(const FaceParams& p, const std::filesystem::path& path)
{
    write_file_atomic(path, format_params(p));
}

/// Landmark text: one "u v depth" triple per line.
inline std::string format_landmarks(const std::vector<Eigen::Vector3d>& landmarks)
{
    std::string out;
    for (const auto& p : landmarks) {
        out += format_double(p.x()) + ' ' + format_double(p.y()) + ' ' + format_double(p.z()) + '\n';
    }
    return out;
}

inline std::vector<Eigen::Vector3d> parse_landmarks(const std::string& text)
{
    std::vector<Eigen::Vector3d> out;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto tokens = split_whitespace(lines[i]);
        if (tokens.empty()) {
            continue;
        }
        if (tokens.size() != 3) {
            throw ParseError("landmarks line " + std::to_string(i + 1), "expected 'u v depth'");
        }
        Eigen::Vector3d p;
        for (int c = 0; c < 3; ++c) {
            if (!parse_double(tokens[c], p(c))) {
                throw ParseError("landmarks line " + std::to_string(i + 1), "'" + tokens[c] + "' is not a decimal");
            }
        }
        out.push_back(p);
    }
    return out;
}

inline std::vector<Eigen::Vector3d> read_landmarks(const std::filesystem::path& path)
{
    return parse_landmarks(read_file(path));
}

inline void write_landmarks(const std::vector<Eigen::Vector3d>& landmarks, const std::filesystem::path& path)
{
    write_file_atomic(path, format_landmarks(landmarks));
}

} /* namespace pen */

#endif /* PEN_ESTIMATE_HPP_ */
