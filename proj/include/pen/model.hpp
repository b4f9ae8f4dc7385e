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

#ifndef PEN_MODEL_HPP_
#define PEN_MODEL_HPP_

#include "pen/error.hpp"

#include "Eigen/Core"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pen {

using Triangle = std::array<std::uint32_t, 3>;

/**
 * Weak perspective pose: one scale, three Euler angles (radians, intrinsic
 * X-Y-Z order: pitch about x, yaw about y, roll about z) and a translation
 * (tx, ty in raster units, tz in millimetres).
 *
 * The seven values are serialised in the order s, pitch, yaw, roll, tx, ty, tz.
 */
struct Pose
{
    double scale = 1.0;
    double pitch = 0.0;
    double yaw = 0.0;
    double roll = 0.0;
    double tx = 0.0;
    double ty = 0.0;
    double tz = 0.0;

    static constexpr int size = 7;

    std::array<double, 7> to_array() const { return {scale, pitch, yaw, roll, tx, ty, tz}; }

    static Pose from_array(const std::array<double, 7>& v)
    {
        return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
    }

    bool operator==(const Pose&) const = default;
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::remainder(a, two_pi); // [-pi, pi]
    if (a <= -std::numbers::pi) {
        a += two_pi;
    }
    return a;
}

/**
 * Morphable model coefficients. Shape and expression coefficients are in
 * normalised units (raw coefficient divided by the model's per-axis scale).
 */
struct FaceParams
{
    Eigen::VectorXd shape;
    Eigen::VectorXd expression;
    Pose pose;

    /// Throws InvalidInput unless scale > 0, every angle is in (-pi, pi] and all values are finite.
    void validate() const
    {
        const auto p = pose.to_array();
        for (double v : p) {
            if (!std::isfinite(v)) {
                throw InvalidInput("pose contains a non-finite value");
            }
        }
        if (!(pose.scale > 0.0)) {
            throw InvalidInput("pose scale must be positive");
        }
        for (double a : {pose.pitch, pose.yaw, pose.roll}) {
            if (!(a > -std::numbers::pi && a <= std::numbers::pi)) {
                throw InvalidInput("pose angle outside (-pi, pi]");
            }
        }
        if (!shape.allFinite() || !expression.allFinite()) {
            throw InvalidInput("coefficients contain a non-finite value");
        }
    }

    /// Flat vector in exchange order: pose (7), shape (K), expression (L).
    Eigen::VectorXd to_vector() const
    {
        Eigen::VectorXd v(Pose::size + shape.size() + expression.size());
        const auto p = pose.to_array();
        for (int i = 0; i < Pose::size; ++i) {
            v(i) = p[i];
        }
        v.segment(Pose::size, shape.size()) = shape;
        v.tail(expression.size()) = expression;
        return v;
    }

    static FaceParams from_vector(const Eigen::VectorXd& v, int num_shape, int num_expression)
    {
        if (v.size() != Pose::size + num_shape + num_expression) {
            throw InvalidInput("parameter vector has " + std::to_string(v.size()) + " values, expected " +
                               std::to_string(Pose::size + num_shape + num_expression));
        }
        FaceParams out;
        std::array<double, 7> p{};
        for (int i = 0; i < Pose::size; ++i) {
            p[i] = v(i);
        }
        out.pose = Pose::from_array(p);
        out.shape = v.segment(Pose::size, num_shape);
        out.expression = v.tail(num_expression);
        return out;
    }

    bool operator==(const FaceParams& o) const
    {
        return pose == o.pose && shape == o.shape && expression == o.expression;
    }
};

/// A 3D face as a flat coordinate vector x1, y1, z1, ..., xn, yn, zn (millimetres).
struct FaceShape
{
    Eigen::VectorXd coords;

    int n_vertices() const { return static_cast<int>(coords.size() / 3); }

    Eigen::Vector3d vertex(int i) const { return coords.segment<3>(3 * i); }

    bool operator==(const FaceShape& o) const { return coords == o.coords; }
};

/**
 * A linear 3D morphable model: mean shape plus shape (identity) and
 * expression bases, with the triangle topology and landmark vertex indices.
 *
 * Bases are stored column-wise, one 3n column per coefficient. Each column
 * has a positive scale; coefficients handed to synthesize_shape() are divided
 * by that scale (normalised units).
 *
 * Immutable after construction; the constructor enforces every invariant.
 */
class MorphableModel
{
public:
    struct Issue
    {
        std::string field;
        std::string message;
        bool topology = false;
    };

    MorphableModel(Eigen::VectorXd mean_shape, Eigen::MatrixXd shape_basis, Eigen::MatrixXd expression_basis,
                   Eigen::VectorXd shape_scales, Eigen::VectorXd expression_scales, std::vector<Triangle> triangles,
                   std::vector<std::uint32_t> landmark_indices)
        : mean_shape_(std::move(mean_shape)), shape_basis_(std::move(shape_basis)),
          expression_basis_(std::move(expression_basis)), shape_scales_(std::move(shape_scales)),
          expression_scales_(std::move(expression_scales)), triangles_(std::move(triangles)),
          landmark_indices_(std::move(landmark_indices))
    {
        if (auto issue = check(); issue) {
            throw InvalidInput(issue->field + ": " + issue->message);
        }
    }

    int n_vertices() const { return static_cast<int>(mean_shape_.size() / 3); }
    int num_shape() const { return static_cast<int>(shape_basis_.cols()); }
    int num_expression() const { return static_cast<int>(expression_basis_.cols()); }
    /// Length of the exchange vector: 7 pose values plus K plus L.
    int num_params() const { return Pose::size + num_shape() + num_expression(); }

    const Eigen::VectorXd& mean_shape() const { return mean_shape_; }
    const Eigen::MatrixXd& shape_basis() const { return shape_basis_; }
    const Eigen::MatrixXd& expression_basis() const { return expression_basis_; }
    const Eigen::VectorXd& shape_scales() const { return shape_scales_; }
    const Eigen::VectorXd& expression_scales() const { return expression_scales_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }
    const std::vector<std::uint32_t>& landmark_indices() const { return landmark_indices_; }

    bool operator==(const MorphableModel& o) const
    {
        return mean_shape_ == o.mean_shape_ && shape_basis_ == o.shape_basis_ &&
               expression_basis_ == o.expression_basis_ && shape_scales_ == o.shape_scales_ &&
               expression_scales_ == o.expression_scales_ && triangles_ == o.triangles_ &&
               landmark_indices_ == o.landmark_indices_;
    }

    /**
     * Checks the model invariants on raw arrays. Used by the constructor and by
     * the file loader, which maps the returned issue onto its own error types.
     */
    static std::optional<Issue> check(const Eigen::VectorXd& mean, const Eigen::MatrixXd& shape_basis,
                                      const Eigen::MatrixXd& expr_basis, const Eigen::VectorXd& shape_scales,
                                      const Eigen::VectorXd& expr_scales, const std::vector<Triangle>& triangles,
                                      const std::vector<std::uint32_t>& landmarks)
    {
        if (mean.size() == 0 || mean.size() % 3 != 0) {
            return Issue{"mean_shape", "length must be a positive multiple of 3"};
        }
        const auto len = mean.size();
        const auto n = static_cast<std::uint64_t>(len / 3);
        if (shape_basis.rows() != len || shape_basis.cols() < 1) {
            return Issue{"shape_basis", "needs at least one column of length 3*n_vertices"};
        }
        if (expr_basis.rows() != len || expr_basis.cols() < 1) {
            return Issue{"expression_basis", "needs at least one column of length 3*n_vertices"};
        }
        if (shape_scales.size() != shape_basis.cols() || !(shape_scales.array() > 0.0).all() ||
            !shape_scales.allFinite()) {
            return Issue{"shape_scales", "one positive finite scale per shape basis vector required"};
        }
        if (expr_scales.size() != expr_basis.cols() || !(expr_scales.array() > 0.0).all() ||
            !expr_scales.allFinite()) {
            return Issue{"expression_scales", "one positive finite scale per expression basis vector required"};
        }
        if (!mean.allFinite() || !shape_basis.allFinite() || !expr_basis.allFinite()) {
            return Issue{"mean_shape", "model arrays must be finite"};
        }
        for (std::size_t t = 0; t < triangles.size(); ++t) {
            const auto& tri = triangles[t];
            if (tri[0] >= n || tri[1] >= n || tri[2] >= n) {
                return Issue{"triangles", "triangle " + std::to_string(t) + " references a vertex >= n_vertices",
                             true};
            }
            if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
                return Issue{"triangles", "triangle " + std::to_string(t) + " is degenerate", true};
            }
        }
        if (landmarks.size() < 7) {
            return Issue{"landmarks", "at least 7 landmark indices required", true};
        }
        for (auto idx : landmarks) {
            if (idx >= n) {
                return Issue{"landmarks", "landmark index " + std::to_string(idx) + " >= n_vertices", true};
            }
        }
        return std::nullopt;
    }

private:
    std::optional<Issue> check() const
    {
        return check(mean_shape_, shape_basis_, expression_basis_, shape_scales_, expression_scales_, triangles_,
                     landmark_indices_);
    }

    Eigen::VectorXd mean_shape_;
    Eigen::MatrixXd shape_basis_;
    Eigen::MatrixXd expression_basis_;
    Eigen::VectorXd shape_scales_;
    Eigen::VectorXd expression_scales_;
    std::vector<Triangle> triangles_;
    std::vector<std::uint32_t> landmark_indices_;
};

/**
 * Linear shape synthesis: mean + sum_k (a_k * scale_k) S_k + sum_l (b_l * scale_l) E_l.
 * The pose in \p params is ignored.
 */
inline FaceShape synthesize_shape(const MorphableModel& model, const FaceParams& params)
{
    if (params.shape.size() != model.num_shape() || params.expression.size() != model.num_expression()) {
        throw InvalidInput("coefficient dimensions (" + std::to_string(params.shape.size()) + ", " +
                           std::to_string(params.expression.size()) + ") do not match model (" +
                           std::to_string(model.num_shape()) + ", " + std::to_string(model.num_expression()) + ")");
    }
    const Eigen::VectorXd raw_shape = params.shape.cwiseProduct(model.shape_scales());
    const Eigen::VectorXd raw_expr = params.expression.cwiseProduct(model.expression_scales());
    FaceShape out;
    out.coords = model.mean_shape() + model.shape_basis() * raw_shape + model.expression_basis() * raw_expr;
    return out;
}

/// Raw coefficients to normalised units (divide by the per-axis scale).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> normalize_params(const Eigen::VectorXd& raw_shape,
                                                                    const Eigen::VectorXd& raw_expr,
                                                                    const MorphableModel& model)
{
    if (raw_shape.size() != model.num_shape() || raw_expr.size() != model.num_expression()) {
        throw InvalidInput("coefficient dimensions do not match model");
    }
    return {raw_shape.cwiseQuotient(model.shape_scales()), raw_expr.cwiseQuotient(model.expression_scales())};
}

/// Inverse of normalize_params().
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> denormalize_params(const Eigen::VectorXd& shape,
                                                                      const Eigen::VectorXd& expr,
                                                                      const MorphableModel& model)
{
    if (shape.size() != model.num_shape() || expr.size() != model.num_expression()) {
        throw InvalidInput("coefficient dimensions do not match model");
    }
    return {shape.cwiseProduct(model.shape_scales()), expr.cwiseProduct(model.expression_scales())};
}

/// Zero coefficients and identity pose sized for \p model.
inline FaceParams zero_params(const MorphableModel& model)
{
    FaceParams p;
    p.shape = Eigen::VectorXd::Zero(model.num_shape());
    p.expression = Eigen::VectorXd::Zero(model.num_expression());
    return p;
}

} /* namespace pen */

#endif /* PEN_MODEL_HPP_ */
