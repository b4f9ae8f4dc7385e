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

#ifndef PEN_TOY_MODEL_HPP_
#define PEN_TOY_MODEL_HPP_

#include "pen/model.hpp"
#include "pen/random.hpp"

#include "Eigen/Dense"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace pen {

/// Semi-axes of the toy face (millimetres). The front pole (nose tip) sits at z = -depth.
struct ToyFaceGeometry
{
    double half_width = 70.0;
    double half_height = 90.0;
    double depth = 60.0;
    double max_polar_angle = 0.45 * std::numbers::pi;
};

namespace detail {

// Distributes `total` vertices over rings with weights, at least 3 per ring (largest remainder).
inline std::vector<int> ring_counts(int total, const std::vector<double>& weights)
{
    const int rings = static_cast<int>(weights.size());
    std::vector<int> counts(rings, 3);
    int remaining = total - 3 * rings;
    double wsum = 0.0;
    for (double w : weights) {
        wsum += w;
    }
    std::vector<double> remainders(rings);
    int assigned = 0;
    for (int k = 0; k < rings; ++k) {
        const double share = remaining * weights[k] / wsum;
        const int whole = static_cast<int>(std::floor(share));
        counts[k] += whole;
        assigned += whole;
        remainders[k] = share - whole;
    }
    std::vector<int> order(rings);
    for (int k = 0; k < rings; ++k) {
        order[k] = k;
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainders[a] > remainders[b]; });
    for (int i = 0; i < remaining - assigned; ++i) {
        counts[order[i % rings]] += 1;
    }
    return counts;
}

// Triangle strip between two concentric rings with possibly different vertex counts.
inline void zip_rings(int inner_start, int inner_count, int outer_start, int outer_count,
                      std::vector<Triangle>& triangles)
{
    int i = 0;
    int j = 0;
    const auto u = [](int x) { return static_cast<std::uint32_t>(x); };
    while (i < inner_count || j < outer_count) {
        const double next_inner = static_cast<double>(i + 1) / inner_count;
        const double next_outer = static_cast<double>(j + 1) / outer_count;
        const bool advance_inner = j == outer_count || (i < inner_count && next_inner <= next_outer);
        const int a = inner_start + (i % inner_count);
        const int b = outer_start + (j % outer_count);
        if (advance_inner) {
            triangles.push_back({u(a), u(inner_start + ((i + 1) % inner_count)), u(b)});
            ++i;
        } else {
            triangles.push_back({u(a), u(outer_start + ((j + 1) % outer_count)), u(b)});
            ++j;
        }
    }
}

} /* namespace detail */

/**
 * Builds a small deterministic morphable model for tests and demos.
 *
 * The mean shape is a half-ellipsoid facing -z (towards the camera) meshed as
 * a pole vertex plus concentric rings; triangles are wound so their normals
 * point outward. Shape and expression bases are random smooth displacement
 * fields (low-frequency Fourier features) with the seven infinitesimal weak
 * perspective motions of the mean projected out, orthonormalised by SVD; the
 * singular values become the per-coefficient scales. Landmarks are chosen by
 * farthest-point sampling starting at the pole.
 */
inline MorphableModel make_toy_model(std::uint64_t seed, int n_vertices, int num_shape, int num_expression,
                                     const ToyFaceGeometry& geometry = {})
{
    if (n_vertices < 12) {
        throw InvalidInput("toy model needs n_vertices >= 12");
    }
    if (num_shape < 1 || num_expression < 1) {
        throw InvalidInput("toy model needs K >= 1 and L >= 1");
    }
    if (num_shape + num_expression + 7 > 3 * n_vertices) {
        throw InvalidInput("K + L + 7 must not exceed 3 * n_vertices");
    }
    using Eigen::MatrixXd;
    using Eigen::VectorXd;

    const int n = n_vertices;
    const int ring_vertices = n - 1;
    int rings = std::max(2, static_cast<int>(std::floor(std::sqrt(ring_vertices / 3.0))));
    rings = std::min(rings, ring_vertices / 3);

    std::vector<double> polar(rings);
    std::vector<double> weights(rings);
    for (int k = 0; k < rings; ++k) {
        polar[k] = geometry.max_polar_angle * (k + 1) / rings;
        weights[k] = std::sin(polar[k]);
    }
    const auto counts = detail::ring_counts(ring_vertices, weights);

    VectorXd mean(3 * n);
    mean.segment<3>(0) = Eigen::Vector3d(0.0, 0.0, -geometry.depth);
    std::vector<int> starts(rings);
    int next = 1;
    for (int k = 0; k < rings; ++k) {
        starts[k] = next;
        for (int i = 0; i < counts[k]; ++i) {
            const double azimuth = 2.0 * std::numbers::pi * i / counts[k];
            const double s = std::sin(polar[k]);
            mean.segment<3>(3 * next) = Eigen::Vector3d(geometry.half_width * s * std::cos(azimuth),
                                                        geometry.half_height * s * std::sin(azimuth),
                                                        -geometry.depth * std::cos(polar[k]));
            ++next;
        }
    }

    std::vector<Triangle> triangles;
    for (int i = 0; i < counts[0]; ++i) {
        triangles.push_back({0u, static_cast<std::uint32_t>(starts[0] + i),
                             static_cast<std::uint32_t>(starts[0] + (i + 1) % counts[0])});
    }
    for (int k = 0; k + 1 < rings; ++k) {
        detail::zip_rings(starts[k], counts[k], starts[k + 1], counts[k + 1], triangles);
    }
    // Outward winding: the ellipsoid centre is the origin and the mesh is convex.
    for (auto& tri : triangles) {
        const Eigen::Vector3d a = mean.segment<3>(3 * tri[0]);
        const Eigen::Vector3d b = mean.segment<3>(3 * tri[1]);
        const Eigen::Vector3d c = mean.segment<3>(3 * tri[2]);
        const Eigen::Vector3d normal = (b - a).cross(c - a);
        if (normal.dot((a + b + c) / 3.0) < 0.0) {
            std::swap(tri[1], tri[2]);
        }
    }

    // Infinitesimal rigid motions plus in-plane scaling of the mean.
    MatrixXd motions = MatrixXd::Zero(3 * n, 7);
    for (int v = 0; v < n; ++v) {
        const Eigen::Vector3d p = mean.segment<3>(3 * v);
        for (int axis = 0; axis < 3; ++axis) {
            motions(3 * v + axis, axis) = 1.0;
            motions.block<3, 1>(3 * v, 3 + axis) = Eigen::Vector3d::Unit(axis).cross(p);
        }
        motions(3 * v + 0, 6) = p.x();
        motions(3 * v + 1, 6) = p.y();
    }
    const MatrixXd motion_q = Eigen::HouseholderQR<MatrixXd>(motions).householderQ() * MatrixXd::Identity(3 * n, 7);

    Random rng(seed);
    constexpr int features_per_axis = 6;
    const auto random_field = [&](double amplitude) {
        VectorXd field(3 * n);
        for (int axis = 0; axis < 3; ++axis) {
            Eigen::Matrix<double, features_per_axis, 3> freq;
            Eigen::Matrix<double, features_per_axis, 1> offsets;
            Eigen::Matrix<double, features_per_axis, 1> coeffs;
            for (int m = 0; m < features_per_axis; ++m) {
                for (int d = 0; d < 3; ++d) {
                    freq(m, d) = 1.5 * rng.normal();
                }
                offsets(m) = rng.uniform(0.0, 2.0 * std::numbers::pi);
                coeffs(m) = rng.normal();
            }
            for (int v = 0; v < n; ++v) {
                const Eigen::Vector3d p(mean(3 * v) / geometry.half_width, mean(3 * v + 1) / geometry.half_height,
                                        mean(3 * v + 2) / geometry.depth);
                double value = 0.0;
                for (int m = 0; m < features_per_axis; ++m) {
                    value += coeffs(m) * std::cos(freq.row(m).dot(p) + offsets(m));
                }
                field(3 * v + axis) = amplitude * value / std::sqrt(static_cast<double>(features_per_axis));
            }
        }
        return field;
    };
    const auto project_out = [](MatrixXd& fields, const MatrixXd& q) {
        for (int pass = 0; pass < 2; ++pass) {
            fields -= q * (q.transpose() * fields);
        }
    };

    MatrixXd shape_fields(3 * n, num_shape);
    for (int k = 0; k < num_shape; ++k) {
        shape_fields.col(k) = random_field(10.0 * std::pow(0.85, k));
    }
    MatrixXd expr_fields(3 * n, num_expression);
    for (int l = 0; l < num_expression; ++l) {
        expr_fields.col(l) = random_field(5.0 * std::pow(0.85, l));
    }

    project_out(shape_fields, motion_q);
    Eigen::JacobiSVD<MatrixXd> shape_svd(shape_fields, Eigen::ComputeThinU);
    const MatrixXd shape_basis = shape_svd.matrixU();
    const VectorXd shape_scales = shape_svd.singularValues();

    project_out(expr_fields, motion_q);
    project_out(expr_fields, shape_basis);
    Eigen::JacobiSVD<MatrixXd> expr_svd(expr_fields, Eigen::ComputeThinU);
    const MatrixXd expr_basis = expr_svd.matrixU();
    const VectorXd expr_scales = expr_svd.singularValues();

    const int num_landmarks = std::clamp(n / 4, 7, 68);
    std::vector<std::uint32_t> landmarks{0u};
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(landmarks.size()) < num_landmarks) {
        const Eigen::Vector3d last = mean.segment<3>(3 * landmarks.back());
        int best = -1;
        double best_dist = -1.0;
        for (int v = 0; v < n; ++v) {
            dist[v] = std::min(dist[v], (mean.segment<3>(3 * v) - last).squaredNorm());
            if (dist[v] > best_dist) {
                best_dist = dist[v];
                best = v;
            }
        }
        landmarks.push_back(static_cast<std::uint32_t>(best));
    }

    return MorphableModel(mean, shape_basis, expr_basis, shape_scales, expr_scales, std::move(triangles),
                          std::move(landmarks));
}

} /* namespace pen */

#endif /* PEN_TOY_MODEL_HPP_ */
