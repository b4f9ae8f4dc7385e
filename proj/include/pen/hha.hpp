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

#ifndef PEN_HHA_HPP_
#define PEN_HHA_HPP_

#include "pen/error.hpp"
#include "pen/image.hpp"
#include "pen/io.hpp"

#include "Eigen/Core"
#include "Eigen/Eigenvalues"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace pen {

/// Pinhole intrinsics used to back-project depth pixels (pixels).
struct Intrinsics
{
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    void validate() const
    {
        if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) ||
            !std::isfinite(cy)) {
            throw InvalidInput("intrinsics need positive finite focal lengths");
        }
    }
};

/**
 * Pinhole stand-in for a weak perspective render: fx = fy = 1000 * scale,
 * principal point at the raster centre.
 */
inline Intrinsics surrogate_intrinsics(double scale, int width, int height)
{
    return {1000.0 * scale, 1000.0 * scale, width / 2.0, height / 2.0};
}

/// Constants of the HHA encoding. Distances in metres.
struct HhaConfig
{
    double d_min = 0.3;
    double d_max = 10.0;
    double h_max = 2.5;
    int window_radius = 2;
    int gravity_iterations = 5;

    void validate() const
    {
        if (!(d_min > 0.0) || !(d_max > d_min) || !(h_max > 0.0) || window_radius < 1 || gravity_iterations < 1) {
            throw InvalidInput("invalid HHA constants");
        }
    }
};

/// Per-pixel unit normals; `valid` is false where no normal could be fitted.
struct NormalMap
{
    int width = 0;
    int height = 0;
    std::vector<Eigen::Vector3d> normals;
    std::vector<std::uint8_t> valid;

    bool has(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
    const Eigen::Vector3d& at(int x, int y) const { return normals[static_cast<std::size_t>(y) * width + x]; }
};

/// Camera-frame point (metres) for pixel (x, y), sampled at the pixel centre.
inline Eigen::Vector3d back_project(const Intrinsics& k, int x, int y, double depth_mm)
{
    const double z = depth_mm / 1000.0;
    return {(x + 0.5 - k.cx) * z / k.fx, (y + 0.5 - k.cy) * z / k.fy, z};
}

/**
 * Normals by least-squares plane fit over the valid back-projected points of a
 * (2r+1)^2 window, oriented towards the camera (n_z < 0). Pixels with fewer
 * than three valid window points, and sentinel pixels, get no normal.
 */
inline NormalMap compute_normals(const DepthImage& img, const Intrinsics& k, int window_radius = 2)
{
    k.validate();
    if (window_radius < 1) {
        throw InvalidInput("window radius must be at least 1");
    }
    const int w = img.width();
    const int h = img.height();
    std::vector<Eigen::Vector3d> points(img.size(), Eigen::Vector3d::Zero());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (img.valid(x, y)) {
                points[static_cast<std::size_t>(y) * w + x] = back_project(k, x, y, img.at(x, y));
            }
        }
    }
    NormalMap out{w, h, std::vector<Eigen::Vector3d>(img.size(), Eigen::Vector3d::Zero()),
                  std::vector<std::uint8_t>(img.size(), 0)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!img.valid(x, y)) {
                continue;
            }
            Eigen::Vector3d sum = Eigen::Vector3d::Zero();
            Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
            int count = 0;
            for (int yy = std::max(0, y - window_radius); yy <= std::min(h - 1, y + window_radius); ++yy) {
                for (int xx = std::max(0, x - window_radius); xx <= std::min(w - 1, x + window_radius); ++xx) {
                    if (img.valid(xx, yy)) {
                        const auto& p = points[static_cast<std::size_t>(yy) * w + xx];
                        sum += p;
                        outer += p * p.transpose();
                        ++count;
                    }
                }
            }
            if (count < 3) {
                continue;
            }
            const Eigen::Vector3d centroid = sum / count;
            const Eigen::Matrix3d cov = outer / count - centroid * centroid.transpose();
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
            Eigen::Vector3d n = eig.eigenvectors().col(0);
            if (!n.allFinite() || n.norm() == 0.0) {
                continue;
            }
            n.normalize();
            if (n.z() > 0.0) {
                n = -n;
            }
            const auto idx = static_cast<std::size_t>(y) * w + x;
            out.normals[idx] = n;
            out.valid[idx] = 1;
        }
    }
    return out;
}

/**
 * Up direction by iterative alignment. Starting from g = (0, -1, 0) (image y
 * points down), each iteration splits the normals into those within 45
 * degrees of +-g ("aligned") and the rest (within 45 degrees of g's
 * orthogonal plane), then takes g as the dominant eigenvector of
 *   sum_aligned n n^T - sum_rest n n^T,
 * i.e. the direction most parallel to the aligned set and most orthogonal
 * to the rest. The sign is fixed towards the initial g. When the top
 * eigenvalue is repeated, the previous g is projected onto that eigenspace.
 */
inline Eigen::Vector3d estimate_gravity(const NormalMap& normals, int iterations = 5)
{
    std::vector<Eigen::Vector3d> ns;
    for (std::size_t i = 0; i < normals.normals.size(); ++i) {
        if (normals.valid[i]) {
            ns.push_back(normals.normals[i]);
        }
    }
    if (ns.empty()) {
        throw EstimationError("gravity estimation needs at least one valid normal");
    }
    const Eigen::Vector3d initial(0.0, -1.0, 0.0);
    const double cos45 = std::cos(std::numbers::pi / 4.0);
    Eigen::Vector3d g = initial;
    for (int it = 0; it < iterations; ++it) {
        Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
        for (const auto& n : ns) {
            const double c = std::abs(n.dot(g));
            scatter += (c >= cos45 ? 1.0 : -1.0) * (n * n.transpose());
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
        const auto& values = eig.eigenvalues(); // ascending
        const double spread = std::max(1.0, values.cwiseAbs().maxCoeff());
        Eigen::Vector3d next = eig.eigenvectors().col(2);
        if (values(2) - values(1) <= 1e-9 * spread) {
            Eigen::Vector3d proj = Eigen::Vector3d::Zero();
            for (int j = 0; j < 3; ++j) {
                if (values(2) - values(j) <= 1e-9 * spread) {
                    const Eigen::Vector3d v = eig.eigenvectors().col(j);
                    proj += v.dot(g) * v;
                }
            }
            if (proj.norm() > 1e-12) {
                next = proj;
            }
        }
        next.normalize();
        if (next.dot(initial) < 0.0) {
            next = -next;
        }
        g = next;
    }
    return g;
}

namespace detail {

inline std::uint8_t to_byte(double v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

} /* namespace detail */

/// Disparity channel value for a depth in millimetres.
inline std::uint8_t disparity_value(double depth_mm, const HhaConfig& cfg)
{
    const double inv = 1000.0 / depth_mm;
    const double lo = 1.0 / cfg.d_max;
    const double hi = 1.0 / cfg.d_min;
    return detail::to_byte(255.0 * (inv - lo) / (hi - lo));
}

/// Angle channel value: angle between \p normal and the up direction \p g, 0..180 degrees onto 0..255.
inline std::uint8_t angle_value(const Eigen::Vector3d& normal, const Eigen::Vector3d& g)
{
    const double deg = std::acos(std::clamp(normal.dot(g), -1.0, 1.0)) * 180.0 / std::numbers::pi;
    return detail::to_byte(255.0 * deg / 180.0);
}

struct HhaResult
{
    HhaImage image;
    Eigen::Vector3d gravity;
    double ground_level = 0.0; ///< 1st percentile of p . g over valid pixels (metres)
};

/**
 * HHA encoding of a depth image.
 *   disparity: 1/depth (1/m) mapped linearly from [1/d_max, 1/d_min] to [0, 255]
 *   height:    p . g minus its 1st percentile over the image, [0, h_max] to [0, 255]
 *   angle:     angle(normal, g) in degrees, [0, 180] to [0, 255]
 * All channels are clamped. Sentinel pixels encode as (0, 0, 0); valid pixels
 * without a normal get angle 0.
 */
inline HhaResult depth_to_hha_detailed(const DepthImage& img, const Intrinsics& k, const HhaConfig& cfg = {})
{
    cfg.validate();
    k.validate();
    img.validate();
    const auto normals = compute_normals(img, k, cfg.window_radius);
    HhaResult out{HhaImage(img.width(), img.height()), estimate_gravity(normals, cfg.gravity_iterations), 0.0};

    std::vector<double> heights;
    heights.reserve(img.count_valid());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (img.valid(x, y)) {
                heights.push_back(back_project(k, x, y, img.at(x, y)).dot(out.gravity));
            }
        }
    }
    std::vector<double> sorted = heights;
    const std::size_t rank = static_cast<std::size_t>(std::floor(0.01 * static_cast<double>(sorted.size() - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank), sorted.end());
    out.ground_level = sorted[rank];

    std::size_t next = 0;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (!img.valid(x, y)) {
                continue;
            }
            out.image.at(HhaImage::Channel::disparity, x, y) = disparity_value(img.at(x, y), cfg);
            out.image.at(HhaImage::Channel::height, x, y) =
                detail::to_byte(255.0 * (heights[next++] - out.ground_level) / cfg.h_max);
            out.image.at(HhaImage::Channel::angle, x, y) = normals.has(x, y) ? angle_value(normals.at(x, y), out.gravity) : 0;
        }
    }
    return out;
}

inline HhaImage depth_to_hha(const DepthImage& img, const Intrinsics& k, const HhaConfig& cfg = {})
{
    return depth_to_hha_detailed(img, k, cfg).image;
}

/// Sidecar text recording the constants an HHA file was produced with.
inline std::string format_hha_metadata(const HhaConfig& cfg, const Intrinsics& k, const Eigen::Vector3d& gravity)
{
    std::string out;
    const auto line = [&out](const char* key, double v) { out += std::string(key) + " " + format_double(v) + "\n"; };
    out += "channels disparity height angle\n";
    line("d_min_m", cfg.d_min);
    line("d_max_m", cfg.d_max);
    line("h_max_m", cfg.h_max);
    line("window_radius", cfg.window_radius);
    line("gravity_iterations", cfg.gravity_iterations);
    line("fx", k.fx);
    line("fy", k.fy);
    line("cx", k.cx);
    line("cy", k.cy);
    out += "gravity " + format_double(gravity.x()) + " " + format_double(gravity.y()) + " " +
           format_double(gravity.z()) + "\n";
    return out;
}

} /* namespace pen */

#endif /* PEN_HHA_HPP_ */
