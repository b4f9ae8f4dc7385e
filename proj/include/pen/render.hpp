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

#ifndef PEN_RENDER_HPP_
#define PEN_RENDER_HPP_

#include "pen/image.hpp"
#include "pen/model.hpp"
#include "pen/projection.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace pen {

inline constexpr int default_crop_size = 128;

namespace detail {

inline double edge(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double u, double v)
{
    return (b.x() - a.x()) * (v - a.y()) - (b.y() - a.y()) * (u - a.x());
}

// Tie-break for pixel centres exactly on an edge: of the two directions a
// shared edge is traversed in, exactly one is accepted.
inline bool owns_edge(const Eigen::Vector3d& a, const Eigen::Vector3d& b)
{
    const double dv = b.y() - a.y();
    return dv > 0.0 || (dv == 0.0 && b.x() < a.x());
}

} /* namespace detail */

/**
 * Z-buffer rasterisation of already projected vertices (u, v, depth).
 * Pixel (x, y) is sampled at its centre (x + 0.5, y + 0.5), the raster origin
 * being the top-left corner. Depth is interpolated barycentrically; the
 * nearest (smallest) positive depth wins. Uncovered pixels keep the sentinel.
 * Both windings are drawn.
 */
inline DepthImage rasterize_projected(std::span<const Eigen::Vector3d> projected, std::span<const Triangle> triangles,
                                      int width, int height)
{
    if (width <= 0 || height <= 0) {
        throw InvalidInput("raster must have positive width and height");
    }
    DepthImage img(width, height);
    for (const auto& tri : triangles) {
        if (tri[0] >= projected.size() || tri[1] >= projected.size() || tri[2] >= projected.size()) {
            throw InvalidInput("triangle references a vertex outside the shape");
        }
        Eigen::Vector3d a = projected[tri[0]];
        Eigen::Vector3d b = projected[tri[1]];
        Eigen::Vector3d c = projected[tri[2]];
        if (!a.allFinite() || !b.allFinite() || !c.allFinite()) {
            continue;
        }
        double area = detail::edge(a, b, c.x(), c.y());
        if (area == 0.0) {
            continue;
        }
        if (area < 0.0) {
            std::swap(b, c);
            area = -area;
        }
        const double min_u = std::min({a.x(), b.x(), c.x()});
        const double max_u = std::max({a.x(), b.x(), c.x()});
        const double min_v = std::min({a.y(), b.y(), c.y()});
        const double max_v = std::max({a.y(), b.y(), c.y()});
        const int x0 = std::max(0, static_cast<int>(std::ceil(min_u - 0.5)));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(max_u - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(min_v - 0.5)));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(max_v - 0.5)));
        const bool own_ab = detail::owns_edge(a, b);
        const bool own_bc = detail::owns_edge(b, c);
        const bool own_ca = detail::owns_edge(c, a);
        for (int y = y0; y <= y1; ++y) {
            const double pv = y + 0.5;
            for (int x = x0; x <= x1; ++x) {
                const double pu = x + 0.5;
                const double w_c = detail::edge(a, b, pu, pv);
                const double w_a = detail::edge(b, c, pu, pv);
                const double w_b = detail::edge(c, a, pu, pv);
                if (w_a < 0.0 || w_b < 0.0 || w_c < 0.0) {
                    continue;
                }
                if ((w_c == 0.0 && !own_ab) || (w_a == 0.0 && !own_bc) || (w_b == 0.0 && !own_ca)) {
                    continue;
                }
                const double depth = (w_a * a.z() + w_b * b.z() + w_c * c.z()) / area;
                if (!(depth > 0.0)) {
                    continue;
                }
                double& dst = img.at(x, y);
                if (dst == depth_sentinel || depth < dst) {
                    dst = depth;
                }
            }
        }
    }
    return img;
}

/// Projects \p shape with \p cam and rasterises it into a width x height depth image.
inline DepthImage rasterize_depth(const FaceShape& shape, std::span<const Triangle> triangles,
                                  const WeakPerspective& cam, int width, int height)
{
    if (width <= 0 || height <= 0) {
        throw InvalidInput("raster must have positive width and height");
    }
    const auto projected = project(cam, shape);
    return rasterize_projected(projected, triangles, width, height);
}

/**
 * Crops \p box out of \p img and resamples it to out_size x out_size with
 * nearest-neighbour sampling (never blends across sentinel pixels).
 */
inline DepthImage crop_resize(const DepthImage& img, const BBox& box, int out_size = default_crop_size)
{
    if (out_size < 8) {
        throw InvalidInput("out_size must be at least 8");
    }
    if (box.width <= 0 || box.height <= 0 || box.x < 0 || box.y < 0 || box.x + box.width > img.width() ||
        box.y + box.height > img.height()) {
        throw InvalidInput("bounding box outside the image");
    }
    DepthImage out(out_size, out_size);
    for (int y = 0; y < out_size; ++y) {
        const int sy = box.y + static_cast<int>(std::floor((y + 0.5) * box.height / out_size));
        for (int x = 0; x < out_size; ++x) {
            const int sx = box.x + static_cast<int>(std::floor((x + 0.5) * box.width / out_size));
            out.at(x, y) = img.at(sx, sy);
        }
    }
    return out;
}

/// Tight box around valid pixels, grown by 5% of its size on every side and clamped to the image.
inline BBox face_bbox(const DepthImage& img)
{
    int min_x = img.width();
    int min_y = img.height();
    int max_x = -1;
    int max_y = -1;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (img.valid(x, y)) {
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
        }
    }
    if (max_x < 0) {
        throw EmptyImage("image has no valid depth pixels");
    }
    const int margin_x = static_cast<int>(std::ceil(0.05 * (max_x - min_x + 1)));
    const int margin_y = static_cast<int>(std::ceil(0.05 * (max_y - min_y + 1)));
    const int x0 = std::max(0, min_x - margin_x);
    const int y0 = std::max(0, min_y - margin_y);
    const int x1 = std::min(img.width() - 1, max_x + margin_x);
    const int y1 = std::min(img.height() - 1, max_y + margin_y);
    return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

} /* namespace pen */

#endif /* PEN_RENDER_HPP_ */
