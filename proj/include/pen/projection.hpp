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

#ifndef PEN_PROJECTION_HPP_
#define PEN_PROJECTION_HPP_

#include "pen/error.hpp"
#include "pen/io.hpp"
#include "pen/model.hpp"

#include "Eigen/Core"
#include "Eigen/Dense"
#include "Eigen/Geometry"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace pen {

/**
 * Rotation for intrinsic X-Y-Z Euler angles: R = Rx(pitch) * Ry(yaw) * Rz(roll).
 *
 * Axis convention: x to the right, y down, z away from the viewer, so a
 * positive yaw of pi/2 takes (1, 0, 0) to (0, 0, -1).
 */
inline Eigen::Matrix3d euler_to_rotation(double pitch, double yaw, double roll)
{
    using Eigen::AngleAxisd;
    using Eigen::Vector3d;
    return (AngleAxisd(pitch, Vector3d::UnitX()) * AngleAxisd(yaw, Vector3d::UnitY()) *
            AngleAxisd(roll, Vector3d::UnitZ()))
        .toRotationMatrix();
}

struct EulerAngles
{
    double pitch = 0.0;
    double yaw = 0.0;
    double roll = 0.0;
};

inline bool is_rotation(const Eigen::Matrix3d& r, double tol)
{
    return r.allFinite() && (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(r.determinant() - 1.0) <= tol;
}

/**
 * Inverse of euler_to_rotation(); angles are returned in (-pi, pi] with
 * yaw in [-pi/2, pi/2]. At gimbal lock (|yaw| = pi/2) roll is fixed to 0 and
 * pitch absorbs the remaining in-plane rotation.
 * Throws InvalidInput for matrices that are not rotations (tolerance 1e-6).
 */
inline EulerAngles rotation_to_euler(const Eigen::Matrix3d& r)
{
    if (!is_rotation(r, 1e-6)) {
        throw InvalidInput("matrix is not a proper rotation");
    }
    EulerAngles e;
    const double cos_yaw = std::hypot(r(0, 0), r(0, 1));
    e.yaw = std::atan2(r(0, 2), cos_yaw);
    if (cos_yaw > 1e-12) {
        e.pitch = std::atan2(-r(1, 2), r(2, 2));
        e.roll = std::atan2(-r(0, 1), r(0, 0));
    } else {
        e.roll = 0.0;
        e.pitch = std::atan2(r(2, 1), r(1, 1));
    }
    e.pitch = wrap_angle(e.pitch);
    e.yaw = wrap_angle(e.yaw);
    e.roll = wrap_angle(e.roll);
    return e;
}

/**
 * Scaled orthographic camera. A point p maps to
 *   (u, v) = scale * (R p)_xy + (tx, ty),   depth = (R p)_z + tz.
 * Depth is not scaled, so it stays metric.
 */
struct WeakPerspective
{
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero(); ///< tx, ty (raster units), tz (mm)

    static WeakPerspective from_pose(const Pose& p)
    {
        return {p.scale, euler_to_rotation(p.pitch, p.yaw, p.roll), Eigen::Vector3d(p.tx, p.ty, p.tz)};
    }

    Pose to_pose() const
    {
        const auto e = rotation_to_euler(rotation);
        return {scale, e.pitch, e.yaw, e.roll, translation.x(), translation.y(), translation.z()};
    }

    /// Throws InvalidInput unless scale > 0 and the rotation is orthonormal with det +1 (1e-9).
    void validate() const
    {
        if (!(scale > 0.0) || !std::isfinite(scale) || !translation.allFinite()) {
            throw InvalidInput("camera scale must be positive and parameters finite");
        }
        if (!is_rotation(rotation, 1e-9)) {
            throw InvalidInput("camera rotation is not orthonormal with determinant +1");
        }
    }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const
    {
        const Eigen::Vector3d rp = rotation * p;
        return {scale * rp.x() + translation.x(), scale * rp.y() + translation.y(), rp.z() + translation.z()};
    }
};

/// (u, v, depth) for every vertex.
inline std::vector<Eigen::Vector3d> project(const WeakPerspective& cam, const FaceShape& shape)
{
    if (!shape.coords.allFinite()) {
        throw InvalidInput("shape contains non-finite coordinates");
    }
    std::vector<Eigen::Vector3d> out(shape.n_vertices());
    for (int i = 0; i < shape.n_vertices(); ++i) {
        out[i] = cam.apply(shape.vertex(i));
    }
    return out;
}

/// Sum of squared (u, v, depth) residuals of \p cam over the correspondences.
inline double projection_sq_error(const WeakPerspective& cam, std::span<const Eigen::Vector3d> points,
                                  std::span<const Eigen::Vector3d> observed)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        sum += (cam.apply(points[i]) - observed[i]).squaredNorm();
    }
    return sum;
}

/// Nearest rotation (orthogonal polar factor with det +1).
inline Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m)
{
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

/**
 * Least-squares weak perspective camera from 3D points and their (u, v, depth)
 * observations.
 *
 * After centroid alignment, an unconstrained 3x3 linear map is solved in
 * closed form; its first two rows give the initial scale and, together with
 * the depth row, the nearest rotation. Scale and rotation are then refined
 * jointly with damped Gauss-Newton (the depth row is unscaled, so the problem
 * is an anisotropic Procrustes problem). Translation follows from the
 * centroids. Requires at least 4 non-coplanar points.
 */
inline WeakPerspective fit_weak_perspective(std::span<const Eigen::Vector3d> points,
                                            std::span<const Eigen::Vector3d> observed)
{
    using Eigen::Matrix3d;
    using Eigen::MatrixXd;
    using Eigen::Vector3d;

    if (points.size() != observed.size()) {
        throw InvalidInput("point and observation counts differ");
    }
    const auto n = static_cast<Eigen::Index>(points.size());
    if (n < 4) {
        throw DegenerateConfiguration("at least 4 correspondences required, got " + std::to_string(n));
    }
    Vector3d p_mean = Vector3d::Zero();
    Vector3d q_mean = Vector3d::Zero();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!points[i].allFinite() || !observed[i].allFinite()) {
            throw InvalidInput("non-finite correspondence");
        }
        p_mean += points[i];
        q_mean += observed[i];
    }
    p_mean /= static_cast<double>(n);
    q_mean /= static_cast<double>(n);
    MatrixXd p(3, n);
    MatrixXd q(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        p.col(i) = points[i] - p_mean;
        q.col(i) = observed[i] - q_mean;
    }

    Eigen::JacobiSVD<MatrixXd> spread(p);
    const auto sv = spread.singularValues();
    if (!(sv(0) > 0.0) || sv(2) <= 1e-9 * sv(0)) {
        throw DegenerateConfiguration("points are coplanar or rank deficient");
    }

    const Matrix3d ppt = p * p.transpose();
    const Matrix3d affine = (q * p.transpose()) * ppt.inverse();
    double scale = 0.5 * (affine.row(0).norm() + affine.row(1).norm());
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw DegenerateConfiguration("observations do not determine a positive scale");
    }
    Matrix3d unscale = Matrix3d::Identity();
    unscale(0, 0) = unscale(1, 1) = 1.0 / scale;
    Matrix3d rotation = nearest_rotation(unscale * affine);

    const auto cost = [&](double s, const Matrix3d& r) {
        Matrix3d d = Matrix3d::Identity();
        d(0, 0) = d(1, 1) = s;
        return ((d * r) * p - q).squaredNorm();
    };

    double current = cost(scale, rotation);
    double damping = 1e-6;
    for (int iter = 0; iter < 200 && current > 0.0; ++iter) {
        // Parameters: scale, then a left-multiplied rotation increment.
        Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
        Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vector3d rp = rotation * p.col(i);
            Eigen::Matrix<double, 3, 4> j = Eigen::Matrix<double, 3, 4>::Zero();
            j(0, 0) = rp.x();
            j(1, 0) = rp.y();
            Matrix3d skew;
            skew << 0.0, -rp.z(), rp.y(), rp.z(), 0.0, -rp.x(), -rp.y(), rp.x(), 0.0;
            Matrix3d d = Matrix3d::Identity();
            d(0, 0) = d(1, 1) = scale;
            j.rightCols<3>() = -d * skew;
            const Vector3d r(scale * rp.x() - q(0, i), scale * rp.y() - q(1, i), rp.z() - q(2, i));
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        bool improved = false;
        for (int attempt = 0; attempt < 20; ++attempt) {
            Eigen::Matrix4d a = jtj;
            a.diagonal() += damping * jtj.diagonal().cwiseMax(1e-12);
            const Eigen::Vector4d step = a.ldlt().solve(-jtr);
            const double new_scale = scale + step(0);
            const Vector3d w = step.tail<3>();
            Matrix3d new_rotation = rotation;
            if (w.norm() > 0.0) {
                new_rotation = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix() * rotation;
            }
            new_rotation = nearest_rotation(new_rotation);
            const double candidate = new_scale > 0.0 ? cost(new_scale, new_rotation) : current;
            if (new_scale > 0.0 && candidate < current) {
                const double decrease = current - candidate;
                scale = new_scale;
                rotation = new_rotation;
                current = candidate;
                damping = std::max(damping * 0.1, 1e-12);
                improved = decrease > 1e-15 * std::max(current, 1e-300) && step.norm() > 1e-15;
                break;
            }
            damping *= 10.0;
        }
        if (!improved) {
            break;
        }
    }

    WeakPerspective cam;
    cam.scale = scale;
    cam.rotation = rotation;
    const Vector3d rp = rotation * p_mean;
    cam.translation = Vector3d(q_mean.x() - scale * rp.x(), q_mean.y() - scale * rp.y(), q_mean.z() - rp.z());
    return cam;
}

/**
 * Average of several cameras: arithmetic mean of scales and translations,
 * chordal mean of rotations (mean matrix projected to the nearest rotation).
 */
inline WeakPerspective mean_projection(std::span<const WeakPerspective> cams)
{
    if (cams.empty()) {
        throw InvalidInput("mean_projection needs at least one camera");
    }
    if (cams.size() == 1) {
        return cams.front();
    }
    WeakPerspective out;
    out.scale = 0.0;
    Eigen::Matrix3d rot_sum = Eigen::Matrix3d::Zero();
    for (const auto& c : cams) {
        out.scale += c.scale;
        out.translation += c.translation;
        rot_sum += c.rotation;
    }
    const auto count = static_cast<double>(cams.size());
    out.scale /= count;
    out.translation /= count;
    out.rotation = nearest_rotation(rot_sum / count);
    return out;
}

/// Camera text format: "s pitch yaw roll tx ty tz" on one line.
inline std::string format_camera(const WeakPerspective& cam)
{
    const auto p = cam.to_pose().to_array();
    std::string out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        out += format_double(p[i]);
        out += i + 1 < p.size() ? ' ' : '\n';
    }
    return out;
}

inline WeakPerspective parse_camera(const std::string& text)
{
    const auto tokens = split_whitespace(text);
    if (tokens.size() != 7) {
        throw ParseError("camera", "expected 7 values, got " + std::to_string(tokens.size()));
    }
    std::array<double, 7> v{};
    for (std::size_t i = 0; i < 7; ++i) {
        if (!parse_double(tokens[i], v[i])) {
            throw ParseError("camera", "value " + std::to_string(i + 1) + " is not a finite decimal");
        }
    }
    auto cam = WeakPerspective::from_pose(Pose::from_array(v));
    cam.validate();
    return cam;
}

inline WeakPerspective read_camera(const std::filesystem::path& path)
{
    return parse_camera(read_file(path));
}

inline void write_camera(const WeakPerspective& cam, const std::filesystem::path& path)
{
    write_file_atomic(path, format_camera(cam));
}

} /* namespace pen */

#endif /* PEN_PROJECTION_HPP_ */
