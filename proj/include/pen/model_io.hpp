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

#ifndef PEN_MODEL_IO_HPP_
#define PEN_MODEL_IO_HPP_

#include "pen/io.hpp"
#include "pen/model.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace pen {

/*
 * Model file layout, all little-endian:
 *   "PENM" | version u32 | n_vertices u32 | K u32 | L u32
 *   mean f64[3n] | shape_basis f64[3n*K] (column-major) | expression_basis f64[3n*L]
 *   shape_scales f64[K] | expression_scales f64[L]
 *   triangle count u32 | u32 triples | landmark count u32 | u32 indices
 */
inline constexpr char model_magic[4] = {'P', 'E', 'N', 'M'};
inline constexpr std::uint32_t model_version = 1;

namespace detail {

class ByteWriter
{
public:
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }

    void f64(double d)
    {
        const auto v = std::bit_cast<std::uint64_t>(d);
        for (int i = 0; i < 8; ++i) {
            bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }

    std::string bytes;
};

class ByteReader
{
public:
    explicit ByteReader(const std::string& data) : data_(data) {}

    std::uint32_t u32(const char* field)
    {
        need(4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    double f64(const char* field)
    {
        need(8, field);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return std::bit_cast<double>(v);
    }

    void f64_array(double* out, std::uint64_t count, const char* field)
    {
        need(count * 8, field);
        for (std::uint64_t i = 0; i < count; ++i) {
            out[i] = f64(field);
        }
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::uint64_t count, const char* field) const
    {
        if (count > data_.size() - pos_) {
            throw TruncatedError(field, "file ends before the array is complete");
        }
    }

    const std::string& data_;
    std::size_t pos_ = 0;
};

} /* namespace detail */

/// Serialises \p model to the binary model format.
inline std::string serialize_model(const MorphableModel& model)
{
    detail::ByteWriter w;
    w.bytes.append(model_magic, 4);
    w.u32(model_version);
    w.u32(static_cast<std::uint32_t>(model.n_vertices()));
    w.u32(static_cast<std::uint32_t>(model.num_shape()));
    w.u32(static_cast<std::uint32_t>(model.num_expression()));
    const auto put = [&w](const auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            w.f64(m.data()[i]); // Eigen default storage is column-major
        }
    };
    put(model.mean_shape());
    put(model.shape_basis());
    put(model.expression_basis());
    put(model.shape_scales());
    put(model.expression_scales());
    w.u32(static_cast<std::uint32_t>(model.triangles().size()));
    for (const auto& t : model.triangles()) {
        w.u32(t[0]);
        w.u32(t[1]);
        w.u32(t[2]);
    }
    w.u32(static_cast<std::uint32_t>(model.landmark_indices().size()));
    for (auto idx : model.landmark_indices()) {
        w.u32(idx);
    }
    return std::move(w.bytes);
}

/**
 * Parses a binary model. Throws HeaderError (magic/version/dimensions),
 * TruncatedError (payload too short, names the array) or TopologyError
 * (index invariants); other invariant failures raise ParseError.
 */
inline MorphableModel deserialize_model(const std::string& bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), model_magic, 4) != 0) {
        throw HeaderError("magic", "not a PENM model file");
    }
    const std::string payload = bytes.substr(4);
    detail::ByteReader r(payload);
    const auto version = r.u32("version");
    if (version != model_version) {
        throw HeaderError("version", "unsupported version " + std::to_string(version));
    }
    const std::uint64_t n = r.u32("n_vertices");
    const std::uint64_t k = r.u32("K");
    const std::uint64_t l = r.u32("L");
    if (n == 0 || k == 0 || l == 0) {
        throw HeaderError("n_vertices", "dimensions must be positive");
    }
    // Reject absurd headers before allocating.
    if (24.0L * n * (1.0L + k + l) > static_cast<long double>(r.remaining())) {
        throw TruncatedError("mean_shape", "header dimensions exceed the file size");
    }
    const auto rows = static_cast<Eigen::Index>(3 * n);
    Eigen::VectorXd mean(rows);
    r.f64_array(mean.data(), 3 * n, "mean_shape");
    Eigen::MatrixXd shape_basis(rows, static_cast<Eigen::Index>(k));
    r.f64_array(shape_basis.data(), 3 * n * k, "shape_basis");
    Eigen::MatrixXd expr_basis(rows, static_cast<Eigen::Index>(l));
    r.f64_array(expr_basis.data(), 3 * n * l, "expression_basis");
    Eigen::VectorXd shape_scales(static_cast<Eigen::Index>(k));
    r.f64_array(shape_scales.data(), k, "shape_scales");
    Eigen::VectorXd expr_scales(static_cast<Eigen::Index>(l));
    r.f64_array(expr_scales.data(), l, "expression_scales");

    const std::uint64_t n_tri = r.u32("triangle_count");
    if (n_tri * 12 > r.remaining()) {
        throw TruncatedError("triangles", "file ends before the triangle list is complete");
    }
    std::vector<Triangle> triangles(n_tri);
    for (auto& t : triangles) {
        t = {r.u32("triangles"), r.u32("triangles"), r.u32("triangles")};
    }
    const std::uint64_t n_lm = r.u32("landmark_count");
    if (n_lm * 4 > r.remaining()) {
        throw TruncatedError("landmarks", "file ends before the landmark list is complete");
    }
    std::vector<std::uint32_t> landmarks(n_lm);
    for (auto& idx : landmarks) {
        idx = r.u32("landmarks");
    }
    if (r.remaining() != 0) {
        throw ParseError("trailer", std::to_string(r.remaining()) + " unexpected trailing bytes");
    }
    if (auto issue = MorphableModel::check(mean, shape_basis, expr_basis, shape_scales, expr_scales, triangles,
                                           landmarks)) {
        if (issue->topology) {
            throw TopologyError(issue->field, issue->message);
        }
        throw ParseError(issue->field, issue->message);
    }
    return MorphableModel(std::move(mean), std::move(shape_basis), std::move(expr_basis), std::move(shape_scales),
                          std::move(expr_scales), std::move(triangles), std::move(landmarks));
}

inline MorphableModel load_model(const std::filesystem::path& path)
{
    return deserialize_model(read_file(path));
}

/// Writes atomically (temporary file, then rename).
inline void save_model(const MorphableModel& model, const std::filesystem::path& path)
{
    write_file_atomic(path, serialize_model(model));
}

} /* namespace pen */

#endif /* PEN_MODEL_IO_HPP_ */
