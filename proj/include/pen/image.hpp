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

#ifndef PEN_IMAGE_HPP_
#define PEN_IMAGE_HPP_

#include "pen/error.hpp"
#include "pen/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pen {

/// Reserved depth value meaning "no measurement" (background, hole, occlusion).
inline constexpr double depth_sentinel = 0.0;

/**
 * Single-channel metric depth raster, row-major, millimetres.
 * Pixels equal to depth_sentinel carry no measurement; every other pixel is
 * strictly positive and finite.
 */
class DepthImage
{
public:
    DepthImage() = default;

    DepthImage(int width, int height, double fill = depth_sentinel)
        : width_(width), height_(height), data_(checked_size(width, height), fill)
    {
    }

    DepthImage(int width, int height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data))
    {
        if (data_.size() != checked_size(width, height)) {
            throw InvalidInput("depth data length does not match width * height");
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    bool valid(int x, int y) const { return at(x, y) != depth_sentinel; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    std::size_t count_valid() const
    {
        std::size_t c = 0;
        for (double v : data_) {
            c += v != depth_sentinel;
        }
        return c;
    }

    /// Throws InvalidInput if any non-sentinel value is not strictly positive and finite.
    void validate() const
    {
        for (double v : data_) {
            if (v != depth_sentinel && !(std::isfinite(v) && v > 0.0)) {
                throw InvalidInput("depth image contains a non-positive or non-finite measurement");
            }
        }
    }

    bool operator==(const DepthImage&) const = default;

private:
    static std::size_t checked_size(int width, int height)
    {
        if (width <= 0 || height <= 0) {
            throw InvalidInput("image dimensions must be positive");
        }
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// Axis-aligned pixel rectangle [x, x + width) x [y, y + height).
struct BBox
{
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    bool contains(int px, int py) const { return px >= x && px < x + width && py >= y && py < y + height; }
    bool operator==(const BBox&) const = default;
};

/// Three-channel geometric encoding: disparity, height, angle; each value in [0, 255].
class HhaImage
{
public:
    enum class Channel { disparity = 0, height = 1, angle = 2 };

    HhaImage() = default;
    HhaImage(int width, int height) : width_(width), height_(height)
    {
        if (width <= 0 || height <= 0) {
            throw InvalidInput("image dimensions must be positive");
        }
        for (auto& c : channels_) {
            c.assign(static_cast<std::size_t>(width) * height, 0);
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }

    std::uint8_t& at(Channel c, int x, int y) { return channels_[static_cast<int>(c)][static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t at(Channel c, int x, int y) const
    {
        return channels_[static_cast<int>(c)][static_cast<std::size_t>(y) * width_ + x];
    }
    /// Value scaled to [0, 1].
    double normalized(Channel c, int x, int y) const { return at(c, x, y) / 255.0; }

    const std::vector<std::uint8_t>& channel(Channel c) const { return channels_[static_cast<int>(c)]; }

    bool operator==(const HhaImage&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::array<std::vector<std::uint8_t>, 3> channels_;
};

namespace detail {

// Reads the next whitespace-delimited header token of a netpbm file, skipping comments.
inline std::string pnm_token(const std::string& bytes, std::size_t& pos, const char* field)
{
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') {
                ++pos;
            }
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
    }
    if (start == pos) {
        throw ParseError(field, "missing header token");
    }
    return bytes.substr(start, pos - start);
}

inline int pnm_int(const std::string& bytes, std::size_t& pos, const char* field)
{
    const auto tok = pnm_token(bytes, pos, field);
    int v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || v <= 0) {
        throw ParseError(field, "expected a positive integer, got '" + tok + "'");
    }
    return v;
}

struct PnmHeader
{
    int width;
    int height;
    int maxval;
    std::size_t data_offset;
};

inline PnmHeader parse_pnm_header(const std::string& bytes, const char* magic)
{
    std::size_t pos = 0;
    if (pnm_token(bytes, pos, "magic") != magic) {
        throw ParseError("magic", std::string("expected ") + magic);
    }
    PnmHeader h{};
    h.width = pnm_int(bytes, pos, "width");
    h.height = pnm_int(bytes, pos, "height");
    h.maxval = pnm_int(bytes, pos, "maxval");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw ParseError("maxval", "header must end with a single whitespace byte");
    }
    h.data_offset = pos + 1;
    return h;
}

} /* namespace detail */

/// Stored value for a depth in millimetres: round(mm * 10), valid pixels never map to 0.
inline std::uint16_t encode_depth_value(double mm)
{
    if (mm == depth_sentinel) {
        return 0;
    }
    const double scaled = std::round(mm * 10.0);
    if (!(scaled <= 65535.0)) {
        throw InvalidInput("depth " + format_double(mm) + " mm exceeds the 16-bit file range");
    }
    return static_cast<std::uint16_t>(std::max(1.0, scaled));
}

/// 16-bit big-endian binary PGM (P5, maxval 65535), value = round(mm * 10), 0 = sentinel.
inline std::string encode_pgm(const DepthImage& img)
{
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n65535\n";
    out.reserve(out.size() + 2 * img.size());
    for (double v : img.data()) {
        const auto q = encode_depth_value(v);
        out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    return out;
}

inline DepthImage decode_pgm(const std::string& bytes)
{
    const auto h = detail::parse_pnm_header(bytes, "P5");
    if (h.maxval != 65535) {
        throw ParseError("maxval", "depth files must use maxval 65535");
    }
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    if (bytes.size() - h.data_offset != 2 * n) {
        throw ParseError("pixels", "expected " + std::to_string(2 * n) + " data bytes, found " +
                                       std::to_string(bytes.size() - h.data_offset));
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto hi = static_cast<unsigned char>(bytes[h.data_offset + 2 * i]);
        const auto lo = static_cast<unsigned char>(bytes[h.data_offset + 2 * i + 1]);
        data[i] = ((hi << 8) | lo) / 10.0;
    }
    return DepthImage(h.width, h.height, std::move(data));
}

inline DepthImage read_depth(const std::filesystem::path& path)
{
    try {
        return decode_pgm(read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.field(), e.what());
    }
}

inline void write_depth(const DepthImage& img, const std::filesystem::path& path)
{
    write_file_atomic(path, encode_pgm(img));
}

/// 8-bit binary PPM (P6); channels (disparity, height, angle) stored as (R, G, B).
inline std::string encode_ppm(const HhaImage& img)
{
    std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    const std::size_t n = static_cast<std::size_t>(img.width()) * img.height();
    for (std::size_t i = 0; i < n; ++i) {
        for (auto c : {HhaImage::Channel::disparity, HhaImage::Channel::height, HhaImage::Channel::angle}) {
            out.push_back(static_cast<char>(img.channel(c)[i]));
        }
    }
    return out;
}

inline HhaImage decode_ppm(const std::string& bytes)
{
    const auto h = detail::parse_pnm_header(bytes, "P6");
    if (h.maxval != 255) {
        throw ParseError("maxval", "HHA files must use maxval 255");
    }
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    if (bytes.size() - h.data_offset != 3 * n) {
        throw ParseError("pixels", "unexpected data length");
    }
    HhaImage img(h.width, h.height);
    for (int y = 0; y < h.height; ++y) {
        for (int x = 0; x < h.width; ++x) {
            const std::size_t i = h.data_offset + 3 * (static_cast<std::size_t>(y) * h.width + x);
            img.at(HhaImage::Channel::disparity, x, y) = static_cast<std::uint8_t>(bytes[i]);
            img.at(HhaImage::Channel::height, x, y) = static_cast<std::uint8_t>(bytes[i + 1]);
            img.at(HhaImage::Channel::angle, x, y) = static_cast<std::uint8_t>(bytes[i + 2]);
        }
    }
    return img;
}

inline void write_hha(const HhaImage& img, const std::filesystem::path& path)
{
    write_file_atomic(path, encode_ppm(img));
}

inline HhaImage read_hha(const std::filesystem::path& path)
{
    return decode_ppm(read_file(path));
}

} /* namespace pen */

#endif /* PEN_IMAGE_HPP_ */
