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

#ifndef PEN_IO_HPP_
#define PEN_IO_HPP_

#include "pen/error.hpp"

#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

namespace pen {

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string() + " for reading");
    }
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/**
 * Writes \p contents to a sibling temporary file and renames it over \p path,
 * so readers never observe a partially written file.
 */
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents)
{
    static std::atomic<unsigned long> counter{0};
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ostringstream tmp_name;
    tmp_name << path.filename().string() << ".tmp." << std::this_thread::get_id() << '.' << counter++;
    const auto tmp = path.parent_path() / tmp_name.str();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot open " + tmp.string() + " for writing");
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw Error("write failed for " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot rename temporary file onto " + path.string());
    }
}

/// Shortest decimal that parses back to exactly \p v.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Parses a whole token as a finite double; returns false otherwise.
inline bool parse_double(std::string_view token, double& out)
{
    if (token.empty()) {
        return false;
    }
    if (token.front() == '+') {
        token.remove_prefix(1);
    }
    const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
    return res.ec == std::errc() && res.ptr == token.data() + token.size() && std::isfinite(out);
}

/// Splits on ASCII whitespace.
inline std::vector<std::string> split_whitespace(std::string_view line)
{
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        if (i > start) {
            tokens.emplace_back(line.substr(start, i - start));
        }
    }
    return tokens;
}

inline std::vector<std::string> split_lines(const std::string& text)
{
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(line);
    }
    return lines;
}

/// Entry of an "identity<TAB>path" manifest.
struct ManifestEntry
{
    std::string identity;
    std::filesystem::path path;
};

/**
 * Reads "identity<TAB>path" lines. Relative paths are resolved against the
 * manifest's directory. Blank lines and lines starting with '#' are skipped.
 */
inline std::vector<ManifestEntry> read_tsv_manifest(const std::filesystem::path& manifest)
{
    std::vector<ManifestEntry> out;
    const auto lines = split_lines(read_file(manifest));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
            throw ParseError(manifest.string() + ":" + std::to_string(i + 1), "expected identity<TAB>path");
        }
        std::filesystem::path p = line.substr(tab + 1);
        if (p.is_relative()) {
            p = manifest.parent_path() / p;
        }
        out.push_back({line.substr(0, tab), p});
    }
    return out;
}

inline std::string format_tsv_manifest(const std::vector<ManifestEntry>& entries)
{
    std::string out;
    for (const auto& e : entries) {
        out += e.identity + '\t' + e.path.generic_string() + '\n';
    }
    return out;
}

} /* namespace pen */

#endif /* PEN_IO_HPP_ */
