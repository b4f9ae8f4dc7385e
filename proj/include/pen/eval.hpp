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

#ifndef PEN_EVAL_HPP_
#define PEN_EVAL_HPP_

#include "pen/error.hpp"
#include "pen/image.hpp"
#include "pen/io.hpp"
#include "pen/model.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pen {

struct SampleError
{
    std::string id;
    double error = 0.0; ///< |S* - S| / n for this sample
};

struct EvalReport
{
    double rmse = 0.0;
    int n_samples = 0;
    std::vector<SampleError> per_sample;
    std::optional<double> rank1;
    std::vector<std::string> probe_ids;
    std::vector<int> per_probe_rank;
};

/**
 * Reconstruction error averaged over test samples:
 *   RMSE = (1 / N) * sum_j |S*_j - S_j| / n
 * with |.| the Euclidean norm of the 3n coordinate difference and n the vertex
 * count. Note the division by n (not sqrt(n)): the value shrinks as meshes
 * get denser.
 */
inline EvalReport reconstruction_rmse(const std::vector<FaceShape>& gt, const std::vector<FaceShape>& est,
                                      const std::vector<std::string>& ids = {})
{
    if (gt.size() != est.size()) {
        throw InvalidInput("ground truth and estimate lists differ in length");
    }
    if (gt.empty()) {
        throw InvalidInput("reconstruction_rmse needs at least one sample");
    }
    if (!ids.empty() && ids.size() != gt.size()) {
        throw InvalidInput("id list length differs from the sample count");
    }
    EvalReport report;
    report.n_samples = static_cast<int>(gt.size());
    double total = 0.0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
        if (gt[j].coords.size() != est[j].coords.size() || gt[j].coords.size() == 0 ||
            gt[j].coords.size() % 3 != 0) {
            throw InvalidInput("sample " + std::to_string(j) + " has mismatched vertex counts");
        }
        const double e = (gt[j].coords - est[j].coords).norm() / gt[j].n_vertices();
        report.per_sample.push_back({ids.empty() ? std::to_string(j) : ids[j], e});
        total += e;
    }
    report.rmse = total / static_cast<double>(gt.size());
    return report;
}

struct Feature
{
    Eigen::VectorXd values;
    bool degenerate = false; ///< no valid pixels, or no variation after centring
};

/**
 * Block-mean depth descriptor of a square image: grid x grid blocks, each the
 * mean of its valid depths (blocks without valid pixels are 0). The valid
 * blocks are centred on their mean and the vector is scaled to unit length,
 * which makes the feature invariant to a constant depth offset.
 */
inline Feature extract_feature(const DepthImage& img, int grid = 8)
{
    if (img.width() != img.height()) {
        throw InvalidInput("feature extraction needs a square image");
    }
    if (grid < 1 || grid > img.width()) {
        throw InvalidInput("grid must be between 1 and the image size");
    }
    const int size = img.width();
    Feature f;
    f.values = Eigen::VectorXd::Zero(grid * grid);
    std::vector<bool> has(grid * grid, false);
    double valid_sum = 0.0;
    int valid_blocks = 0;
    for (int by = 0; by < grid; ++by) {
        const int y0 = by * size / grid;
        const int y1 = (by + 1) * size / grid;
        for (int bx = 0; bx < grid; ++bx) {
            const int x0 = bx * size / grid;
            const int x1 = (bx + 1) * size / grid;
            double sum = 0.0;
            int count = 0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    if (img.valid(x, y)) {
                        sum += img.at(x, y);
                        ++count;
                    }
                }
            }
            if (count > 0) {
                const int b = by * grid + bx;
                f.values(b) = sum / count;
                has[b] = true;
                valid_sum += f.values(b);
                ++valid_blocks;
            }
        }
    }
    if (valid_blocks == 0) {
        f.degenerate = true;
        return f;
    }
    const double mean = valid_sum / valid_blocks;
    for (int b = 0; b < grid * grid; ++b) {
        if (has[b]) {
            f.values(b) -= mean;
        }
    }
    const double norm = f.values.norm();
    // Centring a constant image leaves rounding noise; treat it as zero.
    if (norm <= 1e-9 * std::max(1.0, std::abs(mean))) {
        f.values.setZero();
        f.degenerate = true;
        return f;
    }
    f.values /= norm;
    return f;
}

struct Similarity
{
    double value = 0.0;
    bool degenerate = false; ///< both inputs were zero vectors
};

/// Cosine of the angle between \p a and \p b; 0 (flagged) when both are zero.
inline Similarity cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    if (a.size() != b.size()) {
        throw InvalidInput("feature lengths differ");
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        return {0.0, na == 0.0 && nb == 0.0};
    }
    return {std::clamp(a.dot(b) / (na * nb), -1.0, 1.0), false};
}

struct LabelledFeature
{
    std::string identity;
    Eigen::VectorXd feature;
    std::string id; ///< optional sample id for reports
};

/**
 * Closed-set identification. For each probe the gallery is ranked by
 * descending cosine similarity; ties keep gallery insertion order. The rank
 * of the probe's true identity (1-based) is recorded and rank1 is the
 * fraction of probes ranked first.
 */
inline EvalReport rank1_identify(const std::vector<LabelledFeature>& gallery,
                                 const std::vector<LabelledFeature>& probes)
{
    if (gallery.empty() || probes.empty()) {
        throw InvalidInput("identification needs a non-empty gallery and probe set");
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
        if (!index.emplace(gallery[g].identity, g).second) {
            throw InvalidInput("duplicate gallery identity '" + gallery[g].identity + "'");
        }
    }
    EvalReport report;
    int hits = 0;
    for (const auto& probe : probes) {
        const auto it = index.find(probe.identity);
        if (it == index.end()) {
            throw InvalidInput("probe identity '" + probe.identity + "' is not in the gallery");
        }
        const std::size_t truth = it->second;
        const double truth_sim = cosine_similarity(probe.feature, gallery[truth].feature).value;
        int rank = 1;
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            if (g == truth) {
                continue;
            }
            const double s = cosine_similarity(probe.feature, gallery[g].feature).value;
            if (s > truth_sim || (s == truth_sim && g < truth)) {
                ++rank;
            }
        }
        report.per_probe_rank.push_back(rank);
        report.probe_ids.push_back(probe.id.empty() ? probe.identity : probe.id);
        hits += rank == 1;
    }
    report.n_samples = static_cast<int>(probes.size());
    report.rank1 = static_cast<double>(hits) / static_cast<double>(probes.size());
    return report;
}

/// One value per line, shortest round-trip formatting.
inline std::string format_feature(const Eigen::VectorXd& f)
{
    std::string out;
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        out += format_double(f(i));
        out += '\n';
    }
    return out;
}

inline Eigen::VectorXd parse_feature(const std::string& text)
{
    std::vector<double> values;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto tokens = split_whitespace(lines[i]);
        if (tokens.empty()) {
            continue;
        }
        double v = 0.0;
        if (tokens.size() != 1 || !parse_double(tokens[0], v)) {
            throw ParseError("feature", "line " + std::to_string(i + 1) + " is not a single finite number");
        }
        values.push_back(v);
    }
    if (values.empty()) {
        throw ParseError("feature", "feature file is empty");
    }
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline Eigen::VectorXd read_feature(const std::filesystem::path& path)
{
    return parse_feature(read_file(path));
}

namespace detail {

inline std::string json_string(const std::string& s)
{
    std::string out = "\"";
    for (const char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default:
            if (static_cast<unsigned char>(c) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(c));
                out += buf;
            } else {
                out += c;
            }
        }
    }
    return out + "\"";
}

} /* namespace detail */

/// Single-line JSON object with the report's populated fields.
inline std::string format_report_json(const EvalReport& r)
{
    std::string out = "{\"n_samples\":" + std::to_string(r.n_samples);
    if (!r.per_sample.empty()) {
        out += ",\"rmse\":" + format_double(r.rmse) + ",\"per_sample\":[";
        for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
            out += (i ? "," : "") + std::string("{\"id\":") + detail::json_string(r.per_sample[i].id) +
                   ",\"error\":" + format_double(r.per_sample[i].error) + "}";
        }
        out += "]";
    }
    if (r.rank1) {
        out += ",\"rank1\":" + format_double(*r.rank1) + ",\"per_probe_rank\":[";
        for (std::size_t i = 0; i < r.per_probe_rank.size(); ++i) {
            out += (i ? "," : "") + std::string("{\"id\":") + detail::json_string(r.probe_ids[i]) +
                   ",\"rank\":" + std::to_string(r.per_probe_rank[i]) + "}";
        }
        out += "]";
    }
    return out + "}\n";
}

/// Plain-text summary table for terminals.
inline std::string format_report_table(const EvalReport& r)
{
    std::ostringstream os;
    if (!r.per_sample.empty()) {
        os << "sample\terror\n";
        for (const auto& s : r.per_sample) {
            os << s.id << '\t' << format_double(s.error) << '\n';
        }
        os << "samples: " << r.n_samples << "\nrmse: " << format_double(r.rmse) << '\n';
    }
    if (r.rank1) {
        os << "probe\trank\n";
        for (std::size_t i = 0; i < r.per_probe_rank.size(); ++i) {
            os << r.probe_ids[i] << '\t' << r.per_probe_rank[i] << '\n';
        }
        os << "probes: " << r.n_samples << "\nrank-1: " << format_double(*r.rank1) << '\n';
    }
    return os.str();
}

} /* namespace pen */

#endif /* PEN_EVAL_HPP_ */
