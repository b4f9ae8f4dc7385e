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
#include "oracles.hpp"

#include "pen/io.hpp"
#include "pen/model.hpp"
#include "pen/model_io.hpp"
#include "pen/random.hpp"
#include "pen/toy_model.hpp"

#include "gtest/gtest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace pen;

namespace {

FaceParams random_params(const MorphableModel& m, Random& rng, double range = 2.0)
{
    FaceParams p = zero_params(m);
    for (int k = 0; k < m.num_shape(); ++k) {
        p.shape(k) = rng.uniform(-range, range);
    }
    for (int l = 0; l < m.num_expression(); ++l) {
        p.expression(l) = rng.uniform(-range, range);
    }
    return p;
}

std::vector<double> to_std(const Eigen::VectorXd& v)
{
    return {v.data(), v.data() + v.size()};
}

} // namespace

TEST(Synthesis, MatchesTermByTermOracle)
{
    const auto m = make_toy_model(1, 50, 4, 2);
    Random rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = random_params(m, rng);
        const auto got = synthesize_shape(m, p).coords;
        const auto want = oracle::synthesize(m, to_std(p.shape), to_std(p.expression));
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < want.size(); ++i) {
            num += (got(static_cast<Eigen::Index>(i)) - want[i]) * (got(static_cast<Eigen::Index>(i)) - want[i]);
            den += want[i] * want[i];
        }
        ASSERT_LE(std::sqrt(num / den), 1e-12);
    }
}

TEST(Synthesis, ZeroCoefficientsGiveMeanExactly)
{
    const auto m = make_toy_model(3, 80, 5, 3);
    auto p = zero_params(m);
    p.pose = Pose{2.0, 0.3, -0.2, 0.1, 5.0, 6.0, 700.0};
    EXPECT_TRUE(synthesize_shape(m, p).coords == m.mean_shape());
}

TEST(Synthesis, IsLinearInCoefficients)
{
    const auto m = make_toy_model(2, 60, 4, 2);
    Random rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p1 = random_params(m, rng);
        const auto p2 = random_params(m, rng);
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        FaceParams mix = zero_params(m);
        mix.shape = a * p1.shape + b * p2.shape;
        mix.expression = a * p1.expression + b * p2.expression;
        const Eigen::VectorXd lhs = synthesize_shape(m, mix).coords;
        const Eigen::VectorXd rhs = a * (synthesize_shape(m, p1).coords - m.mean_shape()) +
                                    b * (synthesize_shape(m, p2).coords - m.mean_shape()) + m.mean_shape();
        EXPECT_LE((lhs - rhs).norm(), 1e-9 * rhs.norm());
    }
}

TEST(Synthesis, RejectsDimensionMismatch)
{
    const auto m = make_toy_model(1, 200, 199, 29);
    auto p = zero_params(m);
    EXPECT_NO_THROW(synthesize_shape(m, p));
    p.shape = Eigen::VectorXd::Zero(198);
    EXPECT_THROW(synthesize_shape(m, p), InvalidInput);
}

TEST(Normalization, InversePairAndDefinition)
{
    const auto m = make_toy_model(4, 60, 4, 2);
    Random rng(9);
    Eigen::VectorXd rs(4), re(2);
    for (int i = 0; i < 4; ++i) {
        rs(i) = rng.uniform(-100, 100);
    }
    re << rng.uniform(-50, 50), rng.uniform(-50, 50);
    const auto [ns, ne] = normalize_params(rs, re, m);
    const auto [bs, be] = denormalize_params(ns, ne, m);
    EXPECT_LE((bs - rs).cwiseAbs().maxCoeff(), 1e-12 * 100);
    EXPECT_LE((be - re).cwiseAbs().maxCoeff(), 1e-12 * 50);

    const auto [one, zero] = normalize_params(m.shape_scales(), Eigen::VectorXd::Zero(2), m);
    EXPECT_TRUE(one.isOnes(0.0));
    EXPECT_TRUE(zero.isZero(0.0));
    EXPECT_THROW(normalize_params(Eigen::VectorXd::Zero(3), re, m), InvalidInput);
}

TEST(FaceParams, VectorOrderIsPoseShapeExpression)
{
    FaceParams p;
    p.pose = Pose{1.5, 0.1, 0.2, 0.3, 4, 5, 6};
    p.shape = Eigen::Vector2d(7, 8);
    p.expression = Eigen::VectorXd::Constant(1, 9);
    const auto v = p.to_vector();
    ASSERT_EQ(v.size(), 10);
    for (int i = 0; i < 10; ++i) {
        EXPECT_EQ(v(i), (std::array<double, 10>{1.5, 0.1, 0.2, 0.3, 4, 5, 6, 7, 8, 9}[i]));
    }
    EXPECT_EQ(FaceParams::from_vector(v, 2, 1), p);
}

TEST(FaceParams, ValidateRejectsBadPose)
{
    FaceParams p;
    p.shape = Eigen::VectorXd::Zero(1);
    p.expression = Eigen::VectorXd::Zero(1);
    p.pose.scale = 0.0;
    EXPECT_THROW(p.validate(), InvalidInput);
    p.pose.scale = 1.0;
    p.pose.yaw = -std::numbers::pi;
    EXPECT_THROW(p.validate(), InvalidInput);
    p.pose.yaw = std::numbers::pi;
    EXPECT_NO_THROW(p.validate());
}

TEST(Model, ConstructorEnforcesInvariants)
{
    const auto m = make_toy_model(1, 30, 2, 1);
    auto tris = m.triangles();
    tris[0][1] = static_cast<std::uint32_t>(m.n_vertices());
    EXPECT_THROW(MorphableModel(m.mean_shape(), m.shape_basis(), m.expression_basis(), m.shape_scales(),
                                m.expression_scales(), tris, m.landmark_indices()),
                 InvalidInput);
    auto degenerate = m.triangles();
    degenerate[0][1] = degenerate[0][0];
    EXPECT_THROW(MorphableModel(m.mean_shape(), m.shape_basis(), m.expression_basis(), m.shape_scales(),
                                m.expression_scales(), degenerate, m.landmark_indices()),
                 InvalidInput);
    Eigen::VectorXd bad_scales = m.shape_scales();
    bad_scales(0) = 0.0;
    EXPECT_THROW(MorphableModel(m.mean_shape(), m.shape_basis(), m.expression_basis(), bad_scales,
                                m.expression_scales(), m.triangles(), m.landmark_indices()),
                 InvalidInput);
    std::vector<std::uint32_t> few(m.landmark_indices().begin(), m.landmark_indices().begin() + 6);
    EXPECT_THROW(MorphableModel(m.mean_shape(), m.shape_basis(), m.expression_basis(), m.shape_scales(),
                                m.expression_scales(), m.triangles(), few),
                 InvalidInput);
}

TEST(ToyModel, DeterministicPerSeed)
{
    EXPECT_EQ(serialize_model(make_toy_model(7, 120, 4, 2)), serialize_model(make_toy_model(7, 120, 4, 2)));
    EXPECT_NE(serialize_model(make_toy_model(7, 120, 4, 2)), serialize_model(make_toy_model(8, 120, 4, 2)));
}

TEST(ToyModel, BasisGramMatrixIsDiagonal)
{
    const auto m = make_toy_model(1, 200, 4, 2);
    Eigen::MatrixXd all(m.mean_shape().size(), 6);
    all << m.shape_basis(), m.expression_basis();
    Eigen::MatrixXd gram(6, 6);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            double s = 0.0;
            for (Eigen::Index r = 0; r < all.rows(); ++r) {
                s += all(r, i) * all(r, j);
            }
            gram(i, j) = s;
        }
    }
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            if (i != j) {
                EXPECT_NEAR(gram(i, j), 0.0, 1e-9);
            }
        }
    }
}

TEST(ToyModel, ConvexOutwardMeshAndSeparatedLandmarks)
{
    const auto m = make_toy_model(2, 200, 4, 2);
    // Outward orientation of a convex surface around the origin: every
    // triangle normal points away from the centre.
    for (const auto& t : m.triangles()) {
        const Eigen::Vector3d a = m.mean_shape().segment<3>(3 * t[0]);
        const Eigen::Vector3d b = m.mean_shape().segment<3>(3 * t[1]);
        const Eigen::Vector3d c = m.mean_shape().segment<3>(3 * t[2]);
        EXPECT_GT((b - a).cross(c - a).dot((a + b + c) / 3.0), 0.0);
    }
    // Every edge shared by at most two triangles.
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
    for (const auto& t : m.triangles()) {
        for (int e = 0; e < 3; ++e) {
            auto a = t[e], b = t[(e + 1) % 3];
            ++edges[{std::min(a, b), std::max(a, b)}];
        }
    }
    for (const auto& [e, count] : edges) {
        EXPECT_LE(count, 2);
    }
    const auto& lm = m.landmark_indices();
    EXPECT_EQ(lm.size(), 50u);
    std::set<std::uint32_t> unique(lm.begin(), lm.end());
    EXPECT_EQ(unique.size(), lm.size());
}

TEST(ToyModel, RejectsTooSmallParameters)
{
    EXPECT_THROW(make_toy_model(1, 11, 2, 1), InvalidInput);
    EXPECT_THROW(make_toy_model(1, 50, 0, 1), InvalidInput);
    EXPECT_THROW(make_toy_model(1, 50, 2, 0), InvalidInput);
    EXPECT_NO_THROW(make_toy_model(1, 12, 2, 1));
}

TEST(ModelIo, RoundTripIsBitExact)
{
    const auto dir = oracle::temp_dir("model");
    const auto m = make_toy_model(1, 200, 4, 2);
    save_model(m, dir / "m.bin");
    const auto back = load_model(dir / "m.bin");
    EXPECT_EQ(back, m);
    EXPECT_EQ(serialize_model(back), read_file(dir / "m.bin"));
    std::filesystem::remove_all(dir);
}

TEST(ModelIo, ErrorsNameTheField)
{
    const auto bytes = serialize_model(make_toy_model(1, 40, 2, 1));
    try {
        deserialize_model("");
        FAIL() << "empty file accepted";
    } catch (const HeaderError& e) {
        EXPECT_EQ(e.field(), "magic");
    }
    try {
        deserialize_model(bytes.substr(0, 200));
        FAIL() << "truncated file accepted";
    } catch (const TruncatedError& e) {
        EXPECT_FALSE(e.field().empty());
    }
    std::string bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_THROW(deserialize_model(bad_version), HeaderError);
    EXPECT_THROW(deserialize_model(bytes + "x"), ParseError);

    // Corrupt the first triangle index: it follows the header (20 bytes),
    // the arrays and the triangle count.
    const auto m = make_toy_model(1, 40, 2, 1);
    const std::size_t arrays = 8u * static_cast<std::size_t>(m.mean_shape().size() * (1 + 2 + 1) + 3);
    std::string topo = bytes;
    const std::uint32_t big = 40;
    std::memcpy(topo.data() + 20 + arrays + 4, &big, 4);
    try {
        deserialize_model(topo);
        FAIL() << "bad triangle accepted";
    } catch (const TopologyError& e) {
        EXPECT_EQ(e.field(), "triangles");
    }
}

TEST(Io, DoubleFormattingRoundTrips)
{
    Random rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
        double back = 0.0;
        ASSERT_TRUE(parse_double(format_double(v), back));
        ASSERT_EQ(back, v);
    }
    double out = 0.0;
    EXPECT_FALSE(parse_double("1.5x", out));
    EXPECT_FALSE(parse_double("nan", out));
    EXPECT_FALSE(parse_double("", out));
}

TEST(Io, TsvManifestResolvesRelativePaths)
{
    const auto dir = oracle::temp_dir("tsv");
    write_file_atomic(dir / "m.tsv", "# comment\nalice\ta.pgm\n\nbob\t/abs/b.pgm\n");
    const auto entries = read_tsv_manifest(dir / "m.tsv");
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[0].identity, "alice");
    EXPECT_EQ(entries[0].path, dir / "a.pgm");
    EXPECT_EQ(entries[1].path, std::filesystem::path("/abs/b.pgm"));
    write_file_atomic(dir / "bad.tsv", "no tab here\n");
    EXPECT_THROW(read_tsv_manifest(dir / "bad.tsv"), ParseError);
    std::filesystem::remove_all(dir);
}

TEST(Random, FixedSequencePerSeed)
{
    Random a(42), b(42);
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = a.uniform();
        ASSERT_EQ(u, b.uniform());
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double z = a.normal();
        b.normal();
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / 20000, 0.0, 0.05);
    EXPECT_NEAR(sq / 20000, 1.0, 0.05);
}
