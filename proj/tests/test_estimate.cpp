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

#include "pen/datagen.hpp"
#include "pen/estimate.hpp"
#include "pen/external.hpp"
#include "pen/pipeline.hpp"
#include "pen/random.hpp"
#include "pen/toy_model.hpp"

#include "gtest/gtest.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

using namespace pen;
using Eigen::Vector3d;

namespace {

const MorphableModel& toy()
{
    static const MorphableModel m = make_toy_model(1, 200, 4, 2);
    return m;
}

struct Case
{
    FaceParams truth;
    WeakPerspective cam;
    std::vector<Vector3d> landmarks;
};

Case make_case(const MorphableModel& m, Random& rng, double coeff_range, double max_angle)
{
    Case c;
    c.truth = zero_params(m);
    for (int k = 0; k < m.num_shape(); ++k) {
        c.truth.shape(k) = rng.uniform(-coeff_range, coeff_range);
    }
    for (int l = 0; l < m.num_expression(); ++l) {
        c.truth.expression(l) = rng.uniform(-coeff_range, coeff_range);
    }
    c.cam = posed_camera(m, rng.uniform(-max_angle / 2, max_angle / 2), rng.uniform(-max_angle, max_angle),
                         rng.uniform(-max_angle / 3, max_angle / 3), rng.uniform(0.9, 1.1),
                         Eigen::Vector2d(rng.uniform(-3, 3), rng.uniform(-3, 3)), 128);
    c.truth.pose = c.cam.to_pose();
    c.landmarks = observe_landmarks(m, synthesize_shape(m, c.truth), c.cam);
    return c;
}

/// Returns fixed parameters, optionally overriding pose and expression.
class FixedEstimator final : public Estimator
{
public:
    explicit FixedEstimator(FaceParams p) : p_(std::move(p)) {}
    EstimatorOutput estimate(const EstimatorInput&, const MorphableModel&) const override
    {
        EstimatorOutput out;
        out.params = p_;
        return out;
    }
    std::string name() const override { return "fixed"; }

private:
    FaceParams p_;
};

class FailingEstimator final : public Estimator
{
public:
    EstimatorOutput estimate(const EstimatorInput&, const MorphableModel&) const override
    {
        throw EstimationError("no parameters today");
    }
    std::string name() const override { return "failing"; }
};

} // namespace

TEST(Passthrough, ReturnsReferenceUnchanged)
{
    Random rng(1);
    const auto c = make_case(toy(), rng, 1.0, 0.5);
    EstimatorInput in;
    in.depth = DepthImage(8, 8);
    in.landmarks = c.landmarks;
    in.reference = c.truth;
    const auto out = PassthroughEstimator().estimate(in, toy());
    EXPECT_EQ(out.params, c.truth);
    EXPECT_TRUE(out.converged);
    in.reference.reset();
    EXPECT_THROW(PassthroughEstimator().estimate(in, toy()), EstimationError);
    in.landmarks.reset();
    EXPECT_THROW(PassthroughEstimator().estimate(in, toy()), InvalidInput);
}

TEST(LandmarkFitter, RecoversNoiselessParameters)
{
    Random rng(2);
    const LandmarkFitter fitter;
    for (int trial = 0; trial < 40; ++trial) {
        const auto c = make_case(toy(), rng, 1.0, 1.0);
        const auto out = fitter.fit(c.landmarks, toy());
        const auto& p = out.params.pose;
        EXPECT_NEAR(p.scale, c.truth.pose.scale, 1e-3);
        EXPECT_NEAR(p.pitch, c.truth.pose.pitch, 1e-3);
        EXPECT_NEAR(p.yaw, c.truth.pose.yaw, 1e-3);
        EXPECT_NEAR(p.roll, c.truth.pose.roll, 1e-3);
        EXPECT_LE((out.params.shape - c.truth.shape).cwiseAbs().maxCoeff(), 5e-2);
    }
}

TEST(LandmarkFitter, MeanFaceCameraOnlyIsExact)
{
    Random rng(3);
    const LandmarkFitter fitter;
    for (int trial = 0; trial < 10; ++trial) {
        auto c = make_case(toy(), rng, 0.0, 1.0);
        const auto out = fitter.fit(c.landmarks, toy());
        EXPECT_LT(out.final_residual, 1e-6);
        EXPECT_LE(out.iterations, 3);
        EXPECT_NEAR(out.params.pose.yaw, c.truth.pose.yaw, 1e-6);
        EXPECT_NEAR(out.params.pose.scale, c.truth.pose.scale, 1e-6);
        EXPECT_LT(out.params.shape.norm(), 1e-3);
        EXPECT_LT(out.params.expression.norm(), 1e-3);
    }
}

TEST(LandmarkFitter, ObjectiveNeverIncreases)
{
    Random rng(4);
    const LandmarkFitter fitter;
    for (int trial = 0; trial < 100; ++trial) {
        auto c = make_case(toy(), rng, 1.5, 1.0);
        for (auto& lm : c.landmarks) {
            lm += Vector3d(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 3));
        }
        const auto out = fitter.fit(c.landmarks, toy());
        ASSERT_FALSE(out.objective_log.empty());
        for (std::size_t i = 1; i < out.objective_log.size(); ++i) {
            ASSERT_LE(out.objective_log[i], out.objective_log[i - 1]) << "trial " << trial << " step " << i;
        }
    }
}

TEST(LandmarkFitter, NoiseDegradesGracefully)
{
    Random rng(5);
    const LandmarkFitter fitter;
    for (int trial = 0; trial < 30; ++trial) {
        const auto c = make_case(toy(), rng, 1.0, 0.8);
        std::vector<Vector3d> noise;
        for (std::size_t i = 0; i < c.landmarks.size(); ++i) {
            noise.emplace_back(rng.normal(), rng.normal(), rng.normal());
        }
        double last = -1.0;
        for (const double sigma : {0.5, 1.0, 2.0, 4.0}) {
            auto obs = c.landmarks;
            for (std::size_t i = 0; i < obs.size(); ++i) {
                obs[i] += sigma * noise[i];
            }
            const double r = fitter.fit(obs, toy()).final_residual;
            EXPECT_GE(r, last);
            last = r;
        }
    }
}

TEST(LandmarkFitter, RejectsBadInput)
{
    const LandmarkFitter fitter;
    EXPECT_THROW(fitter.fit(std::vector<Vector3d>(3), toy()), InvalidInput);
    EstimatorInput in;
    in.depth = DepthImage(4, 4);
    in.hha = HhaImage(4, 4);
    EXPECT_THROW(fitter.estimate(in, toy()), InvalidInput);
    EXPECT_THROW(LandmarkFitter(LandmarkFitConfig{0, 1e-2, 1e-2, 1e-8}), InvalidInput);
    // Landmarks that all coincide leave the camera undetermined.
    EXPECT_THROW(fitter.fit(std::vector<Vector3d>(toy().landmark_indices().size(), Vector3d(1, 2, 3)), toy()),
                 EstimationError);
}

TEST(ParamLoss, MatchesOracleAndDefinition)
{
    Random rng(6);
    FaceParams a = zero_params(toy()), b = zero_params(toy());
    for (int trial = 0; trial < 50; ++trial) {
        for (int k = 0; k < 4; ++k) {
            a.shape(k) = rng.normal();
            b.shape(k) = rng.normal();
        }
        a.expression = Eigen::Vector2d(rng.normal(), rng.normal());
        a.pose.yaw = rng.uniform(-1, 1);
        b.pose.tx = rng.uniform(-5, 5);
        const auto va = a.to_vector(), vb = b.to_vector();
        EXPECT_NEAR(param_l2_loss(a, b), oracle::mean_of_squares({va.data(), va.data() + va.size()},
                                                                 {vb.data(), vb.data() + vb.size()}),
                    1e-12);
        EXPECT_EQ(param_l2_loss(a, b), param_l2_loss(b, a));
        EXPECT_EQ(param_l2_loss(a, a), 0.0);
    }
    FaceParams ones = zero_params(toy());
    FaceParams twos = ones;
    ones.pose = Pose{1, 0, 0, 0, 0, 0, 0};
    twos.pose = Pose{2, 1, 1, 1, 1, 1, 1};
    twos.shape.setOnes();
    twos.expression.setOnes();
    EXPECT_DOUBLE_EQ(param_l2_loss(ones, twos), 1.0);
    FaceParams wrong = ones;
    wrong.shape.resize(3);
    EXPECT_THROW(param_l2_loss(ones, wrong), InvalidInput);
}

TEST(ParamText, RoundTripAndErrors)
{
    Random rng(7);
    const auto c = make_case(toy(), rng, 1.0, 0.5);
    EXPECT_EQ(parse_params(format_params(c.truth), 4, 2), c.truth);

    std::string short_file;
    for (int i = 0; i < 234; ++i) {
        short_file += i == 0 ? "1\n" : "0\n";
    }
    try {
        parse_params(short_file, 199, 29);
        FAIL() << "short file accepted";
    } catch (const ParamLengthError& e) {
        EXPECT_EQ(e.expected(), 235u);
        EXPECT_EQ(e.actual(), 234u);
        EXPECT_NE(std::string(e.what()).find("235"), std::string::npos);
    }
    std::string bad = "1\n";
    for (int i = 1; i < 235; ++i) {
        bad += i == 11 ? "abc\n" : "0\n";
    }
    try {
        parse_params(bad, 199, 29);
        FAIL() << "bad token accepted";
    } catch (const ParamParseError& e) {
        EXPECT_EQ(e.line(), 12u);
    }
}

TEST(LandmarkText, RoundTrip)
{
    Random rng(8);
    const auto c = make_case(toy(), rng, 1.0, 0.5);
    EXPECT_EQ(parse_landmarks(format_landmarks(c.landmarks)), c.landmarks);
    EXPECT_THROW(parse_landmarks("1 2\n"), ParseError);
}

class ExternalTest : public ::testing::Test
{
protected:
    void SetUp() override
    {
        dir = oracle::temp_dir("external");
        Random rng(9);
        c = make_case(toy(), rng, 1.0, 0.5);
        write_file_atomic(dir / "answer.txt", format_params(c.truth));
        in.depth = rasterize_depth(synthesize_shape(toy(), c.truth), toy().triangles(), c.cam, 64, 64);
        in.landmarks = c.landmarks;
    }
    void TearDown() override { std::filesystem::remove_all(dir); }

    std::filesystem::path dir;
    Case c;
    EstimatorInput in;
};

TEST_F(ExternalTest, StubCommandResultIsParsed)
{
    const auto answer = (dir / "answer.txt").string();
    const ExternalEstimator est("cp '" + answer + "' {dir}/params.txt", dir / "xchg");
    const auto out = est.estimate(in, toy());
    EXPECT_EQ(out.params, c.truth);
    EXPECT_TRUE(std::filesystem::exists(dir / "xchg" / "input.pgm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "xchg" / "landmarks.txt"));
    // Without {dir} the directory is the last argument.
    const ExternalEstimator appended("sh -c 'cp \"$0\" \"$1/params.txt\"' '" + answer + "'", dir / "xchg2");
    EXPECT_EQ(appended.estimate(in, toy()).params, c.truth);
}

TEST_F(ExternalTest, DistinctErrorKinds)
{
    EXPECT_THROW(ExternalEstimator("exit 3", dir / "a").estimate(in, toy()), ExternalCommandError);
    EXPECT_THROW(ExternalEstimator("true", dir / "b").estimate(in, toy()), ExternalCommandError);
    EXPECT_THROW(ExternalEstimator("sleep 5; : {dir}", dir / "c", std::chrono::milliseconds(200)).estimate(in, toy()),
                 ExternalTimeoutError);
    EXPECT_THROW(ExternalEstimator("echo 1 > {dir}/params.txt", dir / "d").estimate(in, toy()), ParamLengthError);
    EXPECT_THROW(ExternalEstimator("printf '1\\nx\\n' > {dir}/params.txt", dir / "e").estimate(in, toy()),
                 ParamParseError);
}

TEST_F(ExternalTest, TimeoutKillsWholeProcessGroup)
{
    const auto marker = dir / "late";
    const auto start = std::chrono::steady_clock::now();
    EXPECT_THROW(ExternalEstimator("(sleep 1; touch '" + marker.string() + "') & wait; : {dir}", dir / "x",
                                   std::chrono::milliseconds(100))
                     .estimate(in, toy()),
                 ExternalTimeoutError);
    EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(1));
    std::this_thread::sleep_for(std::chrono::milliseconds(1300));
    EXPECT_FALSE(std::filesystem::exists(marker));
}

class PipelineTest : public ::testing::Test
{
protected:
    const MorphableModel& m = toy();
    PenConfig cfg = default_pen_config(toy());

    DepthImage render(const FaceParams& p, const WeakPerspective& cam) const
    {
        return rasterize_depth(synthesize_shape(m, p), m.triangles(), cam, cfg.out_size, cfg.out_size);
    }
};

TEST_F(PipelineTest, CanonicalRenderIsFixedPoint)
{
    Random rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        FaceParams p = zero_params(m);
        for (int k = 0; k < m.num_shape(); ++k) {
            p.shape(k) = rng.uniform(-1, 1);
        }
        p.pose = cfg.canonical_pose.to_pose();
        const auto input = render(p, cfg.canonical_pose);
        const auto out = normalize_depth_image(PenInput{"x", input, std::nullopt, p}, m, PassthroughEstimator(), cfg);
        EXPECT_EQ(out.pen, input);
        // Idempotence: normalizing the PEN image again reproduces it.
        const auto again = normalize_depth_image(PenInput{"y", out.pen, std::nullopt, p}, m, PassthroughEstimator(), cfg);
        EXPECT_EQ(again.pen, out.pen);
    }
}

TEST_F(PipelineTest, PosedExpressiveRenderMapsToNeutralFrontalTarget)
{
    Random rng(11);
    FaceParams p = zero_params(m);
    for (int k = 0; k < m.num_shape(); ++k) {
        p.shape(k) = rng.uniform(-1, 1);
    }
    p.expression = Eigen::Vector2d(0.8, -0.6);
    const auto cam = posed_camera(m, 0.0, std::numbers::pi / 6, 0.0, 1.0, Eigen::Vector2d::Zero(), cfg.out_size);
    p.pose = cam.to_pose();
    const auto out = normalize_depth_image(PenInput{"x", render(p, cam), std::nullopt, p}, m, PassthroughEstimator(), cfg);
    FaceParams target = p;
    target.expression.setZero();
    EXPECT_EQ(out.pen, render(target, cfg.canonical_pose));
}

TEST_F(PipelineTest, PixelsIgnoreEstimatedPoseAndExpression)
{
    FaceParams p = zero_params(m);
    p.shape << 0.5, -0.2, 0.1, 0.9;
    p.pose = cfg.canonical_pose.to_pose();
    const auto input = render(p, cfg.canonical_pose);
    const auto base = normalize_depth_image(input, m, FixedEstimator(p), cfg, std::vector<Vector3d>(50));
    FaceParams mutated = p;
    mutated.expression << 3.0, -2.0;
    mutated.pose = Pose{2.0, 0.4, -0.7, 0.2, -40, 30, 900};
    const auto other = normalize_depth_image(input, m, FixedEstimator(mutated), cfg, std::vector<Vector3d>(50));
    EXPECT_EQ(base.pen, other.pen);
    EXPECT_EQ(other.estimate.params.expression, mutated.expression);
}

TEST_F(PipelineTest, FailuresCarryStageLabels)
{
    FaceParams p = zero_params(m);
    p.pose = cfg.canonical_pose.to_pose();
    const auto input = render(p, cfg.canonical_pose);
    try {
        normalize_depth_image(PenInput{"x", input, std::nullopt, p}, m, FailingEstimator(), cfg);
        FAIL() << "no error";
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.stage(), "estimate");
    }
    try {
        normalize_depth_image(PenInput{"x", DepthImage(), std::nullopt, p}, m, PassthroughEstimator(), cfg);
        FAIL() << "no error";
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.stage(), "input");
    }
    try {
        normalize_depth_image(PenInput{"x", DepthImage(16, 16), std::nullopt, p}, m, PassthroughEstimator(), cfg);
        FAIL() << "no error";
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.stage(), "hha");
    }
}

TEST_F(PipelineTest, BatchKeepsOrderAndIsolatesFailures)
{
    Random rng(12);
    std::vector<PenInput> inputs;
    for (int i = 0; i < 12; ++i) {
        FaceParams p = zero_params(m);
        p.shape(0) = rng.uniform(-1, 1);
        p.expression(1) = rng.uniform(-1, 1);
        const auto cam = posed_camera(m, 0.0, rng.uniform(-0.6, 0.6), 0.0, 1.0, Eigen::Vector2d::Zero(), 128);
        p.pose = cam.to_pose();
        inputs.push_back({"item" + std::to_string(i), render(p, cam), observe_landmarks(m, synthesize_shape(m, p), cam), p});
    }
    inputs[1].depth = DepthImage(); // malformed
    const LandmarkFitter fitter;
    const auto serial = batch_normalize(inputs, m, fitter, cfg, 1);
    const auto parallel = batch_normalize(inputs, m, fitter, cfg, 4);
    ASSERT_EQ(serial.size(), inputs.size());
    EXPECT_TRUE(serial[0].ok());
    EXPECT_FALSE(serial[1].ok());
    EXPECT_EQ(serial[1].stage, "input");
    EXPECT_TRUE(serial[2].ok());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        EXPECT_EQ(serial[i].id, inputs[i].id);
        EXPECT_EQ(parallel[i].id, inputs[i].id);
        EXPECT_EQ(serial[i].ok(), parallel[i].ok());
        if (serial[i].ok()) {
            EXPECT_EQ(serial[i].result->pen, parallel[i].result->pen);
            EXPECT_EQ(serial[i].result->pen, normalize_depth_image(inputs[i], m, fitter, cfg).pen);
        }
    }
}

TEST_F(PipelineTest, DefaultCanonicalCameraFramesMeanFace)
{
    const auto& cam = cfg.canonical_pose;
    EXPECT_TRUE(cam.rotation.isIdentity(0.0));
    const auto projected = project(cam, FaceShape{m.mean_shape()});
    double min_u = 1e9, max_u = -1e9, min_v = 1e9, max_v = -1e9, min_depth = 1e9;
    for (const auto& p : projected) {
        min_u = std::min(min_u, p.x());
        max_u = std::max(max_u, p.x());
        min_v = std::min(min_v, p.y());
        max_v = std::max(max_v, p.y());
        min_depth = std::min(min_depth, p.z());
    }
    EXPECT_NEAR(std::max(max_u - min_u, max_v - min_v), 0.9 * 128, 1e-9);
    EXPECT_NEAR(0.5 * (min_u + max_u), 64.0, 1e-9);
    EXPECT_NEAR(0.5 * (min_v + max_v), 64.0, 1e-9);
    EXPECT_NEAR(min_depth, 600.0, 1e-9);
}
