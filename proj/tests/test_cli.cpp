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

#include "gtest/gtest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliRun
{
    int code = -1;
    std::string out;
    std::string err;
};

class CliTest : public ::testing::Test
{
protected:
    void SetUp() override { dir = oracle::temp_dir("cli"); }
    void TearDown() override { fs::remove_all(dir); }

    CliRun run(const std::string& args) const
    {
        const auto out = dir / "stdout.txt";
        const auto err = dir / "stderr.txt";
        const std::string cmd = std::string("'") + PENDEPTH_CLI + "' " + args + " >'" + out.string() + "' 2>'" +
                                err.string() + "'";
        const int status = std::system(cmd.c_str());
        CliRun r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = pen::read_file(out);
        r.err = pen::read_file(err);
        return r;
    }

    std::string p(const std::string& name) const { return "'" + (dir / name).string() + "'"; }

    void make_dataset(const std::string& extra = "") const
    {
        ASSERT_EQ(run("gen-model --seed 3 --vertices 150 --shape 4 --expression 2 --out " + p("model.bin")).code, 0);
        const auto r = run("gen-data --model " + p("model.bin") + " --out " + p("data") +
                           " --subjects 4 --images 3 --size 64 --seed 5 " + extra);
        ASSERT_EQ(r.code, 0) << r.err;
    }

    fs::path dir;
};

} // namespace

TEST_F(CliTest, GenerateNormalizeIdentifyEvaluate)
{
    make_dataset();
    auto r = run("normalize --model " + p("model.bin") + " --manifest " + p("data/manifest.jsonl") +
                 " --estimator passthrough --size 64 --out " + p("pen"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("normalized 16 of 16"), std::string::npos) << r.out;
    for (const auto& f : {"audit.jsonl", "estimates.tsv", "gallery.tsv", "probes.tsv", "s000_gallery.pen.pgm"}) {
        EXPECT_TRUE(fs::exists(dir / "pen" / f)) << f;
    }

    r = run("identify --gallery " + p("pen/gallery.tsv") + " --probes " + p("pen/probes.tsv") + " --out " +
            p("id.json") + " --table " + p("id.txt"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("rank-1: 1 over 12 probes"), std::string::npos) << r.out;
    EXPECT_NE(pen::read_file(dir / "id.json").find("\"rank1\":1"), std::string::npos);

    r = run("reconstruct-eval --model " + p("model.bin") + " --ground-truth " + p("data/params.tsv") +
            " --estimates " + p("pen/estimates.tsv") + " --out " + p("rec.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(pen::read_file(dir / "rec.json").find("\"rmse\":0,"), std::string::npos);
}

TEST_F(CliTest, HhaAndFitProjection)
{
    make_dataset();
    auto r = run("hha --input " + p("data/s000_000.pgm") + " --out " + p("h.ppm") + " --metadata " + p("h.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "h.ppm"));
    EXPECT_TRUE(fs::exists(dir / "h.json"));
    r = run("fit-projection --model " + p("model.bin") + " --landmarks " + p("data/s000_000.lm.txt") + " " +
            p("data/s001_001.lm.txt") + " --out " + p("cam.txt"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "cam.txt"));
}

TEST_F(CliTest, MissingIdentityIsReported)
{
    make_dataset();
    pen::write_file_atomic(dir / "probes.tsv", "nobody\t" + (dir / "data" / "s000_000.pgm").string() + "\n");
    const auto r = run("identify --gallery " + p("data/gallery.tsv") + " --probes " + p("probes.tsv"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("nobody"), std::string::npos) << r.err;
}

TEST_F(CliTest, FailedItemsAreAuditedWithoutStoppingBatch)
{
    make_dataset();
    auto manifest = pen::read_file(dir / "data" / "manifest.jsonl");
    manifest += "{\"id\":\"broken\",\"depth\":\"does_not_exist.pgm\"}\n";
    pen::write_file_atomic(dir / "data" / "manifest.jsonl", manifest);
    const auto r = run("normalize --model " + p("model.bin") + " --manifest " + p("data/manifest.jsonl") +
                       " --estimator landmark --size 64 --out " + p("pen"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("normalized 16 of 17"), std::string::npos) << r.out;
    EXPECT_NE(pen::read_file(dir / "pen" / "audit.jsonl").find("\"status\":\"error\""), std::string::npos);
}

TEST_F(CliTest, HelpListsDefaults)
{
    const auto r = run("gen-data --help");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("--noise"), std::string::npos);
    EXPECT_NE(r.out.find("3"), std::string::npos);
    EXPECT_NE(r.out.find("--yaw"), std::string::npos);
    EXPECT_NE(r.out.find("60"), std::string::npos);
}

TEST_F(CliTest, BadArgumentsAndConfig)
{
    EXPECT_EQ(run("no-such-command").code, 2);
    EXPECT_EQ(run("gen-model --vertices notanumber --out " + p("m.bin")).code, 2);
    pen::write_file_atomic(dir / "cfg.json", "{\"model\": \"m.bin\", \"colour\": 3}");
    const auto r = run("--config " + p("cfg.json") + " gen-model --out " + p("m.bin"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("colour"), std::string::npos) << r.err;
}
