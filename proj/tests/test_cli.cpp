#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include "ttsr/synthetic.hpp"
#include "ttsr/trainer.hpp"

using namespace ttsr;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "ttsr_cli_test";

struct Result {
    int status;
    std::string out;
};

Result run(const std::string& args) {
    const fs::path log = kDir / "stdout.txt";
    const std::string cmd = std::string(TTSR_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, read_file(log)};
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.adam.lr = 1e-3;
    c.warmup_epochs = 1;
    c.total_epochs = 1;
    c.batch_size = 2;
    c.lr_patch = 8;
    c.seed = 3;
    c.generator.base_channels = 4;
    c.generator.residual_blocks = {1, 1, 1, 1};
    return c;
}

class Cli : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        fs::remove_all(kDir);
        fs::create_directories(kDir);
        save_checkpoint(kDir / "model.bin", Trainer<float>(tiny_config()).checkpoint());
        const auto field = TextureField::random(5);
        write_png(kDir / "lr.png", make_lr(field.render(40, 40)));
        write_png(kDir / "ref.png", field.render(40, 40, 4, 0));
    }
};

}  // namespace

TEST_F(Cli, RejectsBadInvocations) {
    EXPECT_NE(run("").status, 0);
    EXPECT_NE(run("frobnicate").status, 0);
    EXPECT_NE(run("count-params --bogus").status, 0);
    EXPECT_NE(run("train --config " + (kDir / "model.bin").string() + " --out " + kDir.string()).status, 0);
    const auto r = run("gradcheck --dtype f32");
    EXPECT_EQ(r.status, 1);
    EXPECT_NE(r.out.find("error:"), std::string::npos);
}

TEST_F(Cli, CountParamsAssertsOnlyTheDefaultConfig) {
    const auto ok = run("count-params --csfi --channels 64 --assert");
    EXPECT_EQ(ok.status, 0) << ok.out;
    EXPECT_NE(ok.out.find("6729603"), std::string::npos);
    EXPECT_EQ(run("count-params --assert").status, 0);
    EXPECT_NE(run("count-params --channels 32 --assert").status, 0);
    EXPECT_EQ(run("count-params --channels 32 --blocks 1,1,1,1").status, 0);
}

TEST_F(Cli, InferIsDeterministicAndFourTimesLarger) {
    const std::string base = "infer --ckpt " + (kDir / "model.bin").string() + " --lr " + (kDir / "lr.png").string() +
                             " --ref " + (kDir / "ref.png").string() + " --out ";
    ASSERT_EQ(run(base + (kDir / "a.png").string()).status, 0);
    ASSERT_EQ(run(base + (kDir / "b.png").string()).status, 0);
    const ImageU8 a = read_png(kDir / "a.png");
    EXPECT_EQ(a.width, 40u);
    EXPECT_EQ(a.height, 40u);
    EXPECT_EQ(read_file(kDir / "a.png"), read_file(kDir / "b.png"));
}

TEST_F(Cli, CorruptCheckpointLeavesNoOutput) {
    const std::string bytes = read_file(kDir / "model.bin");
    write_file_atomic(kDir / "bad.bin", bytes.substr(0, bytes.size() / 3));
    const auto r = run("infer --ckpt " + (kDir / "bad.bin").string() + " --lr " + (kDir / "lr.png").string() +
                       " --ref " + (kDir / "ref.png").string() + " --out " + (kDir / "never.png").string());
    EXPECT_EQ(r.status, 1);
    EXPECT_NE(r.out.find("error:"), std::string::npos);
    EXPECT_FALSE(fs::exists(kDir / "never.png"));
}

TEST_F(Cli, TrainThenEvaluate) {
    ToyDatasetOptions o;
    o.pairs = 2;
    o.extent = 32;
    const auto ds = make_toy_dataset(o);
    ds.save(kDir / "data");
    for (std::size_t i = 0; i < ds.size(); ++i) write_png(kDir / "data" / "ref" / (ds.ids[i] + "_GT.png"), ds.hr[i]);
    write_file_atomic(kDir / "toy.cfg", tiny_config().to_text());
    const auto t = run("train --config " + (kDir / "toy.cfg").string() + " --data " + (kDir / "data").string() +
                       " --out " + (kDir / "run").string() + " --seed 9");
    ASSERT_EQ(t.status, 0) << t.out;
    EXPECT_TRUE(fs::exists(kDir / "run" / "final.bin"));
    EXPECT_EQ(Trainer<float>::from_checkpoint(kDir / "run" / "final.bin").config().seed, 9u);
    const auto e = run("eval --ckpt " + (kDir / "run" / "final.bin").string() + " --data " + (kDir / "data").string() +
                       " --levels GT,LR");
    ASSERT_EQ(e.status, 0) << e.out;
    EXPECT_EQ(e.out.rfind("level,psnr,ssim,count\nGT,", 0), 0u) << e.out;
    EXPECT_NE(e.out.find("\nLR,"), std::string::npos);
    EXPECT_NE(run("eval --ckpt " + (kDir / "run" / "final.bin").string() + " --data " + (kDir / "data").string() +
                  " --levels far").status,
              0);
}

TEST_F(Cli, BenchAndVizProduceArtifacts) {
    const auto b = run("bench --sizes 1,2 --channels 8 --repeats 1");
    ASSERT_EQ(b.status, 0) << b.out;
    EXPECT_EQ(b.out.rfind("query_grid,", 0), 0u);
    EXPECT_NE(b.out.find("\n1x1,1x1,8,1,"), std::string::npos);
    EXPECT_NE(b.out.find("\n2x2,2x2,8,16,"), std::string::npos);

    const ImageU8 lr = read_png(kDir / "lr.png");
    write_png(kDir / "up.png", upscale4(lr));
    const auto v = run("viz-transfer --seed 2 --lr " + (kDir / "lr.png").string() + " --ref " +
                       (kDir / "up.png").string() + " --out " + (kDir / "viz.png").string());
    ASSERT_EQ(v.status, 0) << v.out;
    EXPECT_EQ(read_png(kDir / "viz.png"), upscale4(lr));
}
