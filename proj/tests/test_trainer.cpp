#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "ttsr/synthetic.hpp"
#include "ttsr/trainer.hpp"

using namespace ttsr;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ttsr_trainer_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.adam.lr = 1e-3;
    c.warmup_epochs = 1;
    c.total_epochs = 2;
    c.batch_size = 2;
    c.lr_patch = 8;
    c.seed = 7;
    c.generator.base_channels = 4;
    c.generator.residual_blocks = {1, 1, 1, 1};
    return c;
}

PairedDataset tiny_data() {
    ToyDatasetOptions o;
    o.pairs = 4;
    o.extent = 40;
    return make_toy_dataset(o);
}

std::string slurp(const fs::path& p) { return read_file(p); }

ImageU8 random_image(std::size_t e, std::uint64_t seed) {
    Rng rng(seed);
    ImageU8 img(e, e);
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

}  // namespace

TEST(Config, TextRoundTrip) {
    TrainConfig c = tiny_config();
    c.generator.csfi = false;
    c.generator.lte_pool = PoolKind::Max;
    c.weights.gp = 3.5;
    c.max_steps = 17;
    const auto back = TrainConfig::parse(c.to_text());
    EXPECT_EQ(back.to_text(), c.to_text());
    EXPECT_EQ(back.hr_patch(), 32u);
}

TEST(Config, DefaultTrainingSettings) {
    const TrainConfig c;
    EXPECT_EQ(c.adam.lr, 1e-4);
    EXPECT_EQ(c.adam.beta1, 0.9);
    EXPECT_EQ(c.adam.beta2, 0.999);
    EXPECT_EQ(c.adam.eps, 1e-8);
    EXPECT_EQ(c.warmup_epochs, 2u);
    EXPECT_EQ(c.weights.rec, 1.0);
    EXPECT_EQ(c.weights.adv, 1e-3);
    EXPECT_EQ(c.weights.per, 1e-2);
    EXPECT_EQ(c.hr_patch(), 4 * c.lr_patch);
}

TEST(Config, RejectsBadInput) {
    EXPECT_THROW(TrainConfig::parse("learning_rate = 1\n"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::parse("lr = fast\n"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::parse("lr_patch = 16\nhr_patch = 60\n"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::parse("residual_blocks = 1,2,3\n"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::parse("batch_size = 0\n"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::parse("just words\n"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::parse("lr_patch = 10\nwarmup_epochs = 1\ntotal_epochs = 3\n"), std::invalid_argument);
    EXPECT_NO_THROW(TrainConfig::parse("# comment\n\nlr = 2e-4  # trailing\n"));
    EXPECT_THROW(TrainConfig::load("/nonexistent/toy.cfg"), std::runtime_error);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
    ParameterList<double> ps;
    auto& p = ps.add("p", oracle::random_tensor<double>({5}, 1));
    const auto before = p.value;
    AdamState<double> st;
    for (int i = 0; i < 3; ++i) adam_step(ps, st, AdamConfig{});
    EXPECT_EQ(p.value.storage(), before.storage());
    for (double m : st.moments.at("p").first.values()) EXPECT_EQ(m, 0.0);
    EXPECT_EQ(st.step, 3u);
}

TEST(Adam, FirstStepMovesByTheRateAgainstTheGradient) {
    ParameterList<double> ps;
    auto& p = ps.add("p", Tensor<double>({3}, {1.0, 1.0, 1.0}));
    p.grad = Tensor<double>({3}, {0.5, -2.0, 1e-3});
    AdamState<double> st;
    adam_step(ps, st, AdamConfig{});
    EXPECT_NEAR(p.value[0], 1.0 - 1e-4, 1e-9);
    EXPECT_NEAR(p.value[1], 1.0 + 1e-4, 1e-9);
    EXPECT_NEAR(p.value[2], 1.0 - 1e-4, 1e-8);
}

TEST(Adam, MinimizesAScalarQuadratic) {
    ParameterList<double> ps;
    auto& x = ps.add("x", Tensor<double>({1}, {1.0}));
    AdamState<double> st;
    AdamConfig c;
    c.lr = 0.1;
    for (int i = 0; i < 100; ++i) {
        x.grad[0] = 2 * x.value[0];
        adam_step(ps, st, c);
    }
    EXPECT_LT(std::abs(x.value[0]), 0.05);
}

TEST(Adam, MomentsStayInsideConstantGradientEnvelope) {
    ParameterList<double> ps;
    auto& x = ps.add("x", Tensor<double>({1}, {0.0}));
    AdamState<double> st;
    for (int i = 0; i < 50; ++i) {
        x.grad[0] = 0.3;
        adam_step(ps, st, AdamConfig{});
        const auto& [m, v] = st.moments.at("x");
        EXPECT_LE(m[0], 0.3 + 1e-15);
        EXPECT_LE(v[0], 0.09 + 1e-15);
        EXPECT_GE(v[0], 0.0);
    }
}

TEST(Adam, NonFiniteGradientAbortsBeforeAnyUpdate) {
    ParameterList<double> ps;
    auto& a = ps.add("a", Tensor<double>({1}, {1.0}));
    auto& b = ps.add("b", Tensor<double>({1}, {1.0}));
    a.grad[0] = 1.0;
    b.grad[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState<double> st;
    try {
        adam_step(ps, st, AdamConfig{});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
    }
    EXPECT_EQ(a.value[0], 1.0);
    EXPECT_EQ(st.step, 0u);
}

TEST(Augment, GroupLaws) {
    const ImageU8 img = random_image(8, 1);
    EXPECT_EQ(apply_augment(img, AugmentDraw{}), img);
    EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
    EXPECT_EQ(flip_vertical(flip_vertical(img)), img);
    EXPECT_EQ(rotate90(rotate90(img, 1), 1), rotate90(img, 2));
    EXPECT_EQ(rotate90(img, 4), img);
    EXPECT_EQ(rotate90(rotate90(img, 3), 1), img);
    EXPECT_THROW(apply_augment(ImageU8(8, 4), AugmentDraw{}), GeometryError);
}

TEST(Augment, DrawsAreIndependentForHrAndRef) {
    Rng rng(3);
    const ImageU8 img = random_image(8, 2);
    int differ = 0;
    for (int i = 0; i < 32; ++i) {
        const auto [h, r] = augment(img, img, rng);
        differ += h != r;
    }
    EXPECT_GT(differ, 0);
}

TEST(Checkpoint, SerializationIsByteStable) {
    Trainer<float> tr(tiny_config());
    const auto c = tr.checkpoint();
    const std::string bytes = serialize(c);
    EXPECT_EQ(bytes.substr(0, 8), "TTSRCKPT");
    EXPECT_EQ(serialize(deserialize(bytes)), bytes);
    const auto dir = scratch_dir("ckpt");
    save_checkpoint(dir / "a.bin", c);
    const auto back = load_checkpoint(dir / "a.bin");
    EXPECT_EQ(back, c);
    save_checkpoint(dir / "b.bin", back);
    EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
}

TEST(Checkpoint, CorruptFilesAreNamedErrors) {
    const std::string bytes = serialize(Trainer<float>(tiny_config()).checkpoint());
    EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() / 2)), FormatError);
    EXPECT_THROW(deserialize(bytes + "x"), FormatError);
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(deserialize(bad), FormatError);
    std::string v2 = bytes;
    v2[8] = 2;
    try {
        deserialize(v2);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
    }
}

TEST(Checkpoint, ParameterTableMustMatchTheModel) {
    Trainer<float> tr(tiny_config());
    Checkpoint c = tr.checkpoint();
    const std::string missing = c.params.back().name;
    c.params.pop_back();
    try {
        tr.restore(c);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(missing), std::string::npos);
    }
    c = tr.checkpoint();
    c.params.push_back(TensorRecord::from("g.extra.weight", Tensor<float>({1})));
    EXPECT_THROW(tr.restore(c), FormatError);
    c = tr.checkpoint();
    c.params[0].shape = {1};
    c.params[0].payload.resize(4);
    EXPECT_THROW(tr.restore(c), FormatError);
    c = tr.checkpoint();
    c.params[0].dtype = 'd';
    EXPECT_THROW(tr.restore(c), FormatError);
}

TEST(Training, SameSeedGivesIdenticalLogs) {
    const auto ds = tiny_data();
    const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
    Trainer<float>(tiny_config()).fit(ds, a);
    Trainer<float>(tiny_config()).fit(ds, b);
    EXPECT_EQ(slurp(a / "loss_log.csv"), slurp(b / "loss_log.csv"));
    EXPECT_EQ(slurp(a / "final.bin"), slurp(b / "final.bin"));
    EXPECT_TRUE(fs::exists(a / "ckpt_epoch0001.bin"));
    EXPECT_TRUE(fs::exists(a / "ckpt_epoch0002.bin"));
}

TEST(Training, WarmupNeverTouchesCriticOrAdversarialTerms) {
    TrainConfig cfg = tiny_config();
    cfg.total_epochs = cfg.warmup_epochs = 2;
    Trainer<float> tr(cfg);
    ASSERT_NE(tr.discriminator(), nullptr);
    std::vector<Tensor<float>> before;
    for (const auto& p : tr.discriminator()->parameters()) before.push_back(p->value);
    const auto dir = scratch_dir("warm");
    tr.fit(tiny_data(), dir);
    std::size_t i = 0;
    for (const auto& p : tr.discriminator()->parameters()) EXPECT_EQ(p->value.storage(), before[i++].storage());
    std::ifstream log(dir / "loss_log.csv");
    std::string line;
    std::getline(log, line);
    EXPECT_EQ(line, kLossLogHeader);
    std::size_t rows = 0;
    while (std::getline(log, line)) {
        ++rows;
        std::stringstream ss(line);
        std::vector<double> v;
        for (std::string tok; std::getline(ss, tok, ',');) v.push_back(std::stod(tok));
        ASSERT_EQ(v.size(), 7u);
        EXPECT_GT(v[2], 0.0);
        for (std::size_t k = 3; k < 7; ++k) EXPECT_EQ(v[k], 0.0);
    }
    EXPECT_EQ(rows, 4u);
}

TEST(Training, AdversarialPhaseUpdatesTheCritic) {
    Trainer<float> tr(tiny_config());
    const auto before = tr.discriminator()->parameters()[0].value;
    const auto dir = scratch_dir("adv");
    tr.fit(tiny_data(), dir);
    EXPECT_NE(tr.discriminator()->parameters()[0].value.storage(), before.storage());
    const std::string log = slurp(dir / "loss_log.csv");
    const auto last = log.substr(log.rfind('\n', log.size() - 2) + 1);
    EXPECT_NE(last.find(",1,"), std::string::npos);
}

TEST(Training, ResumeReproducesTheUninterruptedRun) {
    const auto ds = tiny_data();
    TrainConfig cfg = tiny_config();
    cfg.total_epochs = 3;
    const auto full = scratch_dir("full"), part = scratch_dir("part");
    Trainer<float>(cfg).fit(ds, full);
    {
        Trainer<float> first(cfg);
        first.set_schedule(1, 0);
        first.fit(ds, part);
    }
    Trainer<float> resumed = Trainer<float>::from_checkpoint(part / "ckpt_epoch0001.bin");
    resumed.set_schedule(3, 0);
    resumed.fit(ds, part);
    EXPECT_EQ(slurp(full / "loss_log.csv"), slurp(part / "loss_log.csv"));
    EXPECT_EQ(slurp(full / "final.bin"), slurp(part / "final.bin"));
}

TEST(Training, DivergenceAbortsWithAStateDump) {
    TrainConfig cfg = tiny_config();
    cfg.adam.lr = 1e30;
    cfg.total_epochs = cfg.warmup_epochs = 3;
    const auto dir = scratch_dir("nan");
    Trainer<float> tr(cfg);
    EXPECT_THROW(tr.fit(tiny_data(), dir), NumericError);
    EXPECT_TRUE(fs::exists(dir / "nan_dump.bin"));
    EXPECT_FALSE(fs::exists(dir / "final.bin"));
}

TEST(Training, RejectsEmptyDataAndOversizedPatches) {
    Trainer<float> tr(tiny_config());
    const auto dir = scratch_dir("bad");
    EXPECT_THROW(tr.fit(PairedDataset{}, dir), std::invalid_argument);
    PairedDataset small;
    small.add("000", ImageU8(16, 16), ImageU8(16, 16));
    EXPECT_THROW(tr.fit(small, dir), GeometryError);
}

TEST(Inference, ProducesFourTimesTheInputDeterministically) {
    Trainer<float> tr(tiny_config());
    const ImageU8 lr = random_image(10, 1), ref = random_image(40, 2);
    const ImageU8 a = super_resolve(tr.generator(), lr, ref);
    EXPECT_EQ(a.width, 40u);
    EXPECT_EQ(a.height, 40u);
    EXPECT_EQ(a, super_resolve(tr.generator(), lr, ref));
    EXPECT_THROW(super_resolve(tr.generator(), lr, random_image(42, 3)), GeometryError);
}
