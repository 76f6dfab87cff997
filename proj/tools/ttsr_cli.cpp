// ttsr: train, infer, evaluate and inspect texture-transformer SR models.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "ttsr/diagnostics.hpp"
#include "ttsr/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace ttsr;

namespace {

constexpr double kTargetCsfi = 6.42e6;
constexpr double kTargetNoCsfi = 4.42e6;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    write_file_atomic(path, text);
}

Trainer<float> load_model(const std::string& ckpt) { return Trainer<float>::from_checkpoint(fs::path(ckpt)); }

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              std::optional<std::uint64_t> seed, const std::string& resume) {
    TrainConfig cfg = TrainConfig::load(config);
    if (seed) cfg.seed = *seed;
    const PairedDataset ds = PairedDataset::load(data);
    if (resume.empty()) {
        Trainer<float> tr(cfg);
        tr.fit(ds, out);
        std::printf("trained %llu steps, %llu epochs -> %s\n", static_cast<unsigned long long>(tr.step()),
                    static_cast<unsigned long long>(tr.epoch()), (fs::path(out) / "final.bin").c_str());
    } else {
        Trainer<float> tr = Trainer<float>::from_checkpoint(fs::path(resume));
        tr.set_schedule(cfg.total_epochs, cfg.max_steps);
        tr.fit(ds, out);
        std::printf("resumed to %llu steps, %llu epochs -> %s\n", static_cast<unsigned long long>(tr.step()),
                    static_cast<unsigned long long>(tr.epoch()), (fs::path(out) / "final.bin").c_str());
    }
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& lr, const std::string& ref, const std::string& out) {
    const auto tr = load_model(ckpt);
    write_png(out, super_resolve(tr.generator(), read_png(lr), read_png(ref)));
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& levels, const std::string& out) {
    const auto tags = split_list(levels);
    const auto tr = load_model(ckpt);
    const auto ts = RelevanceTestSet::load(data, tags);
    write_text(out, level_table_csv(relevance_level_eval(tr.generator(), ts, tags)));
    return 0;
}

int cmd_viz(const std::string& ckpt, std::uint64_t seed, const std::string& lr, const std::string& ref,
            const std::string& out) {
    const ImageU8 l = read_png(lr), r = read_png(ref);
    if (!ckpt.empty()) {
        write_png(out, transferred_image_viz(load_model(ckpt).generator(), l, r));
    } else {
        const Generator<float> g(GeneratorConfig{}, seed);
        write_png(out, transferred_image_viz(g, l, r));
    }
    return 0;
}

int cmd_gradcheck(const std::string& dtype, bool ops_only, double tol, std::uint64_t seed) {
    if (dtype != "f64")
        throw std::invalid_argument("gradcheck: only --dtype f64 is supported (f32 roundoff exceeds the tolerance)");
    GradCheckOptions opt;
    opt.seed = seed;
    const auto results = ops_only ? gradcheck_op_battery(opt) : gradcheck_battery(opt);
    std::vector<const GradCheckResult*> sorted;
    for (const auto& r : results) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->max_rel_err > b->max_rel_err; });
    std::size_t failed = 0;
    std::printf("%-40s %12s %12s %8s  %s\n", "check", "max_rel", "max_abs", "entries", "worst");
    for (const auto* r : sorted) {
        const bool ok = r->passed(tol);
        failed += !ok;
        std::printf("%-40s %12.3e %12.3e %8zu  %s%s\n", r->name.c_str(), r->max_rel_err, r->max_abs_err, r->checked,
                    r->worst.c_str(), ok ? "" : "  FAIL");
    }
    std::printf("%zu checks, %zu failed (tolerance %.1e)\n", results.size(), failed, tol);
    return failed ? 1 : 0;
}

int cmd_count_params(bool csfi, std::size_t channels, const std::string& blocks, bool assert_target) {
    GeneratorConfig cfg;
    cfg.csfi = csfi;
    cfg.base_channels = channels;
    const auto b = split_list(blocks);
    if (b.size() != 4) throw std::invalid_argument("count-params: --blocks needs 4 comma-separated counts");
    for (std::size_t i = 0; i < 4; ++i) cfg.residual_blocks[i] = std::stoul(b[i]);
    const Generator<float> g(cfg, 0);
    std::size_t lte = 0, body = 0;
    for (const auto& p : g.parameters()) (p->name.rfind("lte.", 0) == 0 ? lte : body) += p->value.numel();
    const std::size_t total = lte + body;
    std::printf("%-24s %12s\n", "component", "params");
    std::printf("%-24s %12zu\n", "texture extractor", lte);
    std::printf("%-24s %12zu\n", "generator body", body);
    std::printf("%-24s %12zu\n", "total", total);
    std::printf("%-24s %12.2fM\n", "total (millions)", static_cast<double>(total) / 1e6);
    if (assert_target) {
        const GeneratorConfig ref_cfg;
        if (channels != ref_cfg.base_channels || cfg.residual_blocks != ref_cfg.residual_blocks)
            throw std::invalid_argument("count-params: --assert applies only to 64 channels and blocks 16,16,8,4");
        const double target = csfi ? kTargetCsfi : kTargetNoCsfi;
        const double dev = (static_cast<double>(total) - target) / target;
        std::printf("target %.2fM, deviation %+.2f%%\n", target / 1e6, 100 * dev);
        if (std::abs(dev) > 0.05) {
            std::fprintf(stderr, "count-params: outside the 5%% band\n");
            return 1;
        }
    }
    return 0;
}

int cmd_bench(const std::string& sizes, std::size_t key, std::size_t channels, std::uint64_t seed,
              std::size_t repeats, const std::string& out) {
    std::string csv = bench_csv_header() + "\n";
    for (const auto& s : split_list(sizes)) {
        const std::size_t q = std::stoul(s);
        if (q == 0) throw std::invalid_argument("bench: grid sizes must be positive");
        csv += bench_csv_row(bench_relevance(q, key ? key : q, channels, seed, repeats)) + "\n";
    }
    write_text(out, csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Texture-transformer reference-based super-resolution"};
    app.require_subcommand(1);
    app.footer(
        "Formats: images are 8-bit RGB PNG; datasets are <dir>/input/<id>.png with <dir>/ref/<id>.png; eval refs are "
        "<dir>/ref/<id>_<level>.png; configs are key=value text; checkpoints are TTSRCKPT binaries (see README).");

    std::string config, data, out, ckpt, lr, ref, resume, levels = "GT,LR", dtype = "f64";
    std::string blocks = "16,16,8,4", sizes = "1,8,16,32";
    std::uint64_t seed_value = 0;
    std::size_t channels = 64, key = 0, bench_channels = 256, repeats = 3;
    double tol = 1e-5;
    bool csfi = false, assert_target = false, ops_only = false;

    auto* train = app.add_subcommand("train", "Train a generator (writes loss_log.csv and checkpoints under --out)");
    train->add_option("--config", config, "Training config (key=value lines)")->required()->check(CLI::ExistingFile);
    train->add_option("--data", data, "Dataset root with input/ and ref/")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", out, "Output directory")->required();
    auto* seed_opt = train->add_option("--seed", seed_value, "Overrides the config seed");
    train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    auto* infer = app.add_subcommand("infer", "Super-resolve one LR image against a reference");
    infer->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    infer->add_option("--lr", lr, "LR PNG")->required()->check(CLI::ExistingFile);
    infer->add_option("--ref", ref, "Reference PNG")->required()->check(CLI::ExistingFile);
    infer->add_option("--out", out, "SR PNG (4x extents)")->required();

    auto* eval = app.add_subcommand("eval", "Y-channel PSNR/SSIM per reference relevance level (CSV)");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data, "Root with input/<id>.png and ref/<id>_<level>.png")
        ->required()
        ->check(CLI::ExistingDirectory);
    eval->add_option("--levels", levels, "Comma-separated levels, most to least relevant; LR = LR-as-reference")
        ->capture_default_str();
    eval->add_option("--out", out, "CSV path (default stdout)");

    auto* viz = app.add_subcommand("viz-transfer", "Transfer original reference pixels with the hard attention map");
    viz->add_option("--ckpt", ckpt, "Checkpoint (default: untrained model from --seed)")->check(CLI::ExistingFile);
    viz->add_option("--seed", seed_value, "Initialization seed when no checkpoint is given");
    viz->add_option("--lr", lr, "LR PNG")->required()->check(CLI::ExistingFile);
    viz->add_option("--ref", ref, "Reference PNG")->required()->check(CLI::ExistingFile);
    viz->add_option("--out", out, "Output PNG (LR^ extents)")->required();

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient battery");
    gc->add_option("--dtype", dtype, "Element type (f64)")->capture_default_str();
    gc->add_option("--tol", tol, "Relative error tolerance")->capture_default_str();
    gc->add_option("--seed", seed_value, "Sampling seed");
    gc->add_flag("--ops-only", ops_only, "Skip the network-level checks");

    auto* cp = app.add_subcommand("count-params", "Generator parameter table");
    cp->add_flag("--csfi", csfi, "Enable cross-scale feature integration");
    cp->add_option("--channels", channels, "Base channels")->capture_default_str();
    cp->add_option("--blocks", blocks, "Residual blocks per stage")->capture_default_str();
    cp->add_flag("--assert", assert_target, "Fail unless within 5% of 6.42M (CSFI) / 4.42M (no CSFI)");

    auto* bench = app.add_subcommand("bench", "Naive vs batched relevance and transfer timings (CSV)");
    bench->add_option("--sizes", sizes, "Query grid extents, comma-separated")->capture_default_str();
    bench->add_option("--key", key, "Key grid extent (default: same as query)");
    bench->add_option("--channels", bench_channels, "Feature channels")->capture_default_str();
    bench->add_option("--seed", seed_value, "Data seed");
    bench->add_option("--repeats", repeats, "Timing repeats (best of)")->capture_default_str();
    bench->add_option("--out", out, "CSV path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train)
            return cmd_train(config, data, out, *seed_opt ? std::optional(seed_value) : std::nullopt, resume);
        if (*infer) return cmd_infer(ckpt, lr, ref, out);
        if (*eval) return cmd_eval(ckpt, data, levels, out);
        if (*viz) return cmd_viz(ckpt, seed_value, lr, ref, out);
        if (*gc) return cmd_gradcheck(dtype, ops_only, tol, seed_value ? seed_value : GradCheckOptions{}.seed);
        if (*cp) return cmd_count_params(csfi, channels, blocks, assert_target);
        if (*bench) return cmd_bench(sizes, key, bench_channels, seed_value, repeats, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
