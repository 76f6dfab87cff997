// Writes a synthetic texture dataset, a matching eval set and a toy config:
//   <out>/train/{input,ref}/NNN.png
//   <out>/eval/input/NNN.png, <out>/eval/ref/NNN_{GT,shifted,unrelated}.png
//   <out>/toy.cfg

#include <CLI11.hpp>

#include <cstdio>

#include "ttsr/synthetic.hpp"
#include "ttsr/trainer.hpp"

using namespace ttsr;

int main(int argc, char** argv) {
    CLI::App app{"Generate toy texture data for ttsr"};
    std::string out;
    ToyDatasetOptions opt;
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--pairs", opt.pairs, "Number of pairs")->capture_default_str();
    app.add_option("--extent", opt.extent, "HR extent (multiple of 4)")->capture_default_str();
    app.add_option("--seed", opt.seed, "Texture seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        const auto root = std::filesystem::path(out);
        const PairedDataset ds = make_toy_dataset(opt);
        ds.save(root / "train");

        std::filesystem::create_directories(root / "eval" / "input");
        std::filesystem::create_directories(root / "eval" / "ref");
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const auto& id = ds.ids[i];
            write_png(root / "eval" / "input" / (id + ".png"), ds.hr[i]);
            write_png(root / "eval" / "ref" / (id + "_GT.png"), ds.hr[i]);
            write_png(root / "eval" / "ref" / (id + "_shifted.png"), ds.ref[i]);
            write_png(root / "eval" / "ref" / (id + "_unrelated.png"), make_unrelated_texture(opt.extent, opt.seed + i));
        }

        TrainConfig cfg = toy_train_config();
        cfg.lr_patch = opt.extent / 4;
        write_file_atomic(root / "toy.cfg", cfg.to_text());
        std::printf("wrote %zu pairs to %s\n", ds.size(), root.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
