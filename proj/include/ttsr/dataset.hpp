#pragma once

// Paired dataset on disk: <root>/input/NNN.png (HR) and <root>/ref/NNN.png.

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ttsr/image.hpp"

namespace ttsr {

struct PairedDataset {
    std::vector<std::string> ids;
    std::vector<ImageU8> hr;
    std::vector<ImageU8> ref;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }

    void add(std::string id, ImageU8 h, ImageU8 r) {
        check_extents(id, h);
        check_extents(id, r);
        ids.push_back(std::move(id));
        hr.push_back(std::move(h));
        ref.push_back(std::move(r));
    }

    static PairedDataset load(const std::filesystem::path& root) {
        namespace fs = std::filesystem;
        const fs::path in_dir = root / "input", ref_dir = root / "ref";
        if (!fs::is_directory(in_dir)) throw std::runtime_error("dataset: missing directory '" + in_dir.string() + "'");
        if (!fs::is_directory(ref_dir))
            throw std::runtime_error("dataset: missing directory '" + ref_dir.string() + "'");
        std::vector<std::string> stems;
        for (const auto& e : fs::directory_iterator(in_dir))
            if (e.is_regular_file() && e.path().extension() == ".png") stems.push_back(e.path().stem().string());
        std::sort(stems.begin(), stems.end());
        PairedDataset ds;
        for (const auto& id : stems) {
            const fs::path rp = ref_dir / (id + ".png");
            if (!fs::exists(rp)) throw std::runtime_error("dataset: input '" + id + "' has no reference " + rp.string());
            ds.add(id, read_png(in_dir / (id + ".png")), read_png(rp));
        }
        if (ds.empty()) throw std::runtime_error("dataset: no PNG images under '" + in_dir.string() + "'");
        return ds;
    }

    void save(const std::filesystem::path& root) const {
        std::filesystem::create_directories(root / "input");
        std::filesystem::create_directories(root / "ref");
        for (std::size_t i = 0; i < size(); ++i) {
            write_png(root / "input" / (ids[i] + ".png"), hr[i]);
            write_png(root / "ref" / (ids[i] + ".png"), ref[i]);
        }
    }

  private:
    static void check_extents(const std::string& id, const ImageU8& img) {
        if (img.width == 0 || img.height == 0 || img.width % 4 != 0 || img.height % 4 != 0)
            throw GeometryError("dataset: image '" + id + "' extents " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " not divisible by 4");
    }
};

/// Zero-padded numeric id, e.g. 7 -> "007".
inline std::string pair_id(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace ttsr
