#pragma once

// Evaluation against references of graded relevance, hard-attention
// visualization on the original reference image, and relevance kernel
// timing.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ttsr/metrics.hpp"
#include "ttsr/trainer.hpp"

namespace ttsr {

/// Test items with several reference variants each. The tag "LR" denotes the
/// LR-as-reference case and is synthesized as LR^ when no file exists.
struct RelevanceTestSet {
    std::vector<std::string> ids;
    std::vector<ImageU8> hr;
    std::vector<std::map<std::string, ImageU8>> refs;

    std::size_t size() const { return ids.size(); }

    /// <root>/input/NNN.png and <root>/ref/NNN_<tag>.png for every tag.
    static RelevanceTestSet load(const std::filesystem::path& root, const std::vector<std::string>& tags) {
        namespace fs = std::filesystem;
        if (tags.empty()) throw std::invalid_argument("eval: no reference levels given");
        const fs::path in_dir = root / "input";
        if (!fs::is_directory(in_dir)) throw std::runtime_error("eval: missing directory '" + in_dir.string() + "'");
        std::vector<std::string> stems;
        for (const auto& e : fs::directory_iterator(in_dir))
            if (e.is_regular_file() && e.path().extension() == ".png") stems.push_back(e.path().stem().string());
        std::sort(stems.begin(), stems.end());
        if (stems.empty()) throw std::runtime_error("eval: no PNG images under '" + in_dir.string() + "'");
        RelevanceTestSet ts;
        for (const auto& id : stems) {
            ImageU8 hr = read_png(in_dir / (id + ".png"));
            std::map<std::string, ImageU8> variants;
            for (const auto& tag : tags) {
                const fs::path p = root / "ref" / (id + "_" + tag + ".png");
                if (fs::exists(p)) variants.emplace(tag, read_png(p));
                else if (tag == "LR") variants.emplace(tag, upscale4(make_lr(hr)));
                else throw std::runtime_error("eval: item '" + id + "' is missing reference variant '" + tag + "' (" +
                                              p.string() + ")");
            }
            ts.ids.push_back(id);
            ts.hr.push_back(std::move(hr));
            ts.refs.push_back(std::move(variants));
        }
        return ts;
    }
};

struct LevelScore {
    std::string level;
    double psnr = 0, ssim = 0;
    std::size_t count = 0;
};

/// Mean Y-channel PSNR/SSIM per reference level, in the order given.
template <typename T>
std::vector<LevelScore> relevance_level_eval(const Generator<T>& g, const RelevanceTestSet& ts,
                                             const std::vector<std::string>& levels) {
    std::vector<LevelScore> rows;
    for (const auto& level : levels) {
        LevelScore s{level};
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const auto it = ts.refs[i].find(level);
            if (it == ts.refs[i].end())
                throw std::runtime_error("eval: item '" + ts.ids[i] + "' has no reference variant '" + level + "'");
            const ImageU8 sr = super_resolve(g, make_lr(ts.hr[i]), it->second);
            s.psnr += psnr_y(sr, ts.hr[i]);
            s.ssim += ssim_y(sr, ts.hr[i]);
            ++s.count;
        }
        if (s.count) {
            s.psnr /= static_cast<double>(s.count);
            s.ssim /= static_cast<double>(s.count);
        }
        rows.push_back(s);
    }
    return rows;
}

inline std::string level_table_csv(const std::vector<LevelScore>& rows) {
    std::string out = "level,psnr,ssim,count\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%zu\n", r.level.c_str(), r.psnr, r.ssim, r.count);
        out += buf;
    }
    return out;
}

/// Hard attention computed at level 3 between LR^ and Ref_v^, then applied
/// to patches of the original reference pixels (12x12 windows, stride 4)
/// with overlap averaging. Returns [1,3,4h,4w] in network range.
template <typename T>
Tensor<double> transferred_image(const Generator<T>& g, const ImageU8& lr, const ImageU8& ref) {
    if (ref.width % 4 != 0 || ref.height % 4 != 0)
        throw GeometryError("viz-transfer: reference extents not divisible by 4");
    const auto in = make_sr_inputs(to_tensor<T>(lr), to_tensor<T>(ref));
    Tape<T> tape;
    tape.freeze_all(true);
    const auto& lte = g.lte();
    const auto rel = relevance_embedding(lte.level3(tape.constant(in.lr_up)),
                                         lte.level3(tape.constant(in.ref_down_up)), level_window(3));
    const auto maps = attention_maps(rel);
    const Window win = level_window(1);
    const Tensor<double> src = to_tensor<double>(ref);
    if (win.positions(src.dim(2), "viz-transfer") != maps.key_h || win.positions(src.dim(3), "viz-transfer") != maps.key_w)
        throw GeometryError("viz-transfer: reference patch grid does not match the key grid");
    const auto cols = kernels::gather_columns(kernels::unfold(src, win), maps.hard);
    return kernels::fold(cols, maps.grid_h * 4, maps.grid_w * 4, win, true);
}

template <typename T>
ImageU8 transferred_image_viz(const Generator<T>& g, const ImageU8& lr, const ImageU8& ref) {
    return from_tensor(transferred_image(g, lr, ref));
}

// ---------------------------------------------------------------------------
// Relevance benchmark

/// Direct per-pair evaluation of normalized patch inner products, reading
/// patches straight from the feature maps.
template <typename T>
Tensor<T> naive_relevance(const Tensor<T>& q, const Tensor<T>& k, const Window& win) {
    const std::size_t N = q.dim(0), C = q.dim(1);
    const std::size_t qh = win.positions(q.dim(2), "naive"), qw = win.positions(q.dim(3), "naive");
    const std::size_t kh = win.positions(k.dim(2), "naive"), kw = win.positions(k.dim(3), "naive");
    auto px = [&](const Tensor<T>& t, std::size_t n, std::size_t c, std::size_t py, std::size_t pxx, std::size_t i,
                  std::size_t j) -> T {
        const long y = static_cast<long>(py * win.stride + i) - static_cast<long>(win.pad);
        const long x = static_cast<long>(pxx * win.stride + j) - static_cast<long>(win.pad);
        if (y < 0 || x < 0 || y >= static_cast<long>(t.dim(2)) || x >= static_cast<long>(t.dim(3))) return T(0);
        return t.at(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    Tensor<T> r({N, qh * qw, kh * kw});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t a = 0; a < qh * qw; ++a)
            for (std::size_t b = 0; b < kh * kw; ++b) {
                T dot = 0, nq = 0, nk = 0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < win.k; ++i)
                        for (std::size_t j = 0; j < win.k; ++j) {
                            const T u = px(q, n, c, a / qw, a % qw, i, j), v = px(k, n, c, b / kw, b % kw, i, j);
                            dot += u * v;
                            nq += u * u;
                            nk += v * v;
                        }
                const T den = std::sqrt(nq) * std::sqrt(nk);
                r.at(n, a, b) = den > T(0) ? dot / den : T(0);
            }
    return r;
}

template <typename T>
Tensor<T> batched_relevance(const Tensor<T>& q, const Tensor<T>& k, const Window& win) {
    return kernels::bmm_tn(kernels::normalize_columns(kernels::unfold(q, win)),
                           kernels::normalize_columns(kernels::unfold(k, win)));
}

struct BenchRow {
    std::size_t query = 0, key = 0, channels = 0;
    std::size_t lq = 0, lk = 0;
    double naive_s = 0, batched_s = 0, transfer_s = 0;
    double comparisons() const { return static_cast<double>(lq) * static_cast<double>(lk); }
    double naive_throughput() const { return naive_s > 0 ? comparisons() / naive_s : 0; }
    double batched_throughput() const { return batched_s > 0 ? comparisons() / batched_s : 0; }
    double speedup() const { return batched_s > 0 ? naive_s / batched_s : 0; }
};

namespace detail {
template <typename F>
double best_time(F&& f, std::size_t repeats) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}
}  // namespace detail

/// Times naive and batched relevance plus the level-3 transfer for square
/// query and key grids of the given extents.
inline BenchRow bench_relevance(std::size_t query, std::size_t key, std::size_t channels, std::uint64_t seed,
                                std::size_t repeats = 3) {
    Rng rng(seed, 90);
    auto rnd = [&](std::size_t e) {
        Tensor<float> t({1, channels, e, e});
        for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
        return t;
    };
    const Tensor<float> q = rnd(query), k = rnd(key), v = rnd(key);
    const Window win = level_window(3);
    BenchRow row{query, key, channels, query * query, key * key};
    Tensor<float> rn, rb;
    row.naive_s = detail::best_time([&] { rn = naive_relevance(q, k, win); }, 1);
    row.batched_s = detail::best_time([&] { rb = batched_relevance(q, k, win); }, repeats);
    if (max_abs_diff(rn, rb) > 1e-4f) throw NumericError("bench: naive and batched relevance disagree");
    Tensor<float> value;
    IndexMap idx;
    kernels::row_argmax(rb, value, idx);
    row.transfer_s = detail::best_time(
        [&] { kernels::fold(kernels::gather_columns(kernels::unfold(v, win), idx), query, query, win, true); },
        repeats);
    return row;
}

inline std::string bench_csv_header() {
    return "query_grid,key_grid,channels,comparisons,naive_s,batched_s,transfer_s,naive_cmp_per_s,batched_cmp_per_s,"
           "speedup";
}

inline std::string bench_csv_row(const BenchRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zux%zu,%zux%zu,%zu,%.0f,%.6g,%.6g,%.6g,%.6g,%.6g,%.3f", r.query, r.query, r.key,
                  r.key, r.channels, r.comparisons(), r.naive_s, r.batched_s, r.transfer_s, r.naive_throughput(),
                  r.batched_throughput(), r.speedup());
    return buf;
}

}  // namespace ttsr
