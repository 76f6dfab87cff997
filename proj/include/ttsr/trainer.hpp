#pragma once

// Training loop: Adam, reconstruction warm-up, alternating critic/generator
// updates, augmentation, per-step CSV log and per-epoch checkpoints.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ttsr/checkpoint.hpp"
#include "ttsr/dataset.hpp"
#include "ttsr/losses.hpp"
#include "ttsr/sr_network.hpp"

namespace ttsr {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    AdamConfig adam;
    std::size_t warmup_epochs = 2;
    std::size_t total_epochs = 5;  // includes warm-up
    std::size_t batch_size = 4;
    std::size_t lr_patch = 16;
    std::size_t d_steps = 1;
    std::size_t max_steps = 0;  // 0 = no limit
    std::size_t checkpoint_every = 1;
    bool augment = true;
    LossWeights weights;
    std::uint64_t seed = 0;
    GeneratorConfig generator;
    int plug_level = 3;
    std::string plug_weights;  // empty = frozen random extractor

    std::size_t hr_patch() const { return 4 * lr_patch; }
    bool has_adversarial_phase() const { return total_epochs > warmup_epochs; }
    bool has_discriminator() const { return hr_patch() % 32 == 0; }

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
        if (!(adam.lr > 0)) fail("lr must be positive");
        if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) fail("betas must lie in [0,1)");
        if (!(adam.eps > 0)) fail("adam_eps must be positive");
        if (batch_size == 0) fail("batch_size must be positive");
        if (lr_patch == 0) fail("lr_patch must be positive");
        if (total_epochs == 0) fail("total_epochs must be positive");
        if (d_steps == 0) fail("d_steps must be positive");
        if (checkpoint_every == 0) fail("checkpoint_every must be positive");
        if (plug_level < 1 || plug_level > 3) fail("plug_level must be 1, 2 or 3");
        if (has_adversarial_phase() && !has_discriminator())
            fail("hr_patch " + std::to_string(hr_patch()) + " must be divisible by 32 for the discriminator");
        weights.validate();
        generator.validate();
    }

    std::string to_text() const {
        std::ostringstream o;
        char buf[64];
        auto num = [&](const char* k, double v) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            o << k << " = " << buf << "\n";
        };
        num("lr", adam.lr);
        num("beta1", adam.beta1);
        num("beta2", adam.beta2);
        num("adam_eps", adam.eps);
        o << "warmup_epochs = " << warmup_epochs << "\n";
        o << "total_epochs = " << total_epochs << "\n";
        o << "batch_size = " << batch_size << "\n";
        o << "lr_patch = " << lr_patch << "\n";
        o << "hr_patch = " << hr_patch() << "\n";
        o << "d_steps = " << d_steps << "\n";
        o << "max_steps = " << max_steps << "\n";
        o << "checkpoint_every = " << checkpoint_every << "\n";
        o << "augment = " << (augment ? "true" : "false") << "\n";
        num("lambda_rec", weights.rec);
        num("lambda_adv", weights.adv);
        num("lambda_per", weights.per);
        num("lambda_gp", weights.gp);
        o << "seed = " << seed << "\n";
        o << "base_channels = " << generator.base_channels << "\n";
        const auto& rb = generator.residual_blocks;
        o << "residual_blocks = " << rb[0] << "," << rb[1] << "," << rb[2] << "," << rb[3] << "\n";
        o << "csfi = " << (generator.csfi ? "true" : "false") << "\n";
        o << "transformer_1x = " << (generator.transformer_1x ? "true" : "false") << "\n";
        o << "transformer_2x = " << (generator.transformer_2x ? "true" : "false") << "\n";
        o << "transformer_4x = " << (generator.transformer_4x ? "true" : "false") << "\n";
        o << "lte_pool = " << (generator.lte_pool == PoolKind::Average ? "average" : "max") << "\n";
        o << "plug_level = " << plug_level << "\n";
        o << "plug_weights = " << plug_weights << "\n";
        return o.str();
    }

    /// Flat `key = value` lines; '#' starts a comment. Unknown keys are errors.
    static TrainConfig parse(const std::string& text) {
        TrainConfig c;
        std::optional<std::size_t> hr;
        std::istringstream in(text);
        std::string line;
        for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            const std::string where = "config line " + std::to_string(lineno);
            if (eq == std::string::npos) throw std::invalid_argument(where + ": expected key = value");
            const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
            auto as_double = [&] {
                double v;
                const auto r = std::from_chars(val.data(), val.data() + val.size(), v);
                if (r.ec != std::errc() || r.ptr != val.data() + val.size())
                    throw std::invalid_argument(where + ": '" + key + "' expects a number, got '" + val + "'");
                return v;
            };
            auto as_uint = [&] {
                std::uint64_t v;
                const auto r = std::from_chars(val.data(), val.data() + val.size(), v);
                if (r.ec != std::errc() || r.ptr != val.data() + val.size())
                    throw std::invalid_argument(where + ": '" + key + "' expects a non-negative integer, got '" +
                                                val + "'");
                return v;
            };
            auto as_bool = [&] {
                if (val == "true" || val == "1" || val == "on") return true;
                if (val == "false" || val == "0" || val == "off") return false;
                throw std::invalid_argument(where + ": '" + key + "' expects true/false, got '" + val + "'");
            };
            if (key == "lr") c.adam.lr = as_double();
            else if (key == "beta1") c.adam.beta1 = as_double();
            else if (key == "beta2") c.adam.beta2 = as_double();
            else if (key == "adam_eps") c.adam.eps = as_double();
            else if (key == "warmup_epochs") c.warmup_epochs = as_uint();
            else if (key == "total_epochs") c.total_epochs = as_uint();
            else if (key == "batch_size") c.batch_size = as_uint();
            else if (key == "lr_patch") c.lr_patch = as_uint();
            else if (key == "hr_patch") hr = as_uint();
            else if (key == "d_steps") c.d_steps = as_uint();
            else if (key == "max_steps") c.max_steps = as_uint();
            else if (key == "checkpoint_every") c.checkpoint_every = as_uint();
            else if (key == "augment") c.augment = as_bool();
            else if (key == "lambda_rec") c.weights.rec = as_double();
            else if (key == "lambda_adv") c.weights.adv = as_double();
            else if (key == "lambda_per") c.weights.per = as_double();
            else if (key == "lambda_gp") c.weights.gp = as_double();
            else if (key == "seed") c.seed = as_uint();
            else if (key == "base_channels") c.generator.base_channels = as_uint();
            else if (key == "residual_blocks") {
                std::istringstream parts(val);
                std::string tok;
                std::size_t i = 0;
                while (std::getline(parts, tok, ',')) {
                    if (i == 4) throw std::invalid_argument(where + ": residual_blocks takes 4 counts");
                    tok = trim(tok);
                    std::size_t v;
                    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
                        throw std::invalid_argument(where + ": bad residual block count '" + tok + "'");
                    c.generator.residual_blocks[i++] = v;
                }
                if (i != 4) throw std::invalid_argument(where + ": residual_blocks takes 4 counts");
            } else if (key == "csfi") c.generator.csfi = as_bool();
            else if (key == "transformer_1x") c.generator.transformer_1x = as_bool();
            else if (key == "transformer_2x") c.generator.transformer_2x = as_bool();
            else if (key == "transformer_4x") c.generator.transformer_4x = as_bool();
            else if (key == "lte_pool") {
                if (val == "average") c.generator.lte_pool = PoolKind::Average;
                else if (val == "max") c.generator.lte_pool = PoolKind::Max;
                else throw std::invalid_argument(where + ": lte_pool is 'average' or 'max'");
            } else if (key == "plug_level") c.plug_level = static_cast<int>(as_uint());
            else if (key == "plug_weights") c.plug_weights = val;
            else throw std::invalid_argument(where + ": unknown key '" + key + "'");
        }
        if (hr && *hr != c.hr_patch())
            throw std::invalid_argument("config: hr_patch must be 4 x lr_patch (" + std::to_string(c.hr_patch()) +
                                        "), got " + std::to_string(*hr));
        c.validate();
        return c;
    }

    static TrainConfig load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config '" + path.string() + "'");
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }
};

/// Small, reconstruction-only setup used for the overfit check and the
/// toy-scale demos: narrow generator, one pair per step, no augmentation.
inline TrainConfig toy_train_config() {
    TrainConfig c;
    c.adam.lr = 5e-4;
    c.batch_size = 1;
    c.lr_patch = 16;
    c.augment = false;
    c.warmup_epochs = 63;
    c.total_epochs = 63;
    c.max_steps = 500;
    c.checkpoint_every = 16;
    c.seed = 7;
    c.generator.base_channels = 16;
    c.generator.residual_blocks = {2, 2, 2, 2};
    return c;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments;  // first, second

    OptimizerRecord to_record(const std::string& name) const {
        OptimizerRecord r{name, step, {}, {}};
        for (const auto& [k, mv] : moments) {
            r.first.push_back(TensorRecord::from(k, mv.first));
            r.second.push_back(TensorRecord::from(k, mv.second));
        }
        return r;
    }

    static AdamState from_record(const OptimizerRecord& r, const ParameterList<T>& ps) {
        AdamState s;
        s.step = r.step;
        for (std::size_t i = 0; i < r.first.size(); ++i) {
            const auto& name = r.first[i].name;
            bool known = false;
            for (const auto& p : ps)
                if (p->name == name) {
                    known = true;
                    if (r.first[i].shape != p->value.shape() || r.second[i].shape != p->value.shape())
                        throw FormatError("optimizer '" + r.name + "' moment shape mismatch for '" + name + "'");
                }
            if (!known) throw FormatError("optimizer '" + r.name + "' has moments for unknown parameter '" + name + "'");
            s.moments.emplace(name, std::make_pair(r.first[i].to<T>(), r.second[i].to<T>()));
        }
        return s;
    }
};

/// Bias-corrected Adam on every parameter of `ps` from its accumulated grad.
/// Non-finite gradients abort before any parameter is touched.
template <typename T>
void adam_step(ParameterList<T>& ps, AdamState<T>& st, const AdamConfig& c) {
    for (const auto& p : ps)
        if (!p->grad.all_finite()) throw NumericError("adam: non-finite gradient in parameter '" + p->name + "'");
    ++st.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    for (auto& p : ps) {
        auto [it, fresh] = st.moments.try_emplace(p->name, Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape()));
        auto& [m, v] = it->second;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const T g = p->grad[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            const double mh = m[i] / bc1, vh = v[i] / bc2;
            p->value[i] -= static_cast<T>(c.lr * mh / (std::sqrt(vh) + c.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentDraw {
    bool hflip = false, vflip = false;
    int quarter_turns = 0;

    static AugmentDraw random(Rng& rng) {
        AugmentDraw d;
        d.hflip = rng.below(2) == 1;
        d.vflip = rng.below(2) == 1;
        d.quarter_turns = static_cast<int>(rng.below(4));
        return d;
    }
    bool identity() const { return !hflip && !vflip && quarter_turns == 0; }
};

inline ImageU8 apply_augment(const ImageU8& img, const AugmentDraw& d) {
    if (img.width != img.height)
        throw GeometryError("augment: patch must be square, got " + std::to_string(img.width) + "x" +
                            std::to_string(img.height));
    ImageU8 out = img;
    if (d.hflip) out = flip_horizontal(out);
    if (d.vflip) out = flip_vertical(out);
    return rotate90(out, d.quarter_turns);
}

/// Independent flips and rotation for the HR patch and for the reference.
inline std::pair<ImageU8, ImageU8> augment(const ImageU8& hr, const ImageU8& ref, Rng& rng) {
    const AugmentDraw dh = AugmentDraw::random(rng), dr = AugmentDraw::random(rng);
    return {apply_augment(hr, dh), apply_augment(ref, dr)};
}

// ---------------------------------------------------------------------------
// Batches

template <typename T>
struct TrainBatch {
    SrInputs<T> inputs;
    Tensor<T> hr;
};

inline ImageU8 random_crop(const ImageU8& img, std::size_t extent, Rng& rng) {
    if (img.width < extent || img.height < extent)
        throw GeometryError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                            " smaller than the " + std::to_string(extent) + " training patch");
    const std::size_t x = img.width == extent ? 0 : rng.below(img.width - extent + 1);
    const std::size_t y = img.height == extent ? 0 : rng.below(img.height - extent + 1);
    return crop(img, x, y, extent, extent);
}

template <typename T>
TrainBatch<T> make_batch(const PairedDataset& ds, const std::vector<std::size_t>& items, const TrainConfig& cfg,
                         Rng& data_rng, Rng& aug_rng) {
    std::vector<ImageU8> hrs, lrs, refs;
    for (std::size_t i : items) {
        ImageU8 hr = random_crop(ds.hr[i], cfg.hr_patch(), data_rng);
        ImageU8 ref = random_crop(ds.ref[i], cfg.hr_patch(), data_rng);
        if (cfg.augment) std::tie(hr, ref) = augment(hr, ref, aug_rng);
        lrs.push_back(make_lr(hr));
        hrs.push_back(std::move(hr));
        refs.push_back(std::move(ref));
    }
    auto ptrs = [](const std::vector<ImageU8>& v) {
        std::vector<const ImageU8*> p;
        for (const auto& x : v) p.push_back(&x);
        return p;
    };
    TrainBatch<T> b;
    b.inputs = make_sr_inputs(to_tensor<T>(ptrs(lrs)), to_tensor<T>(ptrs(refs)));
    b.hr = to_tensor<T>(ptrs(hrs));
    return b;
}

// ---------------------------------------------------------------------------
// Trainer

struct LossRow {
    std::uint64_t step = 0, epoch = 0;
    double l_rec = 0, l_adv = 0, l_per = 0, l_d = 0, gp = 0;
};

inline constexpr const char* kLossLogHeader = "step,epoch,l_rec,l_adv,l_per,l_d,gp";

inline std::string format_row(const LossRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%llu,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(r.step),
                  static_cast<unsigned long long>(r.epoch), r.l_rec, r.l_adv, r.l_per, r.l_d, r.gp);
    return buf;
}

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, std::uint64_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_epoch%04llu.bin", static_cast<unsigned long long>(epoch));
    return dir / buf;
}

template <typename T = float>
class Trainer {
  public:
    explicit Trainer(TrainConfig cfg)
        : cfg_(std::move(cfg)),
          generator_((cfg_.validate(), cfg_.generator), cfg_.seed),
          plug_(make_plug(cfg_)),
          shuffle_rng_(make_stream(cfg_.seed, Stream::Shuffle)),
          augment_rng_(make_stream(cfg_.seed, Stream::Augment)),
          penalty_rng_(make_stream(cfg_.seed, Stream::Penalty)),
          data_rng_(make_stream(cfg_.seed, Stream::Data)) {
        if (cfg_.has_discriminator()) discriminator_.emplace(cfg_.hr_patch(), cfg_.seed);
    }

    /// Rebuilds the full training state (config, weights, optimizer moments,
    /// RNG streams, counters) from a checkpoint.
    static Trainer from_checkpoint(const Checkpoint& c) {
        Trainer t(TrainConfig::parse(c.config));
        t.restore(c);
        return t;
    }
    static Trainer from_checkpoint(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

    const TrainConfig& config() const { return cfg_; }
    /// Training-loop settings that do not change the model (epochs, limits).
    void set_schedule(std::size_t total_epochs, std::size_t max_steps) {
        cfg_.total_epochs = total_epochs;
        cfg_.max_steps = max_steps;
        cfg_.validate();
    }
    Generator<T>& generator() { return generator_; }
    const Generator<T>& generator() const { return generator_; }
    Discriminator<T>* discriminator() { return discriminator_ ? &*discriminator_ : nullptr; }
    std::uint64_t step() const { return step_; }
    std::uint64_t epoch() const { return epoch_; }

    Checkpoint checkpoint() const {
        Checkpoint c;
        c.config = cfg_.to_text();
        c.step = step_;
        c.epoch = epoch_;
        store_parameters(c, generator_.parameters());
        if (discriminator_) store_parameters(c, discriminator_->parameters());
        c.optimizers.push_back(adam_g_.to_record("generator"));
        if (discriminator_) c.optimizers.push_back(adam_d_.to_record("discriminator"));
        c.rngs = {{"shuffle", shuffle_rng_.state()},
                  {"augment", augment_rng_.state()},
                  {"penalty", penalty_rng_.state()},
                  {"data", data_rng_.state()}};
        return c;
    }

    void restore(const Checkpoint& c) {
        std::vector<ParameterList<T>*> lists{&generator_.parameters()};
        if (discriminator_) lists.push_back(&discriminator_->parameters());
        restore_parameters(c, lists);
        step_ = c.step;
        epoch_ = c.epoch;
        adam_g_ = {};
        adam_d_ = {};
        if (const auto* o = c.optimizer("generator")) adam_g_ = AdamState<T>::from_record(*o, generator_.parameters());
        if (const auto* o = c.optimizer("discriminator")) {
            if (!discriminator_) throw FormatError("checkpoint has discriminator moments but no discriminator");
            adam_d_ = AdamState<T>::from_record(*o, discriminator_->parameters());
        }
        auto rng = [&](const char* name, Rng& r) {
            const auto* rec = c.rng(name);
            if (!rec) throw FormatError(std::string("checkpoint is missing RNG stream '") + name + "'");
            r.set_state(rec->state);
        };
        rng("shuffle", shuffle_rng_);
        rng("augment", augment_rng_);
        rng("penalty", penalty_rng_);
        rng("data", data_rng_);
    }

    /// One optimization step on a batch. Warm-up steps use the
    /// reconstruction loss only and never touch the critic.
    LossRow train_step(const TrainBatch<T>& batch, bool warmup) {
        LossRow row;
        row.step = step_;
        row.epoch = epoch_;
        Tape<T> tape;
        const auto out = generator_.forward(tape, batch.inputs);
        const Var<T> hr = tape.constant(batch.hr);
        const Var<T> rec = rec_loss(out.sr, hr);
        row.l_rec = rec.value()[0];
        Var<T> total = scale(rec, static_cast<T>(cfg_.weights.rec));
        if (!warmup) {
            if (!discriminator_) throw std::logic_error("adversarial step without a discriminator");
            auto& d = *discriminator_;
            const Critic<T> critic = [&d](const Var<T>& x) { return d(x); };
            const Tensor<T> fake = out.sr.value();
            for (std::size_t k = 0; k < cfg_.d_steps; ++k) {
                std::vector<T> eps(fake.dim(0));
                for (auto& e : eps) e = static_cast<T>(penalty_rng_.uniform());
                d.parameters().zero_grad();
                const auto v = d_loss_backward<T>(critic, batch.hr, fake, static_cast<T>(cfg_.weights.gp), eps);
                row.l_d = v.total;
                row.gp = v.penalty;
                check_finite(row.l_d, "l_d");
                adam_step(d.parameters(), adam_d_, cfg_.adam);
            }
            d.parameters().freeze_on(tape);
            std::optional<Var<T>> adv, per;
            if (cfg_.weights.adv > 0) {
                adv = g_adv_loss(critic, out.sr);
                row.l_adv = adv->value()[0];
            }
            if (cfg_.weights.per > 0) {
                Var<T> p = perceptual_loss(out.sr, hr, &plug_);
                if (out.texture3) p = add(p, transferal_perceptual_loss(out.sr, *out.texture3, generator_.lte()));
                per = p;
                row.l_per = p.value()[0];
            }
            total = overall_loss(rec, adv, per, cfg_.weights);
        }
        check_finite(total.value()[0], "total");
        generator_.parameters().zero_grad();
        tape.backward(total);
        adam_step(generator_.parameters(), adam_g_, cfg_.adam);
        ++step_;
        return row;
    }

    /// Trains until `total_epochs` (or `max_steps`) on `ds`, writing
    /// loss_log.csv and per-epoch checkpoints into `out_dir`. A trainer
    /// restored from a checkpoint continues from its epoch; an existing log
    /// is truncated to the restored step first.
    void fit(const PairedDataset& ds, const std::filesystem::path& out_dir) {
        if (ds.empty()) throw std::invalid_argument("train: empty dataset");
        std::filesystem::create_directories(out_dir);
        LossLog log(out_dir / "loss_log.csv", step_);
        std::vector<std::size_t> order(ds.size());
        try {
            while (epoch_ < cfg_.total_epochs && !step_limit_reached()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng_.below(i)]);
                const bool warm = epoch_ < cfg_.warmup_epochs;
                for (std::size_t b = 0; b < order.size() && !step_limit_reached(); b += cfg_.batch_size) {
                    const std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                                             std::min(order.size(), b + cfg_.batch_size)));
                    const auto batch = make_batch<T>(ds, items, cfg_, data_rng_, augment_rng_);
                    log.append(train_step(batch, warm));
                }
                if (step_limit_reached()) break;
                ++epoch_;
                if (epoch_ % cfg_.checkpoint_every == 0 || epoch_ == cfg_.total_epochs)
                    save_checkpoint(epoch_checkpoint_path(out_dir, epoch_), checkpoint());
            }
        } catch (const NumericError&) {
            save_checkpoint(out_dir / "nan_dump.bin", checkpoint());
            throw;
        }
        save_checkpoint(out_dir / "final.bin", checkpoint());
    }

    /// Mean L1 (network range) of the current generator over whole images.
    double evaluate_l1(const PairedDataset& ds) const {
        double total = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const ImageU8 lr = make_lr(ds.hr[i]);
            const auto in = make_sr_inputs(to_tensor<T>(lr), to_tensor<T>(ds.ref[i]));
            Tape<T> tape;
            tape.freeze_all(true);
            const auto out = generator_.forward(tape, in);
            total += l1_distance(out.sr, tape.constant(to_tensor<T>(ds.hr[i]))).value()[0];
        }
        return total / static_cast<double>(ds.size());
    }

  private:
    class LossLog {
      public:
        LossLog(const std::filesystem::path& path, std::uint64_t keep_below) {
            std::vector<std::string> kept;
            if (keep_below > 0 && std::filesystem::exists(path)) {
                std::ifstream in(path);
                std::string line;
                std::getline(in, line);
                while (std::getline(in, line))
                    if (!line.empty() && std::stoull(line.substr(0, line.find(','))) < keep_below) kept.push_back(line);
            }
            f_.open(path, std::ios::trunc);
            if (!f_) throw std::runtime_error("cannot write loss log '" + path.string() + "'");
            f_ << kLossLogHeader << "\n";
            for (const auto& l : kept) f_ << l << "\n";
            f_.flush();
        }
        void append(const LossRow& r) {
            f_ << format_row(r) << "\n";
            f_.flush();
        }

      private:
        std::ofstream f_;
    };

    static FeatureExtractorPlug<T> make_plug(const TrainConfig& cfg) {
        if (!cfg.plug_weights.empty()) return FeatureExtractorPlug<T>::from_file(cfg.plug_weights, cfg.plug_level);
        return FeatureExtractorPlug<T>::random_lte(cfg.seed ^ 0x706c7567ULL, cfg.plug_level);
    }

    bool step_limit_reached() const { return cfg_.max_steps > 0 && step_ >= cfg_.max_steps; }

    void check_finite(double v, const char* what) const {
        if (!std::isfinite(v))
            throw NumericError("non-finite loss '" + std::string(what) + "' at step " + std::to_string(step_));
    }

    TrainConfig cfg_;
    Generator<T> generator_;
    std::optional<Discriminator<T>> discriminator_;
    FeatureExtractorPlug<T> plug_;
    AdamState<T> adam_g_, adam_d_;
    Rng shuffle_rng_, augment_rng_, penalty_rng_, data_rng_;
    std::uint64_t step_ = 0, epoch_ = 0;
};

/// Super-resolves one LR image against a reference with frozen weights.
template <typename T>
ImageU8 super_resolve(const Generator<T>& g, const ImageU8& lr, const ImageU8& ref) {
    if (ref.width % 4 != 0 || ref.height % 4 != 0)
        throw GeometryError("reference extents " + std::to_string(ref.width) + "x" + std::to_string(ref.height) +
                            " not divisible by 4");
    const auto in = make_sr_inputs(to_tensor<T>(lr), to_tensor<T>(ref));
    Tape<T> tape;
    tape.freeze_all(true);
    return from_tensor(g.forward(tape, in).sr.value());
}

}  // namespace ttsr
