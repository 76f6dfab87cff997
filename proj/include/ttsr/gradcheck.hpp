#pragma once

// Central finite-difference checks of tape gradients, and the battery run by
// `ttsr gradcheck` and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ttsr/losses.hpp"
#include "ttsr/sr_network.hpp"

namespace ttsr {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t checked = 0;
    std::string worst;  // location of the largest relative error

    bool passed(double tol) const { return checked > 0 && max_rel_err < tol; }
};

struct GradCheckOptions {
    /// Candidate steps. Per coordinate the step with the smallest one-sided
    /// slope disagreement |D+ - D-| is used: large steps may straddle a ReLU
    /// or argmax kink, small ones amplify roundoff. The choice never looks
    /// at the analytic gradient.
    std::vector<double> steps{1e-4, 1e-5, 1e-6};
    /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
    double floor = 1e-4;
    /// Entries probed per parameter tensor (0 = all).
    std::size_t samples_per_tensor = 3;
    /// Input entries probed per input tensor (0 = all).
    std::size_t samples_per_input = 0;
    std::uint64_t seed = 11;
};

namespace detail {

inline void record_error(GradCheckResult& r, double analytic, double numeric, double floor, const std::string& where) {
    const double abs_err = std::abs(analytic - numeric);
    const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), floor});
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    if (rel >= r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst = where;
    }
    ++r.checked;
}

/// Central difference of f along one coordinate with the step chosen by
/// the kink indicator.
template <typename F>
double central_difference(F&& f_at, double x0, const std::vector<double>& steps) {
    if (steps.empty()) throw std::invalid_argument("gradcheck: no step sizes");
    const double f0 = steps.size() > 1 ? f_at(x0) : 0.0;
    double best = 0.0, best_kink = std::numeric_limits<double>::infinity();
    for (double h : steps) {
        const double fp = f_at(x0 + h), fm = f_at(x0 - h);
        const double kink = steps.size() > 1 ? std::abs(fp - 2 * f0 + fm) / h : 0.0;
        if (kink < best_kink) {
            best_kink = kink;
            best = (fp - fm) / (2 * h);
        }
    }
    f_at(x0);
    return best;
}

inline std::vector<std::size_t> pick_entries(std::size_t n, std::size_t samples, Rng& rng) {
    std::vector<std::size_t> picks;
    if (samples == 0 || samples >= n) {
        for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
        for (std::size_t s = 0; s < samples; ++s) picks.push_back(rng.below(n));
    }
    return picks;
}

/// Fixed random projection so the checked scalar depends on every output.
inline Tensor<double> projection(const Shape& s, std::uint64_t seed) {
    Rng rng(seed, 77);
    Tensor<double> w(s);
    for (auto& v : w.values()) v = rng.uniform(-1.0, 1.0);
    return w;
}

}  // namespace detail

using VarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Checks d<P, f(x)>/dx for every element of every input.
inline GradCheckResult grad_check(const std::string& name, const VarFn& f, std::vector<Tensor<double>> inputs,
                                  const GradCheckOptions& opt = {}) {
    auto scalar = [&](Tape<double>& tape, const std::vector<Var<double>>& xs, Tensor<double>* proj) {
        const Var<double> out = f(tape, xs);
        if (proj->empty()) *proj = detail::projection(out.shape(), opt.seed);
        return sum(mul(out, tape.constant(*proj)));
    };
    Tensor<double> proj;
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var<double>> xs;
        for (const auto& x : inputs) xs.push_back(tape.leaf(x));
        tape.backward(scalar(tape, xs, &proj));
        for (const auto& x : xs) analytic.push_back(x.grad());
    }
    auto eval = [&]() {
        Tape<double> tape;
        std::vector<Var<double>> xs;
        for (const auto& x : inputs) xs.push_back(tape.constant(x));
        return scalar(tape, xs, &proj).value()[0];
    };
    Rng rng(opt.seed, 82);
    GradCheckResult r;
    r.name = name;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (std::size_t i : detail::pick_entries(inputs[k].numel(), opt.samples_per_input, rng)) {
            double& xi = inputs[k][i];
            const double numeric = detail::central_difference(
                [&](double v) {
                    xi = v;
                    return eval();
                },
                xi, opt.steps);
            detail::record_error(r, analytic[k][i], numeric, opt.floor,
                                 "input " + std::to_string(k) + "[" + std::to_string(i) + "]");
        }
    return r;
}

/// Checks parameter gradients of a scalar loss on sampled entries of every
/// parameter tensor.
inline GradCheckResult grad_check_params(const std::string& name, ParameterList<double>& ps,
                                         const std::function<Var<double>(Tape<double>&)>& loss,
                                         const GradCheckOptions& opt = {}) {
    ps.zero_grad();
    {
        Tape<double> tape;
        tape.backward(loss(tape));
    }
    auto eval = [&]() {
        Tape<double> tape;
        tape.freeze_all(true);
        return loss(tape).value()[0];
    };
    Rng rng(opt.seed, 78);
    GradCheckResult r;
    r.name = name;
    for (auto& p : ps) {
        for (std::size_t i : detail::pick_entries(p->value.numel(), opt.samples_per_tensor, rng)) {
            double& xi = p->value[i];
            const double numeric = detail::central_difference(
                [&](double v) {
                    xi = v;
                    return eval();
                },
                xi, opt.steps);
            detail::record_error(r, p->grad[i], numeric, opt.floor, p->name + "[" + std::to_string(i) + "]");
        }
    }
    ps.zero_grad();
    return r;
}

/// Shrunk generator used by gradient checks: the texture extractor keeps its
/// fixed widths, the backbone runs at 8 channels with one block per stage.
inline GeneratorConfig gradcheck_generator_config(bool csfi) {
    GeneratorConfig cfg;
    cfg.base_channels = 8;
    cfg.residual_blocks = {1, 1, 1, 1};
    cfg.csfi = csfi;
    return cfg;
}

inline std::vector<GradCheckResult> gradcheck_op_battery(const GradCheckOptions& opt = {}) {
    using T = double;
    using V = Var<T>;
    using Vs = std::vector<V>;
    Rng rng(opt.seed, 79);
    auto rnd = [&](Shape s, double lo = -1.0, double hi = 1.0) {
        Tensor<T> t(std::move(s));
        for (auto& v : t.values()) v = rng.uniform(lo, hi);
        return t;
    };
    // Values bounded away from zero keep ReLU/L1 kinks outside the step.
    auto off_zero = [&](Shape s) {
        Tensor<T> t(std::move(s));
        for (auto& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
        return t;
    };
    std::vector<GradCheckResult> out;
    auto run = [&](const std::string& name, const VarFn& f, std::vector<Tensor<T>> in) {
        out.push_back(grad_check(name, f, std::move(in), opt));
    };

    run("conv2d k3 s1", [](Tape<T>&, const Vs& x) { return conv2d(x[0], x[1], &x[2], 1, 1); },
        {rnd({2, 2, 5, 4}), rnd({3, 2, 3, 3}), rnd({3})});
    run("conv2d k3 s2", [](Tape<T>&, const Vs& x) { return conv2d(x[0], x[1], &x[2], 2, 1); },
        {rnd({1, 2, 6, 7}), rnd({2, 2, 3, 3}), rnd({2})});
    run("conv2d k1", [](Tape<T>&, const Vs& x) { return conv2d(x[0], x[1], &x[2], 1, 0); },
        {rnd({1, 3, 3, 3}), rnd({2, 3, 1, 1}), rnd({2})});
    run("unfold", [](Tape<T>&, const Vs& x) { return unfold(x[0], Window{3, 1, 1}); }, {rnd({1, 2, 4, 5})});
    run("unfold k6 s2", [](Tape<T>&, const Vs& x) { return unfold(x[0], Window{6, 2, 2}); }, {rnd({1, 1, 6, 6})});
    run("fold avg", [](Tape<T>&, const Vs& x) { return fold(x[0], 4, 4, Window{3, 1, 1}, true); },
        {rnd({1, 18, 16})});
    run("fold sum", [](Tape<T>&, const Vs& x) { return fold(x[0], 4, 6, Window{2, 2, 0}, false); },
        {rnd({2, 4, 6})});
    {
        IndexMap idx{2, 5, {0, 3, 3, 1, 2, 4, 4, 0, 1, 2}};
        run("gather_columns", [idx](Tape<T>&, const Vs& x) { return gather_columns(x[0], idx); },
            {rnd({2, 3, 5})});
    }
    run("resize_bicubic up", [](Tape<T>&, const Vs& x) { return resize_bicubic(x[0], 8, 12); }, {rnd({1, 2, 4, 3})});
    run("resize_bicubic down", [](Tape<T>&, const Vs& x) { return bicubic_resize(x[0], 1, 4); },
        {rnd({1, 1, 8, 8})});
    run("pixel_shuffle", [](Tape<T>&, const Vs& x) { return pixel_shuffle(x[0], 2); }, {rnd({1, 8, 2, 3})});
    run("space_to_depth", [](Tape<T>&, const Vs& x) { return space_to_depth(x[0], 2); }, {rnd({1, 2, 4, 6})});
    run("pool avg", [](Tape<T>&, const Vs& x) { return pool2x2(x[0], PoolKind::Average); }, {rnd({1, 2, 4, 5})});
    run("pool max", [](Tape<T>&, const Vs& x) { return pool2x2(x[0], PoolKind::Max); }, {rnd({1, 2, 4, 4})});
    run("upsample_nearest", [](Tape<T>&, const Vs& x) { return upsample_nearest(x[0], 3); }, {rnd({1, 2, 2, 3})});
    run("relu", [](Tape<T>&, const Vs& x) { return relu(x[0]); }, {off_zero({2, 3, 4})});
    run("leaky_relu", [](Tape<T>&, const Vs& x) { return leaky_relu(x[0], 0.2); }, {off_zero({2, 3, 4})});
    run("add", [](Tape<T>&, const Vs& x) { return add(x[0], x[1]); }, {rnd({2, 3}), rnd({2, 3})});
    run("sub", [](Tape<T>&, const Vs& x) { return sub(x[0], x[1]); }, {rnd({2, 3}), rnd({2, 3})});
    run("mul", [](Tape<T>&, const Vs& x) { return mul(x[0], x[1]); }, {rnd({2, 3}), rnd({2, 3})});
    run("mul_channel_broadcast", [](Tape<T>&, const Vs& x) { return mul_channel_broadcast(x[0], x[1]); },
        {rnd({2, 3, 2, 2}), rnd({2, 1, 2, 2})});
    run("scale", [](Tape<T>&, const Vs& x) { return scale(x[0], -1.5); }, {rnd({4})});
    run("add_scalar", [](Tape<T>&, const Vs& x) { return add_scalar(x[0], 0.25); }, {rnd({4})});
    run("reshape", [](Tape<T>&, const Vs& x) { return reshape(x[0], {3, 4}); }, {rnd({2, 6})});
    run("concat_channels", [](Tape<T>&, const Vs& x) { return concat_channels<T>({x[0], x[1]}); },
        {rnd({2, 1, 2, 2}), rnd({2, 3, 2, 2})});
    run("slice_channels", [](Tape<T>&, const Vs& x) { return slice_channels(x[0], 1, 3); }, {rnd({2, 4, 2, 2})});
    run("sum", [](Tape<T>&, const Vs& x) { return sum(x[0]); }, {rnd({3, 4})});
    run("mean", [](Tape<T>&, const Vs& x) { return mean(x[0]); }, {rnd({3, 4})});
    run("mean_per_item", [](Tape<T>&, const Vs& x) { return mean_per_item(x[0]); }, {rnd({3, 2, 2})});
    run("l1_distance", [](Tape<T>&, const Vs& x) { return l1_distance(x[0], x[1]); },
        {off_zero({2, 3, 2}), Tensor<T>({2, 3, 2})});
    run("mse", [](Tape<T>&, const Vs& x) { return mse(x[0], x[1]); }, {rnd({2, 3, 2}), rnd({2, 3, 2})});
    run("linear", [](Tape<T>&, const Vs& x) { return linear(x[0], x[1], x[2]); },
        {rnd({2, 4}), rnd({3, 4}), rnd({3})});
    run("normalize_columns", [](Tape<T>&, const Vs& x) { return normalize_columns(x[0]); }, {rnd({2, 4, 3})});
    run("bmm_tn", [](Tape<T>&, const Vs& x) { return bmm_tn(x[0], x[1]); }, {rnd({2, 3, 4}), rnd({2, 3, 5})});
    run("row_max", [](Tape<T>&, const Vs& x) { return row_max(x[0]).first; }, {rnd({2, 3, 5})});
    run("relevance + soft attention",
        [](Tape<T>&, const Vs& x) {
            return attention_maps(relevance_embedding(x[0], x[1], level_window(3))).soft;
        },
        {rnd({1, 3, 3, 3}), rnd({1, 3, 4, 4})});
    run("transfer level 2",
        [](Tape<T>&, const Vs& x) {
            const IndexMap hard{1, 4, {3, 0, 2, 2}};
            return transfer_level(x[0], hard, 2, 2, 2, 2, 2);
        },
        {rnd({1, 2, 4, 4})});
    {
        ParameterList<T> ps;
        Rng init(opt.seed, 80);
        const Conv2d<T> fuse(ps, "fuse", 2 + 3, 2, 3, 1, init);
        run("soft_fuse",
            [&fuse](Tape<T>&, const Vs& x) { return soft_fuse(x[0], x[1], x[2], fuse); },
            {rnd({1, 2, 4, 4}), rnd({1, 3, 4, 4}), rnd({1, 1, 2, 2})});
        out.push_back(grad_check_params(
            "soft_fuse params", ps,
            [&](Tape<T>& tape) {
                Rng data(opt.seed, 81);
                auto t = [&](Shape s) {
                    Tensor<T> v(std::move(s));
                    for (auto& e : v.values()) e = data.uniform(-1.0, 1.0);
                    return tape.constant(v);
                };
                const V r = soft_fuse(t({1, 2, 4, 4}), t({1, 3, 4, 4}), t({1, 1, 2, 2}), fuse);
                return sum(mul(r, tape.constant(detail::projection(r.shape(), opt.seed))));
            },
            [&] {
                GradCheckOptions all = opt;
                all.samples_per_tensor = 0;
                return all;
            }()));
    }

    return out;
}

/// Full networks on double precision: generator with and without CSFI, the
/// transferal perceptual term through the extractor, and the critic.
inline std::vector<GradCheckResult> gradcheck_network_battery(const GradCheckOptions& opt = {}) {
    using T = double;
    using Vs = std::vector<Var<T>>;
    Rng rng(opt.seed, 83);
    auto rnd = [&](Shape s) {
        Tensor<T> t(std::move(s));
        for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
        return t;
    };
    std::vector<GradCheckResult> out;
    // Texture transformer and full generator at LR 2x2 / HR 8x8, sampled
    // parameter entries.
    Tensor<T> lr = rnd({1, 3, 2, 2}), ref = rnd({1, 3, 8, 8}), hr = rnd({1, 3, 8, 8});
    const SrInputs<T> in = make_sr_inputs(lr, ref);
    for (const bool csfi : {true, false}) {
        Generator<T> g(gradcheck_generator_config(csfi), opt.seed);
        out.push_back(grad_check_params(std::string("generator csfi=") + (csfi ? "on" : "off"), g.parameters(),
                                        [&](Tape<T>& tape) {
                                            const auto o = g.forward(tape, in);
                                            return l1_distance(o.sr, tape.constant(hr));
                                        },
                                        opt));
    }
    {
        Generator<T> g(gradcheck_generator_config(true), opt.seed + 1);
        out.push_back(grad_check_params("transferal perceptual", g.parameters(),
                                        [&](Tape<T>& tape) {
                                            const auto o = g.forward(tape, in);
                                            return transferal_perceptual_loss(o.sr, *o.texture3, g.lte());
                                        },
                                        opt));
    }
    {
        Discriminator<T> d(32, opt.seed);
        const Tensor<T> img = rnd({2, 3, 32, 32});
        out.push_back(grad_check_params("discriminator", d.parameters(),
                                        [&](Tape<T>& tape) { return mean(d(tape.constant(img))); }, opt));
        GradCheckOptions sampled = opt;
        sampled.samples_per_input = 256;
        out.push_back(grad_check("discriminator input",
                                 [&d](Tape<T>& tape, const Vs& x) {
                                     d.parameters().freeze_on(tape);
                                     return d(x[0]);
                                 },
                                 {rnd({1, 3, 32, 32})}, sampled));
    }
    return out;
}

inline std::vector<GradCheckResult> gradcheck_battery(const GradCheckOptions& opt = {}) {
    auto out = gradcheck_op_battery(opt);
    for (auto& r : gradcheck_network_battery(opt)) out.push_back(std::move(r));
    return out;
}

}  // namespace ttsr
