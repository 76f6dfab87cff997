#pragma once

// Reconstruction, WGAN-GP adversarial and perceptual losses.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ttsr/checkpoint.hpp"
#include "ttsr/texture_transformer.hpp"

namespace ttsr {

struct LossWeights {
    double rec = 1.0;
    double adv = 1e-3;
    double per = 1e-2;
    double gp = 10.0;

    void validate() const {
        if (rec < 0 || adv < 0 || per < 0 || gp < 0) throw std::invalid_argument("loss weights must be non-negative");
    }
    /// Reconstruction-only weights used during warm-up.
    LossWeights warmup() const { return {rec, 0.0, 0.0, gp}; }
};

/// Mean absolute error over every element.
template <typename T>
Var<T> rec_loss(const Var<T>& sr, const Var<T>& hr) {
    return l1_distance(sr, hr);
}

/// A frozen feature network standing in for a pretrained classifier.
/// Default: a randomly initialized texture-extractor layout tapped at the
/// deepest level. The identity plug passes images through unchanged.
template <typename T>
class FeatureExtractorPlug {
  public:
    static FeatureExtractorPlug random_lte(std::uint64_t seed, int level = 3) {
        FeatureExtractorPlug p;
        Rng rng = make_stream(seed, Stream::Init);
        p.lte_.emplace(p.params_, "plug", rng);
        p.level_ = level;
        return p;
    }
    static FeatureExtractorPlug identity() { return FeatureExtractorPlug(); }
    /// Extractor-layout weights from a checkpoint file whose parameter table
    /// holds exactly the "plug.*" tensors.
    static FeatureExtractorPlug from_file(const std::filesystem::path& path, int level = 3) {
        FeatureExtractorPlug p = random_lte(0, level);
        restore_parameters<T>(load_checkpoint(path), {&p.params_});
        return p;
    }

    FeatureExtractorPlug(FeatureExtractorPlug&&) noexcept = default;
    FeatureExtractorPlug& operator=(FeatureExtractorPlug&&) noexcept = default;

    Var<T> operator()(const Var<T>& img) const {
        if (!lte_) return img;
        params_.freeze_on(img.tape());
        return (*lte_)(img).level(level_);
    }

    ParameterList<T>& parameters() { return params_; }
    int level() const { return level_; }
    bool is_identity() const { return !lte_.has_value(); }

  private:
    FeatureExtractorPlug() = default;
    mutable ParameterList<T> params_;
    std::optional<TextureExtractor<T>> lte_;
    int level_ = 3;
};

/// Feature-space MSE between SR and HR, normalized by the feature volume.
template <typename T>
Var<T> perceptual_loss(const Var<T>& sr, const Var<T>& hr, const FeatureExtractorPlug<T>* plug) {
    if (!plug) throw std::invalid_argument("perceptual_loss: no feature extractor configured");
    require_same_shape(sr.value(), hr.value(), "perceptual_loss");
    return mse((*plug)(sr), (*plug)(hr));
}

/// MSE between the live extractor's level-3 features of SR and the
/// transferred texture T.
template <typename T>
Var<T> transferal_perceptual_loss(const Var<T>& sr, const Var<T>& texture3, const TextureExtractor<T>& lte) {
    const Var<T> f = lte.level3(sr);
    if (f.shape() != texture3.shape())
        throw ShapeError("transferal_perceptual_loss: LTE level-3 " + shape_str(f.shape()) + " vs T " +
                         shape_str(texture3.shape()));
    return mse(f, texture3);
}

/// Any callable mapping a [N,...] image variable to [N] scores, binding its
/// own parameters on the input's tape.
template <typename T>
using Critic = std::function<Var<T>(const Var<T>&)>;

template <typename T>
Tensor<T> interpolate(const Tensor<T>& real, const Tensor<T>& fake, std::span<const T> eps) {
    require_same_shape(real, fake, "gradient_penalty");
    const std::size_t N = real.dim(0), M = real.numel() / N;
    if (eps.size() != N) throw ShapeError("gradient_penalty: one epsilon per batch item required");
    Tensor<T> x(real.shape());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < M; ++i)
            x[n * M + i] = eps[n] * real[n * M + i] + (T(1) - eps[n]) * fake[n * M + i];
    return x;
}

/// Critic input-gradient per batch item at x, with critic parameters frozen.
template <typename T>
Tensor<T> critic_input_gradient(const Critic<T>& d, const Tensor<T>& x) {
    Tape<T> tape;
    tape.freeze_all(true);
    const Var<T> xv = tape.leaf(x);
    const Var<T> scores = d(xv);
    if (!scores.value().all_finite()) throw NumericError("gradient_penalty: non-finite critic output");
    tape.backward(sum(scores));
    return xv.grad();
}

template <typename T>
struct PenaltyResult {
    T penalty = 0;
    std::vector<T> grad_norms;
};

/// mean_n (||grad_x D(x_n)||_2 - 1)^2 at x = eps*real + (1-eps)*fake.
template <typename T>
PenaltyResult<T> gradient_penalty(const Critic<T>& d, const Tensor<T>& real, const Tensor<T>& fake,
                                  std::span<const T> eps) {
    const Tensor<T> x = interpolate(real, fake, eps);
    const Tensor<T> g = critic_input_gradient(d, x);
    const std::size_t N = x.dim(0), M = x.numel() / N;
    PenaltyResult<T> out;
    out.grad_norms.resize(N);
    for (std::size_t n = 0; n < N; ++n) {
        T sq = 0;
        for (std::size_t i = 0; i < M; ++i) sq += g[n * M + i] * g[n * M + i];
        out.grad_norms[n] = std::sqrt(sq);
        out.penalty += (out.grad_norms[n] - T(1)) * (out.grad_norms[n] - T(1));
    }
    out.penalty /= static_cast<T>(N);
    return out;
}

/// Accumulates weight * d(penalty)/d(critic params) into the critic's
/// parameter gradients using first-order differentiation only:
///   d||g_n||/d(theta) = d/d(theta) [ d/dt D(x_n + t u_n) ]_{t=0},  u_n = g_n/||g_n||,
/// with the directional derivative taken by a central difference of step h.
/// For piecewise-linear critics the difference is exact away from kinks.
template <typename T>
PenaltyResult<T> gradient_penalty_backward(const Critic<T>& d, const Tensor<T>& real, const Tensor<T>& fake,
                                           std::span<const T> eps, T weight, T h = T(1e-3)) {
    const Tensor<T> x = interpolate(real, fake, eps);
    const Tensor<T> g = critic_input_gradient(d, x);
    const std::size_t N = x.dim(0), M = x.numel() / N;
    PenaltyResult<T> out;
    out.grad_norms.resize(N);
    Tensor<T> xp = x, xm = x;
    Tensor<T> coef({N});
    for (std::size_t n = 0; n < N; ++n) {
        T sq = 0;
        for (std::size_t i = 0; i < M; ++i) sq += g[n * M + i] * g[n * M + i];
        const T norm = std::sqrt(sq);
        out.grad_norms[n] = norm;
        out.penalty += (norm - T(1)) * (norm - T(1));
        if (norm < T(1e-12)) continue;  // direction undefined; no parameter gradient
        for (std::size_t i = 0; i < M; ++i) {
            const T u = g[n * M + i] / norm;
            xp[n * M + i] += h * u;
            xm[n * M + i] -= h * u;
        }
        coef[n] = weight * T(2) * (norm - T(1)) / static_cast<T>(N) / (T(2) * h);
    }
    out.penalty /= static_cast<T>(N);
    Tape<T> tape;
    const Var<T> diff = sub(d(tape.constant(xp)), d(tape.constant(xm)));
    tape.backward(sum(mul(diff, tape.constant(coef))));
    return out;
}

/// mean D(fake) - mean D(real) + lambda_gp * penalty (value only).
template <typename T>
T d_loss(const Critic<T>& d, const Tensor<T>& real, const Tensor<T>& fake, T lambda_gp, std::span<const T> eps) {
    Tape<T> tape;
    tape.freeze_all(true);
    const T w = mean(d(tape.constant(fake))).value()[0] - mean(d(tape.constant(real))).value()[0];
    return w + lambda_gp * gradient_penalty(d, real, fake, eps).penalty;
}

struct CriticLossValues {
    double total = 0, wasserstein = 0, penalty = 0;
};

/// Accumulates d(d_loss)/d(critic params) and returns the loss components.
template <typename T>
CriticLossValues d_loss_backward(const Critic<T>& d, const Tensor<T>& real, const Tensor<T>& fake, T lambda_gp,
                                 std::span<const T> eps) {
    CriticLossValues v;
    {
        Tape<T> tape;
        const Var<T> w = sub(mean(d(tape.constant(fake))), mean(d(tape.constant(real))));
        v.wasserstein = w.value()[0];
        tape.backward(w);
    }
    v.penalty = gradient_penalty_backward(d, real, fake, eps, lambda_gp).penalty;
    v.total = v.wasserstein + static_cast<double>(lambda_gp) * v.penalty;
    return v;
}

/// -mean D(fake); gradients flow into `fake`, critic parameters should be
/// frozen on the tape by the caller.
template <typename T>
Var<T> g_adv_loss(const Critic<T>& d, const Var<T>& fake) {
    return scale(mean(d(fake)), T(-1));
}

struct LossComponents {
    double rec = 0, adv = 0, per = 0;
};

inline double overall_loss(const LossComponents& c, const LossWeights& w) {
    return w.rec * c.rec + w.adv * c.adv + w.per * c.per;
}

/// Weighted sum on the tape. Terms with zero weight or absent are skipped,
/// so warm-up never evaluates them.
template <typename T>
Var<T> overall_loss(const Var<T>& rec, const std::optional<Var<T>>& adv, const std::optional<Var<T>>& per,
                    const LossWeights& w) {
    w.validate();
    Var<T> total = scale(rec, static_cast<T>(w.rec));
    if (adv && w.adv > 0) total = add(total, scale(*adv, static_cast<T>(w.adv)));
    if (per && w.per > 0) total = add(total, scale(*per, static_cast<T>(w.per)));
    return total;
}

}  // namespace ttsr
