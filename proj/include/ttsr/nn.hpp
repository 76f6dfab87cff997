#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ttsr/ops.hpp"
#include "ttsr/rng.hpp"

namespace ttsr {

/// Owns parameters in registration order. Layers keep raw pointers, which
/// stay valid because storage is never reallocated in place.
template <typename T>
class ParameterList {
  public:
    ParameterList() = default;
    ParameterList(const ParameterList&) = delete;
    ParameterList& operator=(const ParameterList&) = delete;
    ParameterList(ParameterList&&) noexcept = default;
    ParameterList& operator=(ParameterList&&) noexcept = default;

    Parameter<T>& add(std::string name, Tensor<T> value) {
        for (const auto& p : params_)
            if (p->name == name) throw std::logic_error("duplicate parameter name '" + name + "'");
        params_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(value)));
        return *params_.back();
    }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    Parameter<T>& fan_in_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
        Tensor<T> w(std::move(shape));
        const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-b, b));
        return add(std::move(name), std::move(w));
    }

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    Parameter<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    void freeze_on(Tape<T>& tape) {
        for (auto& p : params_) tape.freeze(*p);
    }

  private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

template <typename T>
struct Conv2d {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    std::size_t stride = 1;
    std::size_t pad = 1;

    Conv2d() = default;
    Conv2d(ParameterList<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
           std::size_t stride_, Rng& rng)
        : stride(stride_), pad(k / 2) {
        weight = &ps.fan_in_uniform(name + ".weight", {cout, cin, k, k}, cin * k * k, rng);
        bias = &ps.fan_in_uniform(name + ".bias", {cout}, cin * k * k, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        Tape<T>& t = x.tape();
        return conv2d(x, t.param(*weight), t.param(*bias), stride, pad);
    }
    std::size_t in_channels() const { return weight->value.dim(1); }
    std::size_t out_channels() const { return weight->value.dim(0); }
};

template <typename T>
struct Linear {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;

    Linear() = default;
    Linear(ParameterList<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        weight = &ps.fan_in_uniform(name + ".weight", {out, in}, in, rng);
        bias = &ps.fan_in_uniform(name + ".bias", {out}, in, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        Tape<T>& t = x.tape();
        return linear(x, t.param(*weight), t.param(*bias));
    }
};

/// x + conv(relu(conv(x))); no normalization and no activation after the skip.
template <typename T>
struct ResidualBlock {
    Conv2d<T> conv1, conv2;

    ResidualBlock() = default;
    ResidualBlock(ParameterList<T>& ps, const std::string& name, std::size_t channels, Rng& rng)
        : conv1(ps, name + ".conv1", channels, channels, 3, 1, rng),
          conv2(ps, name + ".conv2", channels, channels, 3, 1, rng) {}

    Var<T> operator()(const Var<T>& x) const {
        if (x.dim(1) != conv1.in_channels())
            throw ShapeError("residual_block: input has " + std::to_string(x.dim(1)) + " channels, block expects " +
                             std::to_string(conv1.in_channels()));
        return add(x, conv2(relu(conv1(x))));
    }
};

template <typename T>
std::vector<ResidualBlock<T>> make_residual_blocks(ParameterList<T>& ps, const std::string& name, std::size_t count,
                                                   std::size_t channels, Rng& rng) {
    std::vector<ResidualBlock<T>> blocks;
    for (std::size_t i = 0; i < count; ++i)
        blocks.emplace_back(ps, name + "." + std::to_string(i), channels, rng);
    return blocks;
}

template <typename T>
Var<T> run_blocks(const std::vector<ResidualBlock<T>>& blocks, Var<T> x) {
    for (const auto& b : blocks) x = b(x);
    return x;
}

}  // namespace ttsr
