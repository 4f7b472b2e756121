#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unfoldseg/tensor.hpp"

namespace unfoldseg {

/// Handle to a node on a GradTape. Plain index, only valid for the tape
/// that created it.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode gradient tape over the tensor op set used by the unfolded
/// model. Forward values are computed eagerly through the same kernels as
/// the untaped ops, so a taped forward pass and a plain ops:: pipeline
/// produce bit-identical numbers. A tape is confined to a single training
/// step on a single thread.
class GradTape {
public:
    /// Non-learnable input; receives no gradient slot of its own unless a
    /// downstream op requires it.
    Var constant(Tensor value);

    /// Learnable leaf. Gradients for registered parameters are available
    /// after backward() in registration order.
    Var param(Tensor value, std::string name);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var safe_div(Var a, Var b, double eps = ops::kDivEps);
    Var affine(Var a, double mul, double add);
    Var clamp(Var a, double lo, double hi);
    Var clamp01(Var a) { return clamp(a, 0.0, 1.0); }
    Var square(Var a);
    Var sqrt(Var a);
    Var log(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);
    Var tanh(Var a);
    Var conv2d(Var x, Var kernel, int out_channels = 1);
    Var concat_channels(Var a, Var b);
    Var channel_mean(Var a);
    Var sum(Var a);
    Var mean(Var a);

    /// Uncertainty-removal pair. The snapped-target map passes gradient
    /// through its identity branch only; the gate is piecewise constant and
    /// passes no gradient.
    Var mask_targets(Var m);
    Var mask_gate(Var m);

    const Tensor& value(Var v) const;
    int node_count() const noexcept { return static_cast<int>(nodes_.size()); }

    /// Runs reverse accumulation from a scalar loss node. Throws
    /// std::invalid_argument when loss is not a single-element tensor.
    void backward(Var loss);

    bool has_grad(Var v) const;
    const Tensor& grad(Var v) const;

    std::size_t param_count() const noexcept { return params_.size(); }
    const std::vector<std::string>& param_names() const noexcept { return names_; }
    const Tensor& param_grad(std::size_t i) const;
    const Tensor& param_grad(const std::string& name) const;

private:
    enum class OpKind : std::uint8_t {
        kConst, kParam, kAdd, kSub, kMul, kSafeDiv, kAffine, kClamp, kSquare,
        kSqrt, kLog, kSigmoid, kSoftplus, kTanh, kConv2d, kConcat,
        kChannelMean, kSum, kMean, kMaskTargets, kMaskGate,
    };
    struct Node {
        OpKind kind;
        int a = -1, b = -1;
        double s0 = 0.0, s1 = 0.0;  // affine mul/add, clamp lo/hi, safe_div eps
        int out_channels = 0;       // conv2d only
        Tensor value;
        bool needs_grad = false;
    };

    Var push(Node node);
    Var unary(OpKind kind, Var a, Tensor value, double s0 = 0.0, double s1 = 0.0);
    Var binary(OpKind kind, Var a, Var b, Tensor value, double s0 = 0.0);
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<int> params_;        // node ids of registered parameters
    std::vector<std::string> names_;
    bool ran_backward_ = false;
};

}  // namespace unfoldseg
