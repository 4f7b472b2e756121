#include "unfoldseg/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace unfoldseg {

using ops::Broadcast;

Var GradTape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const GradTape::Node& GradTape::node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("GradTape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Var GradTape::constant(Tensor value) {
    Node n;
    n.kind = OpKind::kConst;
    n.value = std::move(value);
    return push(std::move(n));
}

Var GradTape::param(Tensor value, std::string name) {
    Node n;
    n.kind = OpKind::kParam;
    n.value = std::move(value);
    n.needs_grad = true;
    Var v = push(std::move(n));
    params_.push_back(v.id);
    names_.push_back(std::move(name));
    return v;
}

Var GradTape::unary(OpKind kind, Var a, Tensor value, double s0, double s1) {
    Node n;
    n.kind = kind;
    n.a = a.id;
    n.s0 = s0;
    n.s1 = s1;
    n.value = std::move(value);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::binary(OpKind kind, Var a, Var b, Tensor value, double s0) {
    Node n;
    n.kind = kind;
    n.a = a.id;
    n.b = b.id;
    n.s0 = s0;
    n.value = std::move(value);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var GradTape::add(Var a, Var b) {
    return binary(OpKind::kAdd, a, b, ops::add(value(a), value(b)));
}
Var GradTape::sub(Var a, Var b) {
    return binary(OpKind::kSub, a, b, ops::sub(value(a), value(b)));
}
Var GradTape::mul(Var a, Var b) {
    return binary(OpKind::kMul, a, b, ops::mul(value(a), value(b)));
}
Var GradTape::safe_div(Var a, Var b, double eps) {
    return binary(OpKind::kSafeDiv, a, b, ops::safe_div(value(a), value(b), eps), eps);
}
Var GradTape::affine(Var a, double mul, double add) {
    return unary(OpKind::kAffine, a, ops::affine(value(a), mul, add), mul, add);
}
Var GradTape::clamp(Var a, double lo, double hi) {
    return unary(OpKind::kClamp, a, ops::clamp(value(a), lo, hi), lo, hi);
}
Var GradTape::square(Var a) { return unary(OpKind::kSquare, a, ops::square(value(a))); }
Var GradTape::sqrt(Var a) { return unary(OpKind::kSqrt, a, ops::sqrt(value(a))); }
Var GradTape::log(Var a) { return unary(OpKind::kLog, a, ops::log(value(a))); }
Var GradTape::sigmoid(Var a) { return unary(OpKind::kSigmoid, a, ops::sigmoid(value(a))); }
Var GradTape::softplus(Var a) { return unary(OpKind::kSoftplus, a, ops::softplus(value(a))); }
Var GradTape::tanh(Var a) { return unary(OpKind::kTanh, a, ops::tanh(value(a))); }

Var GradTape::conv2d(Var x, Var kernel, int out_channels) {
    Node n;
    n.kind = OpKind::kConv2d;
    n.a = x.id;
    n.b = kernel.id;
    n.out_channels = out_channels;
    n.value = ops::conv2d(value(x), value(kernel), out_channels);
    n.needs_grad = node(x).needs_grad || node(kernel).needs_grad;
    return push(std::move(n));
}

Var GradTape::concat_channels(Var a, Var b) {
    return binary(OpKind::kConcat, a, b, ops::concat_channels(value(a), value(b)));
}

Var GradTape::channel_mean(Var a) {
    return unary(OpKind::kChannelMean, a, ops::channel_mean(value(a)));
}

Var GradTape::sum(Var a) {
    return unary(OpKind::kSum, a, Tensor::from_data(1, 1, 1, {ops::sum(value(a))}));
}

Var GradTape::mean(Var a) {
    return unary(OpKind::kMean, a, Tensor::from_data(1, 1, 1, {ops::mean(value(a))}));
}

Var GradTape::mask_targets(Var m) {
    return unary(OpKind::kMaskTargets, m, ops::mask_targets(value(m)));
}

Var GradTape::mask_gate(Var m) {
    return unary(OpKind::kMaskGate, m, ops::mask_gate(value(m)));
}

const Tensor& GradTape::value(Var v) const { return node(v).value; }

bool GradTape::has_grad(Var v) const {
    return ran_backward_ && node(v).needs_grad &&
           !grads_[static_cast<std::size_t>(v.id)].empty();
}

const Tensor& GradTape::grad(Var v) const {
    if (!ran_backward_) throw std::invalid_argument("GradTape: backward() has not run");
    const Node& n = node(v);
    const Tensor& g = grads_[static_cast<std::size_t>(v.id)];
    if (g.empty())
        throw std::invalid_argument("GradTape: node has no gradient (unused or constant)");
    (void)n;
    return g;
}

const Tensor& GradTape::param_grad(std::size_t i) const {
    if (i >= params_.size()) throw std::invalid_argument("GradTape: parameter index out of range");
    return grad(Var{params_[i]});
}

const Tensor& GradTape::param_grad(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return param_grad(i);
    throw std::invalid_argument("GradTape: unknown parameter '" + name + "'");
}

namespace {

// Accumulates g into the slot tensor, resolving broadcasts by summing the
// gradient over the replicated axis.
void ensure_grad(Tensor& slot, const Tensor& like) {
    if (slot.empty()) slot = Tensor(like.height(), like.width(), like.channels());
}

// Packed-patch convolution backward; mirrors the forward's layout so the
// inner loops unroll over a compile-time channel count.
template <int COUT>
void conv2d_backward(const Tensor& x, const Tensor& kern, const Tensor& g, int cout_rt,
                     bool need_x, bool need_k, double* gxd, double* gkd) {
    const int kh = kern.height(), kw = kern.width();
    const int cin = x.channels();
    const int h = x.height(), w = x.width();
    const int cout = COUT > 0 ? COUT : cout_rt;
    const int patch_len = kh * kw * cin;
    const std::vector<int> ymap = ops::reflect_map(h, kh);
    const std::vector<int> xmap = ops::reflect_map(w, kw);
    std::vector<double> patch(static_cast<std::size_t>(w) * patch_len);
    std::vector<double> gpatch(need_x ? patch.size() : 0);
    const double* __restrict kd = kern.values().data();
    const double* gd = g.values().data();
    for (int y = 0; y < h; ++y) {
        ops::conv2d_pack_row(x, ymap, xmap, kh, kw, y, patch.data());
        if (need_x) std::fill(gpatch.begin(), gpatch.end(), 0.0);
        const double* grow = gd + static_cast<std::size_t>(y) * w * cout;
        for (int xo = 0; xo < w; ++xo) {
            const double* __restrict p = patch.data() + static_cast<std::size_t>(xo) * patch_len;
            double* __restrict gp =
                need_x ? gpatch.data() + static_cast<std::size_t>(xo) * patch_len : nullptr;
            const double* __restrict gpix = grow + static_cast<std::size_t>(xo) * cout;
            if (need_x && need_k) {
                for (int t = 0; t < patch_len; ++t) {
                    const std::size_t kvec = static_cast<std::size_t>(t) * cout;
                    const double pv = p[t];
                    double acc = 0.0;
                    for (int co = 0; co < cout; ++co) {
                        acc += gpix[co] * kd[kvec + co];
                        gkd[kvec + co] += gpix[co] * pv;
                    }
                    gp[t] = acc;
                }
            } else if (need_x) {
                for (int t = 0; t < patch_len; ++t) {
                    const std::size_t kvec = static_cast<std::size_t>(t) * cout;
                    double acc = 0.0;
                    for (int co = 0; co < cout; ++co) acc += gpix[co] * kd[kvec + co];
                    gp[t] = acc;
                }
            } else {
                for (int t = 0; t < patch_len; ++t) {
                    const std::size_t kvec = static_cast<std::size_t>(t) * cout;
                    const double pv = p[t];
                    for (int co = 0; co < cout; ++co) gkd[kvec + co] += gpix[co] * pv;
                }
            }
        }
        if (need_x) {
            // col2im: scatter the packed gradient back to sources
            for (int i = 0; i < kh; ++i) {
                double* xrow =
                    gxd + static_cast<std::size_t>(ymap[static_cast<std::size_t>(y) * kh + i]) *
                              w * cin;
                for (int xo = 0; xo < w; ++xo) {
                    const double* src = gpatch.data() +
                                        static_cast<std::size_t>(xo) * patch_len +
                                        static_cast<std::size_t>(i) * kw * cin;
                    const int* cols = xmap.data() + static_cast<std::size_t>(xo) * kw;
                    for (int j = 0; j < kw; ++j) {
                        double* dst = xrow + static_cast<std::size_t>(cols[j]) * cin;
                        for (int ci = 0; ci < cin; ++ci) dst[ci] += src[j * cin + ci];
                    }
                }
            }
        }
    }
}

}  // namespace

void GradTape::backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.value.size() != 1)
        throw std::invalid_argument("backward: loss must be a scalar node, got shape " +
                                    ln.value.shape_str());
    grads_.assign(nodes_.size(), Tensor{});
    ran_backward_ = true;

    // Parameters keep a zero gradient even when unused by the loss.
    for (int pid : params_) {
        const Tensor& v = nodes_[static_cast<std::size_t>(pid)].value;
        ensure_grad(grads_[static_cast<std::size_t>(pid)], v);
    }

    if (!ln.needs_grad) return;  // loss does not depend on any parameter

    grads_[static_cast<std::size_t>(loss.id)] = Tensor(1, 1, 1, 1.0);

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) continue;
        const Tensor& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) continue;  // node did not contribute to the loss

        auto grad_slot = [&](int input) -> Tensor& {
            Tensor& slot = grads_[static_cast<std::size_t>(input)];
            ensure_grad(slot, nodes_[static_cast<std::size_t>(input)].value);
            return slot;
        };
        auto input_needs = [&](int input) {
            return input >= 0 && nodes_[static_cast<std::size_t>(input)].needs_grad;
        };

        const Tensor* va = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)].value : nullptr;
        const Tensor* vb = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)].value : nullptr;

        switch (n.kind) {
        case OpKind::kConst:
        case OpKind::kParam:
            break;
        case OpKind::kAdd: {
            const Broadcast k = ops::broadcast_kind(*va, *vb);
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t ia, std::size_t) {
                                            ga[ia] += g[o];
                                        });
            }
            if (input_needs(n.b)) {
                Tensor& gb = grad_slot(n.b);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t, std::size_t ib) {
                                            gb[ib] += g[o];
                                        });
            }
            break;
        }
        case OpKind::kSub: {
            const Broadcast k = ops::broadcast_kind(*va, *vb);
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t ia, std::size_t) {
                                            ga[ia] += g[o];
                                        });
            }
            if (input_needs(n.b)) {
                Tensor& gb = grad_slot(n.b);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t, std::size_t ib) {
                                            gb[ib] -= g[o];
                                        });
            }
            break;
        }
        case OpKind::kMul: {
            const Broadcast k = ops::broadcast_kind(*va, *vb);
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                            ga[ia] += g[o] * (*vb)[ib];
                                        });
            }
            if (input_needs(n.b)) {
                Tensor& gb = grad_slot(n.b);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                            gb[ib] += g[o] * (*va)[ia];
                                        });
            }
            break;
        }
        case OpKind::kSafeDiv: {
            const Broadcast k = ops::broadcast_kind(*va, *vb);
            const double eps = n.s0;
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                            ga[ia] += g[o] / ops::safe_denom((*vb)[ib], eps);
                                        });
            }
            if (input_needs(n.b)) {
                // Flat (zero) derivative inside the guard band |b| < eps.
                Tensor& gb = grad_slot(n.b);
                ops::for_each_broadcast(*va, *vb, k,
                                        [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                            const double bv = (*vb)[ib];
                                            if (std::fabs(bv) <= eps) return;
                                            gb[ib] -= g[o] * (*va)[ia] / (bv * bv);
                                        });
            }
            break;
        }
        case OpKind::kAffine:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.s0 * g[i];
            }
            break;
        case OpKind::kClamp:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = (*va)[i];
                    if (x >= n.s0 && x <= n.s1) ga[i] += g[i];
                }
            }
            break;
        case OpKind::kSquare:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * (*va)[i] * g[i];
            }
            break;
        case OpKind::kSqrt:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 0.5 / n.value[i] * g[i];
            }
            break;
        case OpKind::kLog:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*va)[i];
            }
            break;
        case OpKind::kSigmoid:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value[i];
                    ga[i] += y * (1.0 - y) * g[i];
                }
            }
            break;
        case OpKind::kSoftplus:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] / (1.0 + std::exp(-(*va)[i]));
            }
            break;
        case OpKind::kTanh:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value[i];
                    ga[i] += (1.0 - y * y) * g[i];
                }
            }
            break;
        case OpKind::kConv2d: {
            const Tensor& x = *va;
            const Tensor& kern = *vb;
            const int cout = n.out_channels;
            const bool need_x = input_needs(n.a);
            const bool need_k = input_needs(n.b);
            double* gxd = need_x ? grad_slot(n.a).values().data() : nullptr;
            double* gkd = need_k ? grad_slot(n.b).values().data() : nullptr;
            switch (cout) {
            case 1: conv2d_backward<1>(x, kern, g, 1, need_x, need_k, gxd, gkd); break;
            case 3: conv2d_backward<3>(x, kern, g, 3, need_x, need_k, gxd, gkd); break;
            case 6: conv2d_backward<6>(x, kern, g, 6, need_x, need_k, gxd, gkd); break;
            default: conv2d_backward<0>(x, kern, g, cout, need_x, need_k, gxd, gkd); break;
            }
            break;
        }
        case OpKind::kConcat: {
            const int ca = va->channels();
            const int ctotal = n.value.channels();
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (int y = 0; y < n.value.height(); ++y)
                    for (int x = 0; x < n.value.width(); ++x)
                        for (int c = 0; c < ca; ++c) ga.at(y, x, c) += g.at(y, x, c);
            }
            if (input_needs(n.b)) {
                Tensor& gb = grad_slot(n.b);
                for (int y = 0; y < n.value.height(); ++y)
                    for (int x = 0; x < n.value.width(); ++x)
                        for (int c = ca; c < ctotal; ++c)
                            gb.at(y, x, c - ca) += g.at(y, x, c);
            }
            break;
        }
        case OpKind::kChannelMean:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                const double inv = 1.0 / va->channels();
                for (int y = 0; y < va->height(); ++y)
                    for (int x = 0; x < va->width(); ++x) {
                        const double go = g.at(y, x, 0) * inv;
                        for (int c = 0; c < va->channels(); ++c) ga.at(y, x, c) += go;
                    }
            }
            break;
        case OpKind::kSum:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                const double go = g[0];
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
            }
            break;
        case OpKind::kMean:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                const double go = g[0] / static_cast<double>(va->size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
            }
            break;
        case OpKind::kMaskTargets:
            if (input_needs(n.a)) {
                Tensor& ga = grad_slot(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double v = (*va)[i];
                    const bool snapped = (v >= 0.1 && v < 0.4) || (v > 0.6 && v <= 0.9);
                    if (!snapped) ga[i] += g[i];
                }
            }
            break;
        case OpKind::kMaskGate:
            break;  // piecewise constant
        }
    }
}

}  // namespace unfoldseg
