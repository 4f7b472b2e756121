#include "unfoldseg/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace unfoldseg {

Tensor::Tensor(int height, int width, int channels, double fill) {
    if (height < 0 || width < 0 || channels < 0)
        throw std::invalid_argument("Tensor: negative dimension");
    h_ = height;
    w_ = width;
    c_ = channels;
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Tensor Tensor::from_data(int height, int width, int channels, std::vector<double> values) {
    Tensor t;
    if (height < 0 || width < 0 || channels < 0)
        throw std::invalid_argument("Tensor: negative dimension");
    if (values.size() != static_cast<std::size_t>(height) * width * channels)
        throw std::invalid_argument("Tensor: data length does not match dimensions");
    t.h_ = height;
    t.w_ = width;
    t.c_ = channels;
    t.data_ = std::move(values);
    return t;
}

std::string Tensor::shape_str() const {
    return std::to_string(h_) + "x" + std::to_string(w_) + "x" + std::to_string(c_);
}

namespace ops {

Broadcast broadcast_kind(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return Broadcast::kSame;
    if (b.size() == 1) return Broadcast::kScalarB;
    if (a.size() == 1) return Broadcast::kScalarA;
    if (a.height() == b.height() && a.width() == b.width()) {
        if (b.channels() == 1 && a.channels() > 1) return Broadcast::kChannelB;
        if (a.channels() == 1 && b.channels() > 1) return Broadcast::kChannelA;
    }
    throw std::invalid_argument("elementwise op: incompatible shapes " + a.shape_str() +
                                " vs " + b.shape_str());
}

namespace {

const Tensor& out_template(const Tensor& a, const Tensor& b, Broadcast kind) {
    return (kind == Broadcast::kScalarA || kind == Broadcast::kChannelA) ? b : a;
}

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, F&& f) {
    const Broadcast kind = broadcast_kind(a, b);
    const Tensor& shape = out_template(a, b, kind);
    Tensor out(shape.height(), shape.width(), shape.channels());
    for_each_broadcast(a, b, kind, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = f(a[ia], b[ib]);
    });
    return out;
}

template <class F>
Tensor unary_op(const Tensor& a, F&& f) {
    Tensor out(a.height(), a.width(), a.channels());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, [](double x, double y) { return x * y; });
}

double safe_denom(double b, double eps) {
    const double mag = std::fabs(b) < eps ? eps : std::fabs(b);
    return b < 0.0 ? -mag : mag;
}

Tensor safe_div(const Tensor& a, const Tensor& b, double eps) {
    return binary_op(a, b, [eps](double x, double y) { return x / safe_denom(y, eps); });
}

Tensor scale(const Tensor& a, double factor) {
    return unary_op(a, [factor](double x) { return factor * x; });
}

Tensor affine(const Tensor& a, double mul, double add) {
    return unary_op(a, [mul, add](double x) { return mul * x + add; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); });
}

Tensor clamp01(const Tensor& a) { return clamp(a, 0.0, 1.0); }

Tensor square(const Tensor& a) {
    return unary_op(a, [](double x) { return x * x; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); });
}

Tensor log(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor softplus(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); });
}

Tensor tanh(const Tensor& a) {
    return unary_op(a, [](double x) { return std::tanh(x); });
}

Tensor abs(const Tensor& a) {
    return unary_op(a, [](double x) { return std::fabs(x); });
}

int reflect_index(int i, int n) {
    if (n <= 0) throw std::invalid_argument("reflect_index: empty extent");
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        else i = 2 * (n - 1) - i;
    }
    return i;
}

void conv2d_check(const Tensor& x, const Tensor& kernel, int out_channels) {
    if (kernel.height() % 2 == 0 || kernel.width() % 2 == 0)
        throw std::invalid_argument("conv2d: kernel sides must be odd, got " +
                                    kernel.shape_str());
    if (out_channels < 1) throw std::invalid_argument("conv2d: out_channels must be >= 1");
    if (kernel.channels() != x.channels() * out_channels)
        throw std::invalid_argument("conv2d: kernel has " +
                                    std::to_string(kernel.channels()) +
                                    " channels, expected in*out = " +
                                    std::to_string(x.channels() * out_channels));
}

std::vector<int> reflect_map(int extent, int taps) {
    const int pad = taps / 2;
    std::vector<int> map(static_cast<std::size_t>(extent) * taps);
    for (int p = 0; p < extent; ++p)
        for (int t = 0; t < taps; ++t)
            map[static_cast<std::size_t>(p) * taps + t] = reflect_index(p + t - pad, extent);
    return map;
}

// Per-pixel patch layout used by the packed convolution paths: for output
// pixel xo, the patch holds x at every (tap i, tap j, channel ci) in order
// i*kw*cin + j*cin + ci. The transposed kernel kt is indexed [co][same].
void conv2d_pack_row(const Tensor& x, const std::vector<int>& ymap,
                     const std::vector<int>& xmap, int kh, int kw, int y, double* patch) {
    const int w = x.width(), cin = x.channels();
    const double* xd = x.values().data();
    const int patch_len = kh * kw * cin;
    for (int i = 0; i < kh; ++i) {
        const double* xrow =
            xd + static_cast<std::size_t>(ymap[static_cast<std::size_t>(y) * kh + i]) * w * cin;
        for (int xo = 0; xo < w; ++xo) {
            double* dst = patch + static_cast<std::size_t>(xo) * patch_len +
                          static_cast<std::size_t>(i) * kw * cin;
            const int* cols = xmap.data() + static_cast<std::size_t>(xo) * kw;
            for (int j = 0; j < kw; ++j) {
                const double* src = xrow + static_cast<std::size_t>(cols[j]) * cin;
                for (int ci = 0; ci < cin; ++ci) dst[j * cin + ci] = src[ci];
            }
        }
    }
}

namespace {

// The kernel's native layout is [tap][co]; accumulating all cout outputs
// together gives one independent sum chain per output channel while keeping
// each output's tap order fixed. Compile-time channel counts let the inner
// loops unroll; results are bit-identical across the specializations.
template <int COUT>
void conv2d_run(const Tensor& x, const Tensor& kernel, int cout_rt, Tensor& out) {
    const int kh = kernel.height(), kw = kernel.width();
    const int cin = x.channels();
    const int h = x.height(), w = x.width();
    const int cout = COUT > 0 ? COUT : cout_rt;
    const int patch_len = kh * kw * cin;
    const std::vector<int> ymap = reflect_map(h, kh);
    const std::vector<int> xmap = reflect_map(w, kw);
    std::vector<double> patch(static_cast<std::size_t>(w) * patch_len);
    std::vector<double> acc_dyn(COUT > 0 ? 0 : cout);

    const double* __restrict kd = kernel.values().data();
    double* od = out.values().data();
    for (int y = 0; y < h; ++y) {
        conv2d_pack_row(x, ymap, xmap, kh, kw, y, patch.data());
        double* orow = od + static_cast<std::size_t>(y) * w * cout;
        for (int xo = 0; xo < w; ++xo) {
            const double* __restrict p = patch.data() + static_cast<std::size_t>(xo) * patch_len;
            double acc_fixed[COUT > 0 ? COUT : 1];
            double* __restrict acc = COUT > 0 ? acc_fixed : acc_dyn.data();
            for (int co = 0; co < cout; ++co) acc[co] = 0.0;
            for (int t = 0; t < patch_len; ++t) {
                const double v = p[t];
                const double* __restrict kv = kd + static_cast<std::size_t>(t) * cout;
                for (int co = 0; co < cout; ++co) acc[co] += v * kv[co];
            }
            double* opix = orow + static_cast<std::size_t>(xo) * cout;
            for (int co = 0; co < cout; ++co) opix[co] = acc[co];
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int out_channels) {
    conv2d_check(x, kernel, out_channels);
    Tensor out(x.height(), x.width(), out_channels);
    switch (out_channels) {
    case 1: conv2d_run<1>(x, kernel, 1, out); break;
    case 3: conv2d_run<3>(x, kernel, 3, out); break;
    case 6: conv2d_run<6>(x, kernel, 6, out); break;
    default: conv2d_run<0>(x, kernel, out_channels, out); break;
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument("concat_channels: spatial dims differ, " + a.shape_str() +
                                    " vs " + b.shape_str());
    const int ca = a.channels(), cb = b.channels();
    Tensor out(a.height(), a.width(), ca + cb);
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            for (int c = 0; c < ca; ++c) out.at(y, x, c) = a.at(y, x, c);
            for (int c = 0; c < cb; ++c) out.at(y, x, ca + c) = b.at(y, x, c);
        }
    return out;
}

Tensor channel_mean(const Tensor& a) {
    Tensor out(a.height(), a.width(), 1);
    const double inv = 1.0 / a.channels();
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            double s = 0.0;
            for (int c = 0; c < a.channels(); ++c) s += a.at(y, x, c);
            out.at(y, x, 0) = s * inv;
        }
    return out;
}

Tensor mask_targets(const Tensor& m) {
    return unary_op(m, [](double v) {
        if (v >= 0.1 && v < 0.4) return 0.1;
        if (v > 0.6 && v <= 0.9) return 0.9;
        return v;
    });
}

Tensor mask_gate(const Tensor& m) {
    return unary_op(m, [](double v) { return (v >= 0.4 && v <= 0.6) ? 0.0 : 1.0; });
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

double mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    return sum(a) / static_cast<double>(a.size());
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

Tensor threshold(const Tensor& a, double t) {
    return unary_op(a, [t](double x) { return x > t ? 1.0 : 0.0; });
}

}  // namespace ops
}  // namespace unfoldseg
