#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace unfoldseg {

/// Dense row-major H x W x C array of doubles. Images use C in {1, 3};
/// masks are the single-channel case. Once a tensor leaves its producer it
/// is treated as an immutable value; operations return fresh tensors, so
/// read-only sharing across threads is safe.
class Tensor {
public:
    Tensor() = default;
    Tensor(int height, int width, int channels, double fill = 0.0);
    static Tensor from_data(int height, int width, int channels, std::vector<double> values);

    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    int channels() const noexcept { return c_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double at(int y, int x, int c = 0) const { return data_[offset(y, x, c)]; }
    double& at(int y, int x, int c = 0) { return data_[offset(y, x, c)]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    const std::vector<double>& values() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }

    bool same_shape(const Tensor& other) const noexcept {
        return h_ == other.h_ && w_ == other.w_ && c_ == other.c_;
    }
    std::string shape_str() const;

private:
    std::size_t offset(int y, int x, int c) const noexcept {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(w_) +
                static_cast<std::size_t>(x)) * static_cast<std::size_t>(c_) +
               static_cast<std::size_t>(c);
    }
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

namespace ops {

/// Guard floor applied to denominators in safe_div.
inline constexpr double kDivEps = 1e-6;

/// Elementwise broadcast relations accepted by the binary ops.
enum class Broadcast {
    kSame,      // identical shapes
    kScalarB,   // b is a single element, applied across a
    kScalarA,   // a is a single element, applied across b
    kChannelB,  // b is single-channel with a's spatial dims, replicated per channel
    kChannelA,  // a is single-channel with b's spatial dims
};

/// Classifies how a and b combine; throws std::invalid_argument when the
/// shapes are incompatible.
Broadcast broadcast_kind(const Tensor& a, const Tensor& b);

/// Visits every output element of a broadcast binary op.
/// f(out_index, a_index, b_index) runs in row-major output order.
template <class F>
void for_each_broadcast(const Tensor& a, const Tensor& b, Broadcast kind, F&& f) {
    switch (kind) {
    case Broadcast::kSame:
        for (std::size_t i = 0; i < a.size(); ++i) f(i, i, i);
        break;
    case Broadcast::kScalarB:
        for (std::size_t i = 0; i < a.size(); ++i) f(i, i, std::size_t{0});
        break;
    case Broadcast::kScalarA:
        for (std::size_t i = 0; i < b.size(); ++i) f(i, std::size_t{0}, i);
        break;
    case Broadcast::kChannelB: {
        const std::size_t ch = static_cast<std::size_t>(a.channels());
        for (std::size_t i = 0; i < a.size(); ++i) f(i, i, i / ch);
        break;
    }
    case Broadcast::kChannelA: {
        const std::size_t ch = static_cast<std::size_t>(b.channels());
        for (std::size_t i = 0; i < b.size(); ++i) f(i, i / ch, i);
        break;
    }
    }
}

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Division with a sign-preserving denominator floor:
/// a / (sign(b) * max(|b|, eps)); sign(0) counts as +1, so the result is
/// always finite.
Tensor safe_div(const Tensor& a, const Tensor& b, double eps = kDivEps);
double safe_denom(double b, double eps);

Tensor scale(const Tensor& a, double factor);
Tensor affine(const Tensor& a, double mul, double add);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor clamp01(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);

/// Reflect-padded 2D convolution with output spatial dims equal to the
/// input's. The kernel tensor is (kh, kw, in_ch*out_ch); the weight linking
/// input channel ci to output channel co at tap (i, j) lives at
/// kernel.at(i, j, ci*out_ch + co). Kernel sides must be odd.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int out_channels = 1);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor channel_mean(const Tensor& a);  // H x W x C -> H x W x 1

/// Snapped targets of the uncertainty-removal mapping: values in [0.1, 0.4)
/// map to 0.1, values in (0.6, 0.9] map to 0.9, everything else is kept.
Tensor mask_targets(const Tensor& m);
/// Certainty gate of the uncertainty-removal mapping: 0 on [0.4, 0.6],
/// 1 elsewhere.
Tensor mask_gate(const Tensor& m);

double sum(const Tensor& a);
double mean(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Binary indicator of a > t.
Tensor threshold(const Tensor& a, double t);

/// Mirror-fold an index into [0, n) about the edge samples (no duplicated
/// border pixel). n must be positive.
int reflect_index(int i, int n);

/// Reflected source index for every (position, tap) pair; row-major
/// position*taps table shared by the convolution forward and backward.
std::vector<int> reflect_map(int extent, int taps);
void conv2d_check(const Tensor& x, const Tensor& kernel, int out_channels);

/// Per-row patch packing of the convolution input, shared with the tape's
/// backward pass. The patch for output pixel xo holds the sources in
/// (tap i, tap j, channel) order.
void conv2d_pack_row(const Tensor& x, const std::vector<int>& ymap,
                     const std::vector<int>& xmap, int kh, int kw, int y, double* patch);

}  // namespace ops
}  // namespace unfoldseg
