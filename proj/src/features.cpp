#include "unfoldseg/features.hpp"

#include <cmath>
#include <stdexcept>

namespace unfoldseg {

namespace {

Tensor luma_of(const Tensor& image) {
    if (image.channels() == 1) return image;
    return ops::channel_mean(image);
}

Tensor box3(const Tensor& t) {
    Tensor kernel(3, 3, 1, 1.0 / 9.0);
    return ops::conv2d(t, kernel, 1);
}

Tensor gradient_magnitude(const Tensor& t) {
    const int h = t.height(), w = t.width();
    Tensor out(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = 0.5 * (t.at(y, ops::reflect_index(x + 1, w), 0) -
                                     t.at(y, ops::reflect_index(x - 1, w), 0));
            const double gy = 0.5 * (t.at(ops::reflect_index(y + 1, h), x, 0) -
                                     t.at(ops::reflect_index(y - 1, h), x, 0));
            out.at(y, x, 0) = 0.5 * std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

Tensor local_variance5(const Tensor& t) {
    Tensor kernel(5, 5, 1, 1.0 / 25.0);
    const Tensor m1 = ops::conv2d(t, kernel, 1);
    const Tensor m2 = ops::conv2d(ops::square(t), kernel, 1);
    Tensor out(t.height(), t.width(), 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = m2[i] - m1[i] * m1[i];
        out[i] = 4.0 * (v > 0.0 ? v : 0.0);
    }
    return out;
}

}  // namespace

Tensor feature_bank(const Tensor& image) {
    if (image.channels() != 1 && image.channels() != 3)
        throw std::invalid_argument("feature_bank: image must have 1 or 3 channels");
    const Tensor luma = luma_of(image);
    Tensor out(image.height(), image.width(), kFeatureChannels);
    const Tensor g1 = gradient_magnitude(luma);
    const Tensor g2 = gradient_magnitude(box3(luma));
    const Tensor var = local_variance5(luma);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) =
                    image.channels() == 3 ? image.at(y, x, c) : luma.at(y, x, 0);
            out.at(y, x, 3) = g1.at(y, x, 0);
            out.at(y, x, 4) = g2.at(y, x, 0);
            out.at(y, x, 5) = var.at(y, x, 0);
        }
    return out;
}

}  // namespace unfoldseg
