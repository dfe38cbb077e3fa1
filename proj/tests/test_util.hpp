#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "sifa/tensor.hpp"

namespace sifa::test {

template <typename T, typename Rng>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    BasicTensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data()) v = static_cast<T>(d(rng));
    return t;
}

template <typename A, typename B>
double max_abs_diff(const BasicTensor<A>& a, const BasicTensor<B>& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

// Plain quadruple loop, zero padding, double accumulation.
template <typename T>
BasicTensor<T> conv2d_loop(const BasicTensor<T>& x, const BasicConv2dParams<T>& p) {
    const std::size_t cin = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t cout = p.weight.extent(0), kh = p.weight.extent(2), kw = p.weight.extent(3);
    const long pad = static_cast<long>(p.padding);
    BasicTensor<T> y({cout, h, w});
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                double acc = p.bias[o];
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t a = 0; a < kh; ++a)
                        for (std::size_t b = 0; b < kw; ++b) {
                            const long r = long(i) + long(a) - pad, s = long(j) + long(b) - pad;
                            if (r < 0 || s < 0 || r >= long(h) || s >= long(w)) continue;
                            acc += double(p.weight.at({o, c, a, b})) * double(x.at({c, std::size_t(r), std::size_t(s)}));
                        }
                y.at({o, i, j}) = static_cast<T>(acc);
            }
    return y;
}

}  // namespace sifa::test
