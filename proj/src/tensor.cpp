#include "sifa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sifa {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw ShapeError("tensor rank must be 1..4, got shape " + shape_str(shape));
    }
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor extents must be >= 1, got shape " + shape_str(shape));
    }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
    BasicTensor t(std::move(shape));
    t.fill(value);
    return t;
}

template <typename T>
std::size_t BasicTensor<T>::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
}

template <typename T>
std::size_t BasicTensor<T>::index(std::span<const std::size_t> coords) const {
    if (coords.size() != shape_.size()) {
        throw ShapeError("index rank " + std::to_string(coords.size()) + " does not match shape " +
                         shape_str(shape_));
    }
    std::size_t flat = 0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        if (coords[i] >= shape_[i]) throw ShapeError("index out of range for shape " + shape_str(shape_));
        flat = flat * shape_[i] + coords[i];
    }
    return flat;
}

template <typename T>
std::vector<std::size_t> BasicTensor<T>::coords(std::size_t flat) const {
    if (flat >= data_.size()) throw ShapeError("flat index out of range");
    std::vector<std::size_t> c(shape_.size());
    for (std::size_t i = shape_.size(); i-- > 0;) {
        c[i] = flat % shape_[i];
        flat /= shape_[i];
    }
    return c;
}

template <typename T>
void BasicTensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* where) {
    for (T v : t.data()) {
        if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite value");
    }
}

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "elementwise");
    BasicTensor<T> c(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* pc = c.ptr();
    const std::size_t n = a.size();
    switch (op) {
        case ElementwiseOp::add:
            for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i];
            break;
        case ElementwiseOp::sub:
            for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] - pb[i];
            break;
        case ElementwiseOp::mul:
            for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i];
            break;
    }
    require_finite(c, "elementwise");
    return c;
}

template <typename T>
T sigmoid(T x) noexcept {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
    BasicTensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = sigmoid(a[i]);
    require_finite(out, "sigmoid");
    return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    BasicTensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
    return out;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return static_cast<T>(acc);
}

template <typename T>
double sum(const BasicTensor<T>& a) {
    double acc = 0.0;
    for (T v : a.data()) acc += v;
    return acc;
}

template <typename T>
BasicConv2dParams<T> BasicConv2dParams<T>::zeros(std::size_t out_ch, std::size_t in_ch, std::size_t kernel) {
    if (kernel % 2 == 0) throw ShapeError("conv2d kernel must be odd");
    return {BasicTensor<T>({out_ch, in_ch, kernel, kernel}), BasicTensor<T>({out_ch}), (kernel - 1) / 2};
}

template <typename T>
void BasicConv2dParams<T>::validate() const {
    if (weight.rank() != 4) throw ShapeError("conv2d weight must be rank 4, got " + shape_str(weight.shape()));
    if (bias.rank() != 1 || bias.extent(0) != weight.extent(0)) {
        throw ShapeError("conv2d bias must have out_ch elements");
    }
    if (kernel_h() % 2 == 0 || kernel_w() % 2 == 0) throw ShapeError("conv2d kernel must be odd");
    if (kernel_h() != kernel_w() || padding != (kernel_h() - 1) / 2) {
        throw ShapeError("conv2d requires a square kernel with padding (k-1)/2");
    }
}

namespace {

struct ConvGeometry {
    std::size_t cin, cout, h, w, k, pad;
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& x, const BasicTensor<T>& weight) {
    if (weight.rank() != 4) throw ShapeError("conv2d weight must be rank 4, got " + shape_str(weight.shape()));
    const std::size_t k = weight.extent(2);
    if (k % 2 == 0 || weight.extent(3) != k) throw ShapeError("conv2d kernel must be odd and square");
    if (x.rank() != 3) throw ShapeError("conv2d input must be C x H x W, got " + shape_str(x.shape()));
    if (x.extent(0) != weight.extent(1)) {
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x.extent(0)) +
                         " channels, weight expects " + std::to_string(weight.extent(1)));
    }
    return {weight.extent(1), weight.extent(0), x.extent(1), x.extent(2), k, (k - 1) / 2};
}

// Visits every (output row, source row, column span) for one kernel tap.
template <typename F>
void for_each_tap_row(const ConvGeometry& g, std::size_t ky, std::size_t kx, F&& f) {
    const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(g.pad);
    const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.h);
    const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(g.w);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(w, w - dx);
    if (x0 >= x1) return;
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        const std::ptrdiff_t sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        f(static_cast<std::size_t>(y), static_cast<std::size_t>(sy), static_cast<std::size_t>(x0),
          static_cast<std::size_t>(x1), dx);
    }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    const ConvGeometry g = conv_geometry(x, weight);
    if (bias.rank() != 1 || bias.extent(0) != g.cout) throw ShapeError("conv2d bias must have out_ch elements");
    BasicTensor<T> out({g.cout, g.h, g.w});
    const std::size_t plane = g.h * g.w;
    const T* in = x.ptr();
    const T* wt = weight.ptr();
    std::vector<double> acc(plane);  // per output channel, cast once at the end
    for (std::size_t o = 0; o < g.cout; ++o) {
        double* dst = acc.data();
        std::fill(dst, dst + plane, static_cast<double>(bias[o]));
        for (std::size_t i = 0; i < g.cin; ++i) {
            const T* src = in + i * plane;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const T wv = wt[((o * g.cin + i) * g.k + ky) * g.k + kx];
                    if (wv == T(0)) continue;
                    for_each_tap_row(g, ky, kx, [&](std::size_t y, std::size_t sy, std::size_t x0, std::size_t x1,
                                                    std::ptrdiff_t dx) {
                        double* drow = dst + y * g.w;
                        const T* srow = src + sy * g.w + dx;
                        for (std::size_t xx = x0; xx < x1; ++xx) drow[xx] += static_cast<double>(wv) * srow[xx];
                    });
                }
            }
        }
        std::transform(acc.begin(), acc.end(), out.ptr() + o * plane, [](double v) { return static_cast<T>(v); });
    }
    require_finite(out, "conv2d");
    return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicConv2dParams<T>& p) {
    p.validate();
    return conv2d(x, p.weight, p.bias);
}

template <typename T>
void conv2d_backward_into(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                          BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight, BasicTensor<T>* grad_bias) {
    const ConvGeometry g = conv_geometry(x, weight);
    if (grad_out.shape() != Shape{g.cout, g.h, g.w}) {
        throw ShapeError("conv2d_backward: grad_out shape " + shape_str(grad_out.shape()));
    }
    const std::size_t plane = g.h * g.w;
    const T* in = x.ptr();
    const T* wt = weight.ptr();
    for (std::size_t o = 0; o < g.cout; ++o) {
        const T* go = grad_out.ptr() + o * plane;
        if (grad_bias) {
            double b = 0.0;
            for (std::size_t j = 0; j < plane; ++j) b += go[j];
            (*grad_bias)[o] += static_cast<T>(b);
        }
        for (std::size_t i = 0; i < g.cin; ++i) {
            const T* src = in + i * plane;
            T* gin = grad_input ? grad_input->ptr() + i * plane : nullptr;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const std::size_t widx = ((o * g.cin + i) * g.k + ky) * g.k + kx;
                    const T wv = wt[widx];
                    double acc = 0.0;
                    for_each_tap_row(g, ky, kx, [&](std::size_t y, std::size_t sy, std::size_t x0, std::size_t x1,
                                                    std::ptrdiff_t dx) {
                        const T* grow = go + y * g.w;
                        const T* srow = src + sy * g.w + dx;
                        if (grad_weight) {
                            T row_acc = T(0);
                            for (std::size_t xx = x0; xx < x1; ++xx) row_acc += grow[xx] * srow[xx];
                            acc += row_acc;
                        }
                        if (gin && wv != T(0)) {
                            T* girow = gin + sy * g.w + dx;
                            for (std::size_t xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx];
                        }
                    });
                    if (grad_weight) (*grad_weight)[widx] += static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicConv2dParams<T>& p,
                               const BasicTensor<T>& grad_out) {
    p.validate();
    Conv2dGrads<T> grads{BasicTensor<T>(x.shape()), BasicTensor<T>(p.weight.shape()), BasicTensor<T>(p.bias.shape())};
    conv2d_backward_into(x, p.weight, grad_out, &grads.input, &grads.weight, &grads.bias);
    return grads;
}

#define SIFA_INSTANTIATE(T)                                                                            \
    template class BasicTensor<T>;                                                                      \
    template struct BasicConv2dParams<T>;                                                               \
    template void require_finite<T>(const BasicTensor<T>&, const char*);                                \
    template BasicTensor<T> elementwise<T>(ElementwiseOp, const BasicTensor<T>&, const BasicTensor<T>&); \
    template T sigmoid<T>(T) noexcept;                                                                  \
    template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                                          \
    template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                             \
    template T dot<T>(std::span<const T>, std::span<const T>);                                          \
    template double sum<T>(const BasicTensor<T>&);                                                      \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicConv2dParams<T>&);              \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
    template void conv2d_backward_into<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                          BasicTensor<T>*, BasicTensor<T>*, BasicTensor<T>*);             \
    template Conv2dGrads<T> conv2d_backward<T>(const BasicTensor<T>&, const BasicConv2dParams<T>&,      \
                                               const BasicTensor<T>&);

SIFA_INSTANTIATE(float)
SIFA_INSTANTIATE(double)

#undef SIFA_INSTANTIATE

}  // namespace sifa
