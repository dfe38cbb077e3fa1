#include "sifa/deform.hpp"

#include <cmath>
#include <string>

namespace sifa::deform {

std::vector<std::pair<int, int>> regular_grid(std::size_t k) {
    require_odd(k);
    const int half = static_cast<int>(k - 1) / 2;
    std::vector<std::pair<int, int>> grid;
    grid.reserve(k * k);
    for (int a = -half; a <= half; ++a) {
        for (int b = -half; b <= half; ++b) grid.emplace_back(a, b);
    }
    return grid;
}

void require_odd(std::size_t k) {
    if (k == 0 || k % 2 == 0) throw ShapeError("region size k must be odd and >= 1, got " + std::to_string(k));
}

template <typename T>
OffsetField<T> OffsetField<T>::zeros(std::size_t k, std::size_t h, std::size_t w) {
    require_odd(k);
    return {BasicTensor<T>({2 * k * k, h, w}), k};
}

template <typename T>
void OffsetField<T>::validate() const {
    require_odd(k);
    if (values.rank() != 3 || values.extent(0) != 2 * k * k) {
        throw ShapeError("offset field for k=" + std::to_string(k) + " needs " + std::to_string(2 * k * k) +
                         " channels, got shape " + shape_str(values.shape()));
    }
}

template <typename T>
BasicTensor<T> temporal_difference(const BasicTensor<T>& f_t, const BasicTensor<T>& f_next) {
    return sub(f_next, f_t);
}

template <typename T>
MotionSaliencyMap<T> motion_saliency(const BasicTensor<T>& delta, const BasicTensor<T>& f_next) {
    if (delta.shape() != f_next.shape()) {
        throw ShapeError("motion_saliency: shape mismatch " + shape_str(delta.shape()) + " vs " +
                         shape_str(f_next.shape()));
    }
    return {mul(sigmoid(delta), f_next)};
}

template <typename T>
OffsetField<T> estimate_offsets(const BasicTensor<T>& source, const BasicConv2dParams<T>& estimator, std::size_t k) {
    require_odd(k);
    if (estimator.weight.rank() != 4 || estimator.out_channels() != 2 * k * k) {
        throw ShapeError("offset estimator must have 2k^2 = " + std::to_string(2 * k * k) + " output channels");
    }
    return {conv2d(source, estimator), k};
}

BilinearStencil bilinear_stencil(SamplePos pos) {
    if (!std::isfinite(pos.row) || !std::isfinite(pos.col)) throw NumericError("bilinear_sample: non-finite position");
    BilinearStencil s;
    const double rc = std::ceil(pos.row) - 1.0;
    const double cc = std::ceil(pos.col) - 1.0;
    s.r0 = static_cast<std::ptrdiff_t>(rc);
    s.c0 = static_cast<std::ptrdiff_t>(cc);
    s.fr = pos.row - rc;
    s.fc = pos.col - cc;
    return s;
}

namespace {

template <typename T>
void require_frame(const BasicTensor<T>& frame) {
    if (frame.rank() != 3) throw ShapeError("expected a C x H x W frame, got " + shape_str(frame.shape()));
}

struct Corner {
    std::size_t offset;  // r * W + c
    bool inside;
};

inline Corner corner(std::ptrdiff_t r, std::ptrdiff_t c, std::ptrdiff_t h, std::ptrdiff_t w) {
    const bool inside = r >= 0 && r < h && c >= 0 && c < w;
    return {inside ? static_cast<std::size_t>(r * w + c) : 0, inside};
}

}  // namespace

template <typename T>
void bilinear_sample_into(const BasicTensor<T>& frame, SamplePos pos, std::span<T> out, std::size_t stride) {
    require_frame(frame);
    const std::size_t channels = frame.extent(0);
    const auto h = static_cast<std::ptrdiff_t>(frame.extent(1));
    const auto w = static_cast<std::ptrdiff_t>(frame.extent(2));
    const std::size_t plane = frame.extent(1) * frame.extent(2);
    const BilinearStencil s = bilinear_stencil(pos);
    const Corner c00 = corner(s.r0, s.c0, h, w);
    const Corner c01 = corner(s.r0, s.c0 + 1, h, w);
    const Corner c10 = corner(s.r0 + 1, s.c0, h, w);
    const Corner c11 = corner(s.r0 + 1, s.c0 + 1, h, w);
    const double w00 = (1.0 - s.fr) * (1.0 - s.fc);
    const double w01 = (1.0 - s.fr) * s.fc;
    const double w10 = s.fr * (1.0 - s.fc);
    const double w11 = s.fr * s.fc;
    const T* base = frame.ptr();
    for (std::size_t ch = 0; ch < channels; ++ch) {
        const T* p = base + ch * plane;
        double acc = 0.0;
        if (c00.inside) acc += w00 * p[c00.offset];
        if (c01.inside) acc += w01 * p[c01.offset];
        if (c10.inside) acc += w10 * p[c10.offset];
        if (c11.inside) acc += w11 * p[c11.offset];
        out[ch * stride] = static_cast<T>(acc);
    }
}

template <typename T>
std::vector<T> bilinear_sample(const BasicTensor<T>& frame, SamplePos pos) {
    require_frame(frame);
    std::vector<T> out(frame.extent(0));
    bilinear_sample_into(frame, pos, std::span<T>(out), 1);
    return out;
}

template <typename T>
SamplePos bilinear_backward(const BasicTensor<T>& frame, SamplePos pos, std::span<const T> grad_out,
                            BasicTensor<T>* grad_frame, std::size_t stride) {
    require_frame(frame);
    const std::size_t channels = frame.extent(0);
    const auto h = static_cast<std::ptrdiff_t>(frame.extent(1));
    const auto w = static_cast<std::ptrdiff_t>(frame.extent(2));
    const std::size_t plane = frame.extent(1) * frame.extent(2);
    const BilinearStencil s = bilinear_stencil(pos);
    const Corner c00 = corner(s.r0, s.c0, h, w);
    const Corner c01 = corner(s.r0, s.c0 + 1, h, w);
    const Corner c10 = corner(s.r0 + 1, s.c0, h, w);
    const Corner c11 = corner(s.r0 + 1, s.c0 + 1, h, w);
    const double w00 = (1.0 - s.fr) * (1.0 - s.fc);
    const double w01 = (1.0 - s.fr) * s.fc;
    const double w10 = s.fr * (1.0 - s.fc);
    const double w11 = s.fr * s.fc;
    double d_row = 0.0;
    double d_col = 0.0;
    const T* base = frame.ptr();
    T* gbase = grad_frame ? grad_frame->ptr() : nullptr;
    for (std::size_t ch = 0; ch < channels; ++ch) {
        const double g = grad_out[ch * stride];
        const T* p = base + ch * plane;
        const double v00 = c00.inside ? p[c00.offset] : 0.0;
        const double v01 = c01.inside ? p[c01.offset] : 0.0;
        const double v10 = c10.inside ? p[c10.offset] : 0.0;
        const double v11 = c11.inside ? p[c11.offset] : 0.0;
        d_row += g * ((1.0 - s.fc) * (v10 - v00) + s.fc * (v11 - v01));
        d_col += g * ((1.0 - s.fr) * (v01 - v00) + s.fr * (v11 - v10));
        if (gbase && g != 0.0) {
            T* gp = gbase + ch * plane;
            if (c00.inside) gp[c00.offset] += static_cast<T>(w00 * g);
            if (c01.inside) gp[c01.offset] += static_cast<T>(w01 * g);
            if (c10.inside) gp[c10.offset] += static_cast<T>(w10 * g);
            if (c11.inside) gp[c11.offset] += static_cast<T>(w11 * g);
        }
    }
    return {d_row, d_col};
}

template <typename T>
void extract_neighbors_into(const BasicTensor<T>& frame, std::size_t row, std::size_t col, std::size_t k,
                            const OffsetField<T>* offsets, NeighborSet<T>& out) {
    require_frame(frame);
    require_odd(k);
    const std::size_t channels = frame.extent(0);
    const std::size_t h = frame.extent(1);
    const std::size_t w = frame.extent(2);
    if (row >= h || col >= w) throw ShapeError("extract_neighbors: query position out of range");
    if (offsets) {
        offsets->validate();
        if (offsets->k != k || offsets->height() != h || offsets->width() != w) {
            throw ShapeError("extract_neighbors: offset field does not match frame/k");
        }
    }
    const std::size_t kk = k * k;
    if (out.keys.shape() != Shape{channels, kk}) out.keys = BasicTensor<T>({channels, kk});
    out.coords.resize(kk);
    const int half = static_cast<int>(k - 1) / 2;
    std::size_t g = 0;
    for (int a = -half; a <= half; ++a) {
        for (int b = -half; b <= half; ++b, ++g) {
            SamplePos pos{static_cast<double>(row) + a, static_cast<double>(col) + b};
            if (offsets) {
                pos.row += offsets->row_offset(g, row, col);
                pos.col += offsets->col_offset(g, row, col);
            }
            out.coords[g] = pos;
            bilinear_sample_into(frame, pos, out.keys.data().subspan(g), kk);
        }
    }
    out.vals = out.keys;
}

template <typename T>
NeighborSet<T> extract_neighbors(const BasicTensor<T>& frame, std::size_t row, std::size_t col, std::size_t k,
                                 const OffsetField<T>* offsets) {
    NeighborSet<T> out;
    extract_neighbors_into(frame, row, col, k, offsets, out);
    return out;
}

#define SIFA_INSTANTIATE(T)                                                                                    \
    template struct OffsetField<T>;                                                                             \
    template BasicTensor<T> temporal_difference<T>(const BasicTensor<T>&, const BasicTensor<T>&);               \
    template MotionSaliencyMap<T> motion_saliency<T>(const BasicTensor<T>&, const BasicTensor<T>&);             \
    template OffsetField<T> estimate_offsets<T>(const BasicTensor<T>&, const BasicConv2dParams<T>&, std::size_t); \
    template std::vector<T> bilinear_sample<T>(const BasicTensor<T>&, SamplePos);                               \
    template void bilinear_sample_into<T>(const BasicTensor<T>&, SamplePos, std::span<T>, std::size_t);         \
    template SamplePos bilinear_backward<T>(const BasicTensor<T>&, SamplePos, std::span<const T>,              \
                                            BasicTensor<T>*, std::size_t);                                     \
    template NeighborSet<T> extract_neighbors<T>(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t,  \
                                                 const OffsetField<T>*);                                        \
    template void extract_neighbors_into<T>(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t,       \
                                            const OffsetField<T>*, NeighborSet<T>&);

SIFA_INSTANTIATE(float)
SIFA_INSTANTIATE(double)

#undef SIFA_INSTANTIATE

}  // namespace sifa::deform
