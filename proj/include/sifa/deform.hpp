#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sifa/tensor.hpp"

// Motion-guided deformable sampling: temporal difference, motion saliency,
// offset estimation and bilinear re-sampling of neighbor features.
namespace sifa::deform {

// Fractional sample position in pixels of the feature map.
struct SamplePos {
    double row = 0.0;
    double col = 0.0;
    friend bool operator==(const SamplePos&, const SamplePos&) = default;
};

template <typename T>
struct MotionSaliencyMap {
    BasicTensor<T> values;  // C x H x W
};

// Channel 2g holds the row offset and channel 2g+1 the column offset of
// grid point g, grid points enumerated row-major.
template <typename T>
struct OffsetField {
    BasicTensor<T> values;  // 2k^2 x H x W
    std::size_t k = 1;

    static OffsetField zeros(std::size_t k, std::size_t h, std::size_t w);
    std::size_t height() const { return values.extent(1); }
    std::size_t width() const { return values.extent(2); }
    T row_offset(std::size_t g, std::size_t r, std::size_t c) const {
        return values[((2 * g) * height() + r) * width() + c];
    }
    T col_offset(std::size_t g, std::size_t r, std::size_t c) const {
        return values[((2 * g + 1) * height() + r) * width() + c];
    }
    void validate() const;
};

template <typename T>
struct NeighborSet {
    BasicTensor<T> keys;  // C x k^2
    BasicTensor<T> vals;  // C x k^2
    std::vector<SamplePos> coords;
};

inline std::size_t grid_size(std::size_t k) { return k * k; }

// Regular k x k grid displacements {-(k-1)/2 .. (k-1)/2}^2, row-major.
std::vector<std::pair<int, int>> regular_grid(std::size_t k);

void require_odd(std::size_t k);

template <typename T>
BasicTensor<T> temporal_difference(const BasicTensor<T>& f_t, const BasicTensor<T>& f_next);

template <typename T>
MotionSaliencyMap<T> motion_saliency(const BasicTensor<T>& delta, const BasicTensor<T>& f_next);

template <typename T>
OffsetField<T> estimate_offsets(const BasicTensor<T>& source, const BasicConv2dParams<T>& estimator, std::size_t k);

// Corner weights of the separable triangular kernel. The cell is chosen as
// ceil(p) - 1 so that integer positions take the left-limit derivative.
struct BilinearStencil {
    std::ptrdiff_t r0 = 0;
    std::ptrdiff_t c0 = 0;
    double fr = 0.0;  // weight of row r0 + 1
    double fc = 0.0;  // weight of col c0 + 1
};

BilinearStencil bilinear_stencil(SamplePos pos);

// Samples all channels at a fractional position; outside the frame reads zero.
template <typename T>
std::vector<T> bilinear_sample(const BasicTensor<T>& frame, SamplePos pos);

template <typename T>
void bilinear_sample_into(const BasicTensor<T>& frame, SamplePos pos, std::span<T> out, std::size_t stride = 1);

// Accumulates grad_out into the frame gradient and returns d/d(row, col).
template <typename T>
SamplePos bilinear_backward(const BasicTensor<T>& frame, SamplePos pos, std::span<const T> grad_out,
                            BasicTensor<T>* grad_frame, std::size_t stride = 1);

template <typename T>
NeighborSet<T> extract_neighbors(const BasicTensor<T>& frame, std::size_t row, std::size_t col, std::size_t k,
                                 const OffsetField<T>* offsets);

// Same as extract_neighbors but reuses the buffers of `out`.
template <typename T>
void extract_neighbors_into(const BasicTensor<T>& frame, std::size_t row, std::size_t col, std::size_t k,
                            const OffsetField<T>* offsets, NeighborSet<T>& out);

}  // namespace sifa::deform
