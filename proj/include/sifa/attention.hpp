#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sifa/deform.hpp"
#include "sifa/tensor.hpp"

// Inter-frame attention for a single query and for whole frames:
// correlation, weighting, aggregation and the residual enhancement.
namespace sifa::attn {

enum class NormMode { raw, softmax };

struct AttentionWeights {
    std::vector<double> values;  // one per neighbor
    NormMode mode = NormMode::raw;
};

template <typename T>
struct QueryResult {
    std::vector<T> aggregated;
    std::vector<T> enhanced;
};

template <typename T>
AttentionWeights correlate(std::span<const T> query, const BasicTensor<T>& keys);

// Raw mode is the identity; softmax mode is softmax(values / sqrt(C)) with max subtraction.
AttentionWeights normalize(const AttentionWeights& w, NormMode mode, std::size_t channels);

template <typename T>
std::vector<T> aggregate(const AttentionWeights& w, const BasicTensor<T>& vals);

template <typename T>
std::vector<T> enhance(std::span<const T> query, std::span<const T> aggregated);

template <typename T>
QueryResult<T> attend_query(std::span<const T> query, const deform::NeighborSet<T>& neighbors, NormMode mode);

// ---- frame-level kernels -------------------------------------------------

// One neighbor source for a query frame: a frame to sample from and an
// optional 2k^2 x H x W offset tensor laid out as in deform::OffsetField
// (null means the regular grid).
template <typename T>
struct Source {
    const BasicTensor<T>* frame = nullptr;
    const BasicTensor<T>* offsets = nullptr;
};

// Weights and sample coordinates captured for one designated query.
struct AttentionProbe {
    std::size_t row = 0;
    std::size_t col = 0;
    std::vector<deform::SamplePos> coords;
    std::vector<double> weights;
};

// Forward state kept for the backward pass of attend_frame.
template <typename T>
struct AttendCache {
    std::size_t channels = 0, height = 0, width = 0, neighbors = 0;
    std::vector<T> samples;                  // [query][neighbor][channel]
    std::vector<double> weights;             // [query][neighbor]
    std::vector<deform::SamplePos> coords;   // [query][neighbor]
};

// Aggregated neighbor features A for every query location of `query`. All
// sources share one normalization over their concatenated k^2 neighbor sets.
template <typename T>
BasicTensor<T> attend_frame(const BasicTensor<T>& query, std::span<const Source<T>> sources, std::size_t k,
                            NormMode mode, AttendCache<T>* cache = nullptr, AttentionProbe* probe = nullptr);

template <typename T>
struct AttendGrads {
    BasicTensor<T> query;
    std::vector<BasicTensor<T>> frames;   // one per source
    std::vector<BasicTensor<T>> offsets;  // one per source; empty for regular sources
};

template <typename T>
AttendGrads<T> attend_frame_backward(const BasicTensor<T>& query, std::span<const Source<T>> sources, std::size_t k,
                                     NormMode mode, const AttendCache<T>& cache, const BasicTensor<T>& grad_out);

// Per-location correlation vector over the regular grid: k^2 x H x W.
template <typename T>
BasicTensor<T> correlation_frame(const BasicTensor<T>& query, const BasicTensor<T>& source, std::size_t k,
                                 NormMode mode);

template <typename T>
struct CorrelationGrads {
    BasicTensor<T> query;
    BasicTensor<T> source;
};

template <typename T>
CorrelationGrads<T> correlation_frame_backward(const BasicTensor<T>& query, const BasicTensor<T>& source,
                                               std::size_t k, NormMode mode, const BasicTensor<T>& grad_out);

}  // namespace sifa::attn
