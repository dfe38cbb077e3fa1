#include "sifa/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sifa::attn {

template <typename T>
AttentionWeights correlate(std::span<const T> query, const BasicTensor<T>& keys) {
    if (keys.rank() != 2 || keys.extent(0) != query.size()) {
        throw ShapeError("correlate: keys must be C x k^2 with C = " + std::to_string(query.size()) + ", got " +
                         shape_str(keys.shape()));
    }
    const std::size_t channels = keys.extent(0);
    const std::size_t n = keys.extent(1);
    AttentionWeights w{std::vector<double>(n, 0.0), NormMode::raw};
    for (std::size_t g = 0; g < n; ++g) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) acc += static_cast<double>(query[c]) * keys[c * n + g];
        w.values[g] = acc;
    }
    return w;
}

namespace {

// In-place softmax(values / sqrt(channels)).
void softmax_scaled(std::span<double> v, std::size_t channels) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    double m = -INFINITY;
    for (double x : v) m = std::max(m, x * scale);
    double total = 0.0;
    for (double& x : v) {
        x = std::exp(x * scale - m);
        total += x;
    }
    for (double& x : v) x /= total;
}

// dz from dw for either normalization, in place.
void normalize_backward(std::span<const double> w, std::span<double> dw, NormMode mode, std::size_t channels) {
    if (mode == NormMode::raw) return;
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    double inner = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) inner += w[j] * dw[j];
    for (std::size_t j = 0; j < w.size(); ++j) dw[j] = w[j] * (dw[j] - inner) * scale;
}

}  // namespace

AttentionWeights normalize(const AttentionWeights& w, NormMode mode, std::size_t channels) {
    AttentionWeights out{w.values, mode};
    if (mode == NormMode::softmax && !out.values.empty()) {
        if (channels == 0) throw ShapeError("normalize: channel count must be positive");
        softmax_scaled(out.values, channels);
    }
    return out;
}

template <typename T>
std::vector<T> aggregate(const AttentionWeights& w, const BasicTensor<T>& vals) {
    if (vals.rank() != 2 || vals.extent(1) != w.values.size()) {
        throw ShapeError("aggregate: vals must be C x " + std::to_string(w.values.size()) + ", got " +
                         shape_str(vals.shape()));
    }
    const std::size_t channels = vals.extent(0);
    const std::size_t n = vals.extent(1);
    std::vector<T> out(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::size_t g = 0; g < n; ++g) acc += w.values[g] * vals[c * n + g];
        out[c] = static_cast<T>(acc);
    }
    return out;
}

template <typename T>
std::vector<T> enhance(std::span<const T> query, std::span<const T> aggregated) {
    if (query.size() != aggregated.size()) throw ShapeError("enhance: length mismatch");
    std::vector<T> out(query.size());
    for (std::size_t c = 0; c < query.size(); ++c) out[c] = query[c] + aggregated[c];
    return out;
}

template <typename T>
QueryResult<T> attend_query(std::span<const T> query, const deform::NeighborSet<T>& neighbors, NormMode mode) {
    const AttentionWeights w = normalize(correlate(query, neighbors.keys), mode, query.size());
    QueryResult<T> r;
    r.aggregated = aggregate(w, neighbors.vals);
    r.enhanced = enhance(query, std::span<const T>(r.aggregated));
    return r;
}

namespace {

template <typename T>
void check_sources(const BasicTensor<T>& query, std::span<const Source<T>> sources, std::size_t k) {
    deform::require_odd(k);
    if (query.rank() != 3) throw ShapeError("attend_frame: query must be C x H x W");
    if (sources.empty()) throw ShapeError("attend_frame: at least one source required");
    for (const auto& s : sources) {
        if (!s.frame || s.frame->shape() != query.shape()) {
            throw ShapeError("attend_frame: source frame shape must equal query shape " + shape_str(query.shape()));
        }
        if (s.offsets && s.offsets->shape() != Shape{2 * k * k, query.extent(1), query.extent(2)}) {
            throw ShapeError("attend_frame: offset tensor must be 2k^2 x H x W, got " + shape_str(s.offsets->shape()));
        }
    }
}

template <typename T>
void gather_regular(const BasicTensor<T>& frame, std::ptrdiff_t r, std::ptrdiff_t c, T* out) {
    const std::size_t channels = frame.extent(0);
    const auto h = static_cast<std::ptrdiff_t>(frame.extent(1));
    const auto w = static_cast<std::ptrdiff_t>(frame.extent(2));
    const std::size_t plane = frame.extent(1) * frame.extent(2);
    if (r < 0 || r >= h || c < 0 || c >= w) {
        std::fill(out, out + channels, T(0));
        return;
    }
    const T* p = frame.ptr() + static_cast<std::size_t>(r * w + c);
    for (std::size_t ch = 0; ch < channels; ++ch) out[ch] = p[ch * plane];
}

}  // namespace

template <typename T>
BasicTensor<T> attend_frame(const BasicTensor<T>& query, std::span<const Source<T>> sources, std::size_t k,
                            NormMode mode, AttendCache<T>* cache, AttentionProbe* probe) {
    check_sources(query, sources, k);
    const std::size_t channels = query.extent(0);
    const std::size_t h = query.extent(1);
    const std::size_t w = query.extent(2);
    const std::size_t plane = h * w;
    const std::size_t kk = k * k;
    const std::size_t nb = kk * sources.size();
    const auto grid = deform::regular_grid(k);

    std::vector<T> local_samples;
    std::vector<double> local_weights(nb);
    std::vector<deform::SamplePos> local_coords(nb);
    if (cache) {
        cache->channels = channels;
        cache->height = h;
        cache->width = w;
        cache->neighbors = nb;
        cache->samples.assign(plane * nb * channels, T(0));
        cache->weights.assign(plane * nb, 0.0);
        cache->coords.assign(plane * nb, {});
    } else {
        local_samples.resize(nb * channels);
    }
    std::vector<T> q(channels);
    std::vector<double> acc(channels);
    BasicTensor<T> out({channels, h, w});

    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t qi = r * w + c;
            T* samples = cache ? cache->samples.data() + qi * nb * channels : local_samples.data();
            double* weights = cache ? cache->weights.data() + qi * nb : local_weights.data();
            deform::SamplePos* coords = cache ? cache->coords.data() + qi * nb : local_coords.data();
            for (std::size_t ch = 0; ch < channels; ++ch) q[ch] = query[ch * plane + qi];

            for (std::size_t s = 0; s < sources.size(); ++s) {
                const auto& src = sources[s];
                for (std::size_t g = 0; g < kk; ++g) {
                    const std::size_t j = s * kk + g;
                    T* dst = samples + j * channels;
                    const auto [a, b] = grid[g];
                    if (src.offsets) {
                        const T* off = src.offsets->ptr();
                        const deform::SamplePos pos{static_cast<double>(r) + a + off[(2 * g) * plane + qi],
                                                    static_cast<double>(c) + b + off[(2 * g + 1) * plane + qi]};
                        coords[j] = pos;
                        deform::bilinear_sample_into(*src.frame, pos, std::span<T>(dst, channels), 1);
                    } else {
                        coords[j] = {static_cast<double>(r) + a, static_cast<double>(c) + b};
                        gather_regular(*src.frame, static_cast<std::ptrdiff_t>(r) + a,
                                       static_cast<std::ptrdiff_t>(c) + b, dst);
                    }
                    double z = 0.0;
                    for (std::size_t ch = 0; ch < channels; ++ch) z += static_cast<double>(q[ch]) * dst[ch];
                    weights[j] = z;
                }
            }
            if (mode == NormMode::softmax) softmax_scaled(std::span<double>(weights, nb), channels);

            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < nb; ++j) {
                const double wj = weights[j];
                const T* sj = samples + j * channels;
                for (std::size_t ch = 0; ch < channels; ++ch) acc[ch] += wj * sj[ch];
            }
            for (std::size_t ch = 0; ch < channels; ++ch) out[ch * plane + qi] = static_cast<T>(acc[ch]);

            if (probe && probe->row == r && probe->col == c) {
                probe->coords.assign(coords, coords + nb);
                probe->weights.assign(weights, weights + nb);
            }
        }
    }
    require_finite(out, "attend_frame");
    return out;
}

template <typename T>
AttendGrads<T> attend_frame_backward(const BasicTensor<T>& query, std::span<const Source<T>> sources, std::size_t k,
                                     NormMode mode, const AttendCache<T>& cache, const BasicTensor<T>& grad_out) {
    check_sources(query, sources, k);
    const std::size_t channels = query.extent(0);
    const std::size_t h = query.extent(1);
    const std::size_t w = query.extent(2);
    const std::size_t plane = h * w;
    const std::size_t kk = k * k;
    const std::size_t nb = kk * sources.size();
    if (cache.neighbors != nb || cache.channels != channels || cache.samples.size() != plane * nb * channels) {
        throw ShapeError("attend_frame_backward: cache does not match inputs");
    }
    if (grad_out.shape() != query.shape()) throw ShapeError("attend_frame_backward: grad shape mismatch");
    const auto grid = deform::regular_grid(k);

    AttendGrads<T> grads;
    grads.query = BasicTensor<T>(query.shape());
    for (const auto& src : sources) {
        grads.frames.emplace_back(query.shape());
        grads.offsets.push_back(src.offsets ? BasicTensor<T>(src.offsets->shape()) : BasicTensor<T>());
    }

    std::vector<double> dy(channels), dq(channels), dw(nb);
    std::vector<T> ds(nb * channels);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t qi = r * w + c;
            const T* samples = cache.samples.data() + qi * nb * channels;
            const double* weights = cache.weights.data() + qi * nb;
            const deform::SamplePos* coords = cache.coords.data() + qi * nb;
            bool any = false;
            for (std::size_t ch = 0; ch < channels; ++ch) {
                dy[ch] = grad_out[ch * plane + qi];
                any = any || dy[ch] != 0.0;
            }
            if (!any) continue;

            for (std::size_t j = 0; j < nb; ++j) {
                const T* sj = samples + j * channels;
                double a = 0.0;
                for (std::size_t ch = 0; ch < channels; ++ch) a += dy[ch] * sj[ch];
                dw[j] = a;
            }
            normalize_backward(std::span<const double>(weights, nb), dw, mode, channels);

            std::fill(dq.begin(), dq.end(), 0.0);
            for (std::size_t j = 0; j < nb; ++j) {
                const T* sj = samples + j * channels;
                T* dsj = ds.data() + j * channels;
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    dq[ch] += dw[j] * sj[ch];
                    dsj[ch] = static_cast<T>(weights[j] * dy[ch] +
                                             dw[j] * static_cast<double>(query[ch * plane + qi]));
                }
            }
            for (std::size_t ch = 0; ch < channels; ++ch) grads.query[ch * plane + qi] += static_cast<T>(dq[ch]);

            for (std::size_t s = 0; s < sources.size(); ++s) {
                const auto& src = sources[s];
                BasicTensor<T>& gframe = grads.frames[s];
                for (std::size_t g = 0; g < kk; ++g) {
                    const std::size_t j = s * kk + g;
                    const T* dsj = ds.data() + j * channels;
                    if (src.offsets) {
                        const deform::SamplePos dpos = deform::bilinear_backward(
                            *src.frame, coords[j], std::span<const T>(dsj, channels), &gframe, 1);
                        grads.offsets[s][(2 * g) * plane + qi] += static_cast<T>(dpos.row);
                        grads.offsets[s][(2 * g + 1) * plane + qi] += static_cast<T>(dpos.col);
                    } else {
                        const auto rr = static_cast<std::ptrdiff_t>(r) + grid[g].first;
                        const auto cc = static_cast<std::ptrdiff_t>(c) + grid[g].second;
                        if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) ||
                            cc >= static_cast<std::ptrdiff_t>(w)) {
                            continue;
                        }
                        const std::size_t off = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
                        for (std::size_t ch = 0; ch < channels; ++ch) gframe[ch * plane + off] += dsj[ch];
                    }
                }
            }
        }
    }
    return grads;
}

template <typename T>
BasicTensor<T> correlation_frame(const BasicTensor<T>& query, const BasicTensor<T>& source, std::size_t k,
                                 NormMode mode) {
    deform::require_odd(k);
    if (query.rank() != 3 || source.shape() != query.shape()) {
        throw ShapeError("correlation_frame: query and source must be equal C x H x W frames");
    }
    const std::size_t channels = query.extent(0);
    const std::size_t h = query.extent(1);
    const std::size_t w = query.extent(2);
    const std::size_t plane = h * w;
    const std::size_t kk = k * k;
    const auto grid = deform::regular_grid(k);
    BasicTensor<T> out({kk, h, w});
    std::vector<T> key(channels);
    std::vector<double> z(kk);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t qi = r * w + c;
            for (std::size_t g = 0; g < kk; ++g) {
                gather_regular(source, static_cast<std::ptrdiff_t>(r) + grid[g].first,
                               static_cast<std::ptrdiff_t>(c) + grid[g].second, key.data());
                double acc = 0.0;
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    acc += static_cast<double>(query[ch * plane + qi]) * key[ch];
                }
                z[g] = acc;
            }
            if (mode == NormMode::softmax) softmax_scaled(z, channels);
            for (std::size_t g = 0; g < kk; ++g) out[g * plane + qi] = static_cast<T>(z[g]);
        }
    }
    require_finite(out, "correlation_frame");
    return out;
}

template <typename T>
CorrelationGrads<T> correlation_frame_backward(const BasicTensor<T>& query, const BasicTensor<T>& source,
                                               std::size_t k, NormMode mode, const BasicTensor<T>& grad_out) {
    const std::size_t channels = query.extent(0);
    const std::size_t h = query.extent(1);
    const std::size_t w = query.extent(2);
    const std::size_t plane = h * w;
    const std::size_t kk = k * k;
    if (source.shape() != query.shape() || grad_out.shape() != Shape{kk, h, w}) {
        throw ShapeError("correlation_frame_backward: grad shape mismatch");
    }
    const auto grid = deform::regular_grid(k);
    CorrelationGrads<T> grads{BasicTensor<T>(query.shape()), BasicTensor<T>(source.shape())};
    std::vector<double> wv(kk), dz(kk);
    std::vector<T> key(channels);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t qi = r * w + c;
            for (std::size_t g = 0; g < kk; ++g) dz[g] = grad_out[g * plane + qi];
            if (mode == NormMode::softmax) {
                for (std::size_t g = 0; g < kk; ++g) {
                    gather_regular(source, static_cast<std::ptrdiff_t>(r) + grid[g].first,
                                   static_cast<std::ptrdiff_t>(c) + grid[g].second, key.data());
                    double acc = 0.0;
                    for (std::size_t ch = 0; ch < channels; ++ch) {
                        acc += static_cast<double>(query[ch * plane + qi]) * key[ch];
                    }
                    wv[g] = acc;
                }
                softmax_scaled(wv, channels);
            }
            normalize_backward(wv, dz, mode, channels);
            for (std::size_t g = 0; g < kk; ++g) {
                const auto rr = static_cast<std::ptrdiff_t>(r) + grid[g].first;
                const auto cc = static_cast<std::ptrdiff_t>(c) + grid[g].second;
                if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) {
                    continue;
                }
                const std::size_t off = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    grads.query[ch * plane + qi] += static_cast<T>(dz[g] * source[ch * plane + off]);
                    grads.source[ch * plane + off] += static_cast<T>(dz[g] * query[ch * plane + qi]);
                }
            }
        }
    }
    return grads;
}

#define SIFA_INSTANTIATE(T)                                                                                     \
    template AttentionWeights correlate<T>(std::span<const T>, const BasicTensor<T>&);                           \
    template std::vector<T> aggregate<T>(const AttentionWeights&, const BasicTensor<T>&);                        \
    template std::vector<T> enhance<T>(std::span<const T>, std::span<const T>);                                  \
    template QueryResult<T> attend_query<T>(std::span<const T>, const deform::NeighborSet<T>&, NormMode);        \
    template BasicTensor<T> attend_frame<T>(const BasicTensor<T>&, std::span<const Source<T>>, std::size_t,      \
                                            NormMode, AttendCache<T>*, AttentionProbe*);                         \
    template AttendGrads<T> attend_frame_backward<T>(const BasicTensor<T>&, std::span<const Source<T>>,          \
                                                     std::size_t, NormMode, const AttendCache<T>&,               \
                                                     const BasicTensor<T>&);                                     \
    template BasicTensor<T> correlation_frame<T>(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,      \
                                                 NormMode);                                                      \
    template CorrelationGrads<T> correlation_frame_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                                               std::size_t, NormMode, const BasicTensor<T>&);

SIFA_INSTANTIATE(float)
SIFA_INSTANTIATE(double)

#undef SIFA_INSTANTIATE

}  // namespace sifa::attn
