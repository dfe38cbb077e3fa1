#include "sifa/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "sifa/deform.hpp"

namespace sifa::ad {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::leaf: return "leaf";
        case OpKind::slice_frame: return "slice_frame";
        case OpKind::stack_frames: return "stack_frames";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::relu: return "relu";
        case OpKind::conv2d: return "conv2d";
        case OpKind::attend: return "attend";
        case OpKind::correlate: return "correlate";
        case OpKind::temporal_conv: return "temporal_conv";
        case OpKind::mean_pool: return "mean_pool";
        case OpKind::affine: return "affine";
        case OpKind::softmax_xent: return "softmax_xent";
        case OpKind::sum: return "sum";
    }
    return "?";
}

template <typename T>
const BasicTensor<T>& Tape<T>::Gradients::operator[](Id id) const {
    if (!has(id)) throw TapeError("no gradient reached record " + std::to_string(id));
    return grads_[id];
}

template <typename T>
typename Tape<T>::Id Tape<T>::leaf(BasicTensor<T> value, std::string name) {
    Record r;
    r.value = std::move(value);
    r.name = std::move(name);
    records_.push_back(std::move(r));
    return records_.size() - 1;
}

template <typename T>
typename Tape<T>::Id Tape<T>::push(OpKind op, std::vector<Id> inputs, BasicTensor<T> value, BackwardFn backward,
                                   std::vector<std::int64_t> branches) {
    for (Id id : inputs) {
        if (id >= records_.size()) throw TapeError(std::string(op_name(op)) + ": input refers to a future record");
    }
    Record r;
    r.op = op;
    r.inputs = std::move(inputs);
    r.value = std::move(value);
    if (recording_) r.backward = std::move(backward);
    if (track_branches_) r.branches = std::move(branches);
    records_.push_back(std::move(r));
    return records_.size() - 1;
}

template <typename T>
typename Tape<T>::Gradients Tape<T>::backward(Id output, BasicTensor<T> seed, std::vector<Id>* visited) const {
    if (!recording_) throw TapeError("backward: tape was recorded without backward rules");
    if (output >= records_.size()) throw TapeError("backward: output id out of range");
    const auto& out = records_[output].value;
    if (seed.empty()) {
        seed = BasicTensor<T>::full(out.shape(), T(1));
    } else if (seed.shape() != out.shape()) {
        throw ShapeError("backward: seed shape " + shape_str(seed.shape()) + " != output " + shape_str(out.shape()));
    }
    std::vector<BasicTensor<T>> grads(records_.size());
    grads[output] = std::move(seed);

    std::vector<const BasicTensor<T>*> in;
    std::vector<BasicTensor<T>*> gin;
    for (Id id = output + 1; id-- > 0;) {
        const Record& rec = records_[id];
        if (rec.op == OpKind::leaf || grads[id].empty()) continue;
        if (!rec.backward) throw TapeError(std::string("backward: record without rule: ") + op_name(rec.op));
        in.clear();
        gin.clear();
        for (Id src : rec.inputs) {
            if (grads[src].empty()) grads[src] = BasicTensor<T>(records_[src].value.shape());
            in.push_back(&records_[src].value);
            gin.push_back(&grads[src]);
        }
        rec.backward(grads[id], in, gin);
        if (visited) visited->push_back(id);
    }
    return Gradients(std::move(grads));
}

// ---- primitive ops -------------------------------------------------------

namespace {

template <typename T>
void require_same(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
}

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Id<T> slice_frame(Tape<T>& tape, Id<T> clip, std::size_t t) {
    const auto& x = tape.value(clip);
    if (x.rank() != 4 || t >= x.extent(1)) throw ShapeError("slice_frame: need C x L x H x W with t < L");
    const std::size_t channels = x.extent(0), frames = x.extent(1), plane = x.extent(2) * x.extent(3);
    BasicTensor<T> out({channels, x.extent(2), x.extent(3)});
    for (std::size_t c = 0; c < channels; ++c) {
        const T* src = x.ptr() + (c * frames + t) * plane;
        std::copy(src, src + plane, out.ptr() + c * plane);
    }
    return tape.push(OpKind::slice_frame, {clip}, std::move(out),
                     [t, channels, frames, plane](const BasicTensor<T>& g, auto, auto gin) {
                         for (std::size_t c = 0; c < channels; ++c) {
                             T* dst = gin[0]->ptr() + (c * frames + t) * plane;
                             for (std::size_t i = 0; i < plane; ++i) dst[i] += g[c * plane + i];
                         }
                     });
}

template <typename T>
Id<T> stack_frames(Tape<T>& tape, std::span<const Id<T>> frames) {
    if (frames.empty()) throw ShapeError("stack_frames: no frames");
    const Shape fs = tape.value(frames[0]).shape();
    if (fs.size() != 3) throw ShapeError("stack_frames: frames must be C x H x W");
    const std::size_t channels = fs[0], n = frames.size(), plane = fs[1] * fs[2];
    BasicTensor<T> out({channels, n, fs[1], fs[2]});
    for (std::size_t t = 0; t < n; ++t) {
        const auto& f = tape.value(frames[t]);
        if (f.shape() != fs) throw ShapeError("stack_frames: frame shapes differ");
        for (std::size_t c = 0; c < channels; ++c) {
            std::copy(f.ptr() + c * plane, f.ptr() + (c + 1) * plane, out.ptr() + (c * n + t) * plane);
        }
    }
    return tape.push(OpKind::stack_frames, std::vector<Id<T>>(frames.begin(), frames.end()), std::move(out),
                     [channels, n, plane](const BasicTensor<T>& g, auto, auto gin) {
                         for (std::size_t t = 0; t < n; ++t) {
                             for (std::size_t c = 0; c < channels; ++c) {
                                 const T* src = g.ptr() + (c * n + t) * plane;
                                 T* dst = gin[t]->ptr() + c * plane;
                                 for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
                             }
                         }
                     });
}

template <typename T>
Id<T> add(Tape<T>& tape, Id<T> a, Id<T> b) {
    return tape.push(OpKind::add, {a, b}, sifa::add(tape.value(a), tape.value(b)),
                     [](const BasicTensor<T>& g, auto, auto gin) {
                         accumulate(*gin[0], g);
                         accumulate(*gin[1], g);
                     });
}

template <typename T>
Id<T> sub(Tape<T>& tape, Id<T> a, Id<T> b) {
    return tape.push(OpKind::sub, {a, b}, sifa::sub(tape.value(a), tape.value(b)),
                     [](const BasicTensor<T>& g, auto, auto gin) {
                         accumulate(*gin[0], g);
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                     });
}

template <typename T>
Id<T> mul(Tape<T>& tape, Id<T> a, Id<T> b) {
    return tape.push(OpKind::mul, {a, b}, sifa::mul(tape.value(a), tape.value(b)),
                     [](const BasicTensor<T>& g, auto in, auto gin) {
                         const auto& x = *in[0];
                         const auto& y = *in[1];
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             (*gin[0])[i] += g[i] * y[i];
                             (*gin[1])[i] += g[i] * x[i];
                         }
                     });
}

template <typename T>
Id<T> sigmoid(Tape<T>& tape, Id<T> a) {
    return tape.push(OpKind::sigmoid, {a}, sifa::sigmoid(tape.value(a)),
                     [](const BasicTensor<T>& g, auto in, auto gin) {
                         const auto& x = *in[0];
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             const T s = sifa::sigmoid(x[i]);
                             (*gin[0])[i] += g[i] * s * (T(1) - s);
                         }
                     });
}

template <typename T>
Id<T> relu(Tape<T>& tape, Id<T> a) {
    const auto& x = tape.value(a);
    std::vector<std::int64_t> branches;
    if (tape.tracks_branches()) {
        // Pack the sign pattern 63 bits per word.
        branches.assign(x.size() / 63 + 1, 0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] > T(0)) branches[i / 63] |= std::int64_t{1} << (i % 63);
        }
    }
    return tape.push(
        OpKind::relu, {a}, sifa::relu(x),
        [](const BasicTensor<T>& g, auto in, auto gin) {
            const auto& x = *in[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > T(0)) (*gin[0])[i] += g[i];
            }
        },
        std::move(branches));
}

template <typename T>
Id<T> conv2d(Tape<T>& tape, Id<T> x, Id<T> weight, Id<T> bias) {
    return tape.push(OpKind::conv2d, {x, weight, bias},
                     sifa::conv2d(tape.value(x), tape.value(weight), tape.value(bias)),
                     [](const BasicTensor<T>& g, auto in, auto gin) {
                         conv2d_backward_into(*in[0], *in[1], g, gin[0], gin[1], gin[2]);
                     });
}

template <typename T>
Id<T> attend(Tape<T>& tape, Id<T> query, std::span<const SourceRef<T>> sources, std::size_t k, attn::NormMode mode,
             attn::AttentionProbe* probe) {
    // Input layout: query, then per source its frame and (if deformable) its offsets.
    std::vector<Id<T>> inputs{query};
    std::vector<bool> deformable;
    std::vector<attn::Source<T>> srcs;
    for (const auto& s : sources) {
        inputs.push_back(s.frame);
        srcs.push_back({&tape.value(s.frame), nullptr});
        deformable.push_back(s.offsets.has_value());
        if (s.offsets) {
            inputs.push_back(*s.offsets);
            srcs.back().offsets = &tape.value(*s.offsets);
        }
    }
    const bool keep = tape.recording() || tape.tracks_branches();
    auto cache = keep ? std::make_shared<attn::AttendCache<T>>() : nullptr;
    BasicTensor<T> out = attn::attend_frame(tape.value(query), std::span<const attn::Source<T>>(srcs), k, mode,
                                            cache.get(), probe);

    std::vector<std::int64_t> branches;
    if (tape.tracks_branches()) {
        const std::size_t kk = k * k;
        const std::size_t queries = cache->coords.size() / cache->neighbors;
        for (std::size_t qi = 0; qi < queries; ++qi) {
            for (std::size_t s = 0; s < deformable.size(); ++s) {
                if (!deformable[s]) continue;
                for (std::size_t g = 0; g < kk; ++g) {
                    const auto st = deform::bilinear_stencil(cache->coords[qi * cache->neighbors + s * kk + g]);
                    branches.push_back(st.r0);
                    branches.push_back(st.c0);
                }
            }
        }
    }
    if (!tape.recording()) cache.reset();

    return tape.push(
        OpKind::attend, std::move(inputs), std::move(out),
        [cache, deformable, k, mode](const BasicTensor<T>& g, auto in, auto gin) {
            std::vector<attn::Source<T>> srcs;
            std::size_t pos = 1;
            for (bool d : deformable) {
                srcs.push_back({in[pos++], d ? in[pos++] : nullptr});
            }
            auto grads = attn::attend_frame_backward(*in[0], std::span<const attn::Source<T>>(srcs), k, mode, *cache,
                                                     g);
            accumulate(*gin[0], grads.query);
            pos = 1;
            for (std::size_t s = 0; s < deformable.size(); ++s) {
                accumulate(*gin[pos++], grads.frames[s]);
                if (deformable[s]) accumulate(*gin[pos++], grads.offsets[s]);
            }
        },
        std::move(branches));
}

template <typename T>
Id<T> correlate(Tape<T>& tape, Id<T> query, Id<T> source, std::size_t k, attn::NormMode mode) {
    return tape.push(OpKind::correlate, {query, source},
                     attn::correlation_frame(tape.value(query), tape.value(source), k, mode),
                     [k, mode](const BasicTensor<T>& g, auto in, auto gin) {
                         auto grads = attn::correlation_frame_backward(*in[0], *in[1], k, mode, g);
                         accumulate(*gin[0], grads.query);
                         accumulate(*gin[1], grads.source);
                     });
}

template <typename T>
Id<T> mean_pool(Tape<T>& tape, Id<T> x) {
    const auto& v = tape.value(x);
    if (v.rank() < 2) throw ShapeError("mean_pool: need rank >= 2");
    const std::size_t channels = v.extent(0);
    const std::size_t n = v.size() / channels;
    BasicTensor<T> out({channels});
    for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += v[c * n + i];
        out[c] = static_cast<T>(acc / static_cast<double>(n));
    }
    return tape.push(OpKind::mean_pool, {x}, std::move(out), [channels, n](const BasicTensor<T>& g, auto, auto gin) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T share = g[c] / static_cast<T>(n);
            T* dst = gin[0]->ptr() + c * n;
            for (std::size_t i = 0; i < n; ++i) dst[i] += share;
        }
    });
}

template <typename T>
Id<T> affine(Tape<T>& tape, Id<T> x, Id<T> weight, Id<T> bias) {
    const auto& xv = tape.value(x);
    const auto& w = tape.value(weight);
    const auto& b = tape.value(bias);
    if (xv.rank() != 1 || w.rank() != 2 || w.extent(1) != xv.size() || b.shape() != Shape{w.extent(0)}) {
        throw ShapeError("affine: weight " + shape_str(w.shape()) + ", input " + shape_str(xv.shape()) + ", bias " +
                         shape_str(b.shape()));
    }
    const std::size_t rows = w.extent(0), cols = w.extent(1);
    BasicTensor<T> out({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = b[r];
        for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(w[r * cols + c]) * xv[c];
        out[r] = static_cast<T>(acc);
    }
    require_finite(out, "affine");
    return tape.push(OpKind::affine, {x, weight, bias}, std::move(out),
                     [rows, cols](const BasicTensor<T>& g, auto in, auto gin) {
                         const auto& xv = *in[0];
                         const auto& w = *in[1];
                         for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < cols; ++c) {
                                 (*gin[0])[c] += g[r] * w[r * cols + c];
                                 (*gin[1])[r * cols + c] += g[r] * xv[c];
                             }
                             (*gin[2])[r] += g[r];
                         }
                     });
}

template <typename T>
Id<T> softmax_xent(Tape<T>& tape, Id<T> logits, std::size_t label) {
    const auto& z = tape.value(logits);
    if (z.rank() != 1 || label >= z.size()) throw ShapeError("softmax_xent: label out of range");
    double m = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) m = std::max(m, static_cast<double>(z[i]));
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i] - m);
    const double loss = m + std::log(total) - z[label];
    BasicTensor<T> out({1}, {static_cast<T>(loss)});
    require_finite(out, "softmax_xent");
    return tape.push(OpKind::softmax_xent, {logits}, std::move(out), [label](const BasicTensor<T>& g, auto in, auto gin) {
        const auto& z = *in[0];
        double m = z[0];
        for (std::size_t i = 1; i < z.size(); ++i) m = std::max(m, static_cast<double>(z[i]));
        double total = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i] - m);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double p = std::exp(z[i] - m) / total - (i == label ? 1.0 : 0.0);
            (*gin[0])[i] += static_cast<T>(g[0] * p);
        }
    });
}

template <typename T>
Id<T> sum(Tape<T>& tape, Id<T> x) {
    BasicTensor<T> out({1}, {static_cast<T>(sifa::sum(tape.value(x)))});
    return tape.push(OpKind::sum, {x}, std::move(out), [](const BasicTensor<T>& g, auto, auto gin) {
        for (std::size_t i = 0; i < gin[0]->size(); ++i) (*gin[0])[i] += g[0];
    });
}

template <typename T>
std::uint64_t branch_signature(const Tape<T>& tape) {
    std::uint64_t h = kHashSeed;
    for (std::size_t id = 0; id < tape.size(); ++id) {
        const auto& rec = tape.record(id);
        if (rec.branches.empty()) continue;
        h = hash_mix(h, id);
        for (std::int64_t b : rec.branches) h = hash_mix(h, static_cast<std::uint64_t>(b));
    }
    return h;
}

#define SIFA_INSTANTIATE(T)                                                                                       \
    template class Tape<T>;                                                                                        \
    template Id<T> slice_frame<T>(Tape<T>&, Id<T>, std::size_t);                                                   \
    template Id<T> stack_frames<T>(Tape<T>&, std::span<const Id<T>>);                                              \
    template Id<T> add<T>(Tape<T>&, Id<T>, Id<T>);                                                                 \
    template Id<T> sub<T>(Tape<T>&, Id<T>, Id<T>);                                                                 \
    template Id<T> mul<T>(Tape<T>&, Id<T>, Id<T>);                                                                 \
    template Id<T> sigmoid<T>(Tape<T>&, Id<T>);                                                                    \
    template Id<T> relu<T>(Tape<T>&, Id<T>);                                                                       \
    template Id<T> conv2d<T>(Tape<T>&, Id<T>, Id<T>, Id<T>);                                                       \
    template Id<T> attend<T>(Tape<T>&, Id<T>, std::span<const SourceRef<T>>, std::size_t, attn::NormMode,          \
                             attn::AttentionProbe*);                                                               \
    template Id<T> correlate<T>(Tape<T>&, Id<T>, Id<T>, std::size_t, attn::NormMode);                              \
    template Id<T> mean_pool<T>(Tape<T>&, Id<T>);                                                                  \
    template Id<T> affine<T>(Tape<T>&, Id<T>, Id<T>, Id<T>);                                                       \
    template Id<T> softmax_xent<T>(Tape<T>&, Id<T>, std::size_t);                                                  \
    template Id<T> sum<T>(Tape<T>&, Id<T>);                                                                        \
    template std::uint64_t branch_signature<T>(const Tape<T>&);

SIFA_INSTANTIATE(float)
SIFA_INSTANTIATE(double)

#undef SIFA_INSTANTIATE

}  // namespace sifa::ad
