#include "sifa/blocks.hpp"

#include <cmath>
#include <random>

namespace sifa {

const char* to_string(Sampling s) { return s == Sampling::regular ? "regular" : "deformable"; }

const char* to_string(OffsetSource s) {
    switch (s) {
        case OffsetSource::next_frame: return "next";
        case OffsetSource::temporal_difference: return "tdiff";
        case OffsetSource::motion_saliency: return "msm";
    }
    return "?";
}

const char* to_string(Variant v) {
    switch (v) {
        case Variant::correlation_only: return "c";
        case Variant::regular_attention: return "r";
        case Variant::full: return "full";
        case Variant::star: return "star";
    }
    return "?";
}

const char* to_string(attn::NormMode m) { return m == attn::NormMode::raw ? "raw" : "softmax"; }

SifaConfig SifaConfig::for_variant(Variant v, std::size_t k) {
    SifaConfig cfg;
    cfg.k = k;
    cfg.variant = v;
    cfg.sampling = (v == Variant::full || v == Variant::star) ? Sampling::deformable : Sampling::regular;
    return cfg;
}

std::size_t SifaConfig::pool_size() const { return (variant == Variant::star ? 2 : 1) * k * k; }

void SifaConfig::validate() const {
    if (k == 0 || k % 2 == 0) throw ConfigError("k must be odd and >= 1, got " + std::to_string(k));
    if (variant == Variant::correlation_only && sampling == Sampling::deformable) {
        throw ConfigError("the correlation-only variant has no deformable sampling");
    }
    if (variant == Variant::regular_attention && sampling == Sampling::deformable) {
        throw ConfigError("the regular-attention variant samples the regular grid");
    }
    if (variant == Variant::full && sampling == Sampling::regular) {
        throw ConfigError("the full variant requires deformable sampling");
    }
    if (variant == Variant::correlation_only && value_projection) {
        throw ConfigError("the correlation-only variant aggregates no values to project");
    }
}

std::string SifaConfig::describe() const {
    std::string s = std::string("variant=") + to_string(variant) + " k=" + std::to_string(k) +
                    " sampling=" + to_string(sampling) + " norm=" + to_string(norm);
    if (sampling == Sampling::deformable) s += std::string(" offset_source=") + to_string(offset_source);
    if (value_projection) s += " value_projection=on";
    return s;
}

template <typename T>
BlockParams<T> BlockParams<T>::init(const SifaConfig& cfg, std::size_t channels, std::uint64_t seed,
                                    double projection_scale) {
    cfg.validate();
    const std::size_t kk = cfg.k * cfg.k;
    BlockParams p;
    if (cfg.sampling == Sampling::deformable) {
        p.offset_estimator = BasicConv2dParams<T>::zeros(2 * kk, channels, 3);
        if (cfg.variant == Variant::star) p.backward_estimator = BasicConv2dParams<T>::zeros(2 * kk, channels, 3);
    }
    if (cfg.variant == Variant::correlation_only) {
        auto proj = BasicConv2dParams<T>::zeros(channels, kk, 1);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, projection_scale / std::sqrt(static_cast<double>(kk)));
        for (auto& v : proj.weight.data()) v = static_cast<T>(normal(rng));
        p.correlation_projection = std::move(proj);
    }
    if (cfg.value_projection) {
        auto proj = BasicConv2dParams<T>::zeros(channels, channels, 1);
        for (std::size_t c = 0; c < channels; ++c) proj.weight[c * channels + c] = T(1);
        p.value_projection = std::move(proj);
    }
    return p;
}

template <typename T>
void BlockParams<T>::validate(const SifaConfig& cfg, std::size_t channels) const {
    cfg.validate();
    const std::size_t kk = cfg.k * cfg.k;
    auto check = [](const std::optional<BasicConv2dParams<T>>& p, bool wanted, std::size_t out, std::size_t in,
                    std::size_t kernel, const char* what) {
        if (p.has_value() != wanted) {
            throw ConfigError(std::string(what) + (wanted ? " is required" : " is not used") + " by this config");
        }
        if (!p) return;
        p->validate();
        if (p->out_channels() != out || p->in_channels() != in || p->kernel_h() != kernel) {
            throw ConfigError(std::string(what) + " must be " + std::to_string(out) + "x" + std::to_string(in) + "x" +
                              std::to_string(kernel) + "x" + std::to_string(kernel) + ", got " +
                              shape_str(p->weight.shape()));
        }
    };
    const bool deformable = cfg.sampling == Sampling::deformable;
    check(offset_estimator, deformable, 2 * kk, channels, 3, "offset estimator");
    check(backward_estimator, deformable && cfg.variant == Variant::star, 2 * kk, channels, 3, "backward estimator");
    check(correlation_projection, cfg.variant == Variant::correlation_only, channels, kk, 1, "correlation projection");
    check(value_projection, cfg.value_projection, channels, channels, 1, "value projection");
}

// ---- tape-level assembly --------------------------------------------------

namespace {

template <typename T>
std::optional<ConvIds> register_conv(ad::Tape<T>& tape, const std::optional<BasicConv2dParams<T>>& p,
                                     const std::string& name, const char* role, std::vector<ParamLeaf>* leaves) {
    if (!p) return std::nullopt;
    ConvIds ids{tape.leaf(p->weight, name + ".weight"), tape.leaf(p->bias, name + ".bias")};
    if (leaves) {
        leaves->push_back({name + ".weight", role, ids.weight});
        leaves->push_back({name + ".bias", role, ids.bias});
    }
    return ids;
}

// Estimator input for the pair (frame, neighbor).
template <typename T>
std::size_t offset_input(ad::Tape<T>& tape, OffsetSource source, std::size_t frame, std::size_t neighbor) {
    switch (source) {
        case OffsetSource::next_frame: return neighbor;
        case OffsetSource::temporal_difference: return ad::sub(tape, neighbor, frame);
        case OffsetSource::motion_saliency:
            return ad::mul(tape, ad::sigmoid(tape, ad::sub(tape, neighbor, frame)), neighbor);
    }
    throw ConfigError("unknown offset source");
}

}  // namespace

template <typename T>
BlockIds register_block(ad::Tape<T>& tape, const BlockParams<T>& params, const std::string& prefix,
                        std::vector<ParamLeaf>* leaves) {
    BlockIds ids;
    ids.offset_estimator = register_conv(tape, params.offset_estimator, prefix + ".offset", "offset_estimator", leaves);
    ids.backward_estimator =
        register_conv(tape, params.backward_estimator, prefix + ".offset_prev", "backward_estimator", leaves);
    ids.correlation_projection =
        register_conv(tape, params.correlation_projection, prefix + ".corr_proj", "correlation_projection", leaves);
    ids.value_projection = register_conv(tape, params.value_projection, prefix + ".value_proj", "value_projection",
                                         leaves);
    return ids;
}

template <typename T>
std::size_t block_forward(ad::Tape<T>& tape, std::size_t clip, const SifaConfig& cfg, const BlockIds& ids,
                          BlockTrace* trace) {
    cfg.validate();
    const auto& x = tape.value(clip);
    if (x.rank() != 4) throw ShapeError("block_forward: clip must be C x L x H x W, got " + shape_str(x.shape()));
    const std::size_t frames = x.extent(1);
    const bool deformable = cfg.sampling == Sampling::deformable;
    const bool star = cfg.variant == Variant::star;
    if (deformable && (!ids.offset_estimator || (star && !ids.backward_estimator))) {
        throw ConfigError("block_forward: deformable sampling needs its offset estimators");
    }
    if (cfg.variant == Variant::correlation_only && !ids.correlation_projection) {
        throw ConfigError("block_forward: correlation-only variant needs its projection");
    }
    if (cfg.value_projection && !ids.value_projection) throw ConfigError("block_forward: value projection missing");
    if (trace) {
        trace->offset_input.assign(frames, 0);
        trace->offsets.assign(frames, 0);
        trace->backward_offsets.assign(star && deformable ? frames : 0, 0);
    }

    std::vector<std::size_t> f(frames);
    for (std::size_t t = 0; t < frames; ++t) f[t] = ad::slice_frame(tape, clip, t);

    std::vector<std::size_t> out(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t q = f[t];
        // The last frame attends to itself; for star the first frame does so backwards.
        const std::size_t next = t + 1 < frames ? f[t + 1] : q;
        const std::size_t prev = t > 0 ? f[t - 1] : q;

        if (cfg.variant == Variant::correlation_only) {
            const std::size_t corr = ad::correlate(tape, q, next, cfg.k, cfg.norm);
            const auto& proj = *ids.correlation_projection;
            out[t] = ad::add(tape, q, ad::conv2d(tape, corr, proj.weight, proj.bias));
            continue;
        }

        std::vector<ad::SourceRef<T>> sources;
        auto add_source = [&](std::size_t neighbor, const std::optional<ConvIds>& est, bool forward) {
            ad::SourceRef<T> s{neighbor, std::nullopt};
            if (deformable) {
                const std::size_t in = offset_input(tape, cfg.offset_source, q, neighbor);
                s.offsets = ad::conv2d(tape, in, est->weight, est->bias);
                if (trace && forward) {
                    trace->offset_input[t] = in;
                    trace->offsets[t] = *s.offsets;
                } else if (trace) {
                    trace->backward_offsets[t] = *s.offsets;
                }
            }
            sources.push_back(s);
        };
        add_source(next, ids.offset_estimator, true);
        if (star) add_source(prev, ids.backward_estimator, false);

        attn::AttentionProbe* probe = nullptr;
        if (trace && trace->probe_frame == t) {
            trace->attention = {trace->probe_row, trace->probe_col, {}, {}};
            probe = &trace->attention;
        }
        std::size_t agg = ad::attend(tape, q, std::span<const ad::SourceRef<T>>(sources), cfg.k, cfg.norm, probe);
        if (ids.value_projection) agg = ad::conv2d(tape, agg, ids.value_projection->weight, ids.value_projection->bias);
        out[t] = ad::add(tape, q, agg);
    }
    return ad::stack_frames(tape, std::span<const std::size_t>(out));
}

template <typename T>
BasicTensor<T> sifa_block_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params) {
    if (clip.rank() != 4) throw ShapeError("sifa_block_forward: clip must be C x L x H x W");
    params.validate(cfg, clip.extent(0));
    ad::Tape<T> tape(false);
    const std::size_t x = tape.leaf(clip);
    const BlockIds ids = register_block(tape, params, "block");
    return tape.value(block_forward(tape, x, cfg, ids));
}

template <typename T>
BasicTensor<T> sifa_c_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params) {
    if (cfg.variant != Variant::correlation_only) throw ConfigError("sifa_c_forward: variant must be correlation-only");
    return sifa_block_forward(clip, cfg, params);
}

template <typename T>
BasicTensor<T> sifa_star_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params) {
    if (cfg.variant != Variant::star) throw ConfigError("sifa_star_forward: variant must be star");
    if (clip.rank() == 4 && clip.extent(1) < 2) throw ShapeError("sifa_star_forward: needs at least two frames");
    return sifa_block_forward(clip, cfg, params);
}

template <typename T>
BasicTensor<T> temporal_conv_baseline(const BasicTensor<T>& clip, const BasicTensor<T>& kernel) {
    ad::Tape<T> tape(false);
    const std::size_t x = tape.leaf(clip);
    return tape.value(temporal_conv(tape, x, tape.leaf(kernel)));
}

template <typename T>
std::size_t temporal_conv(ad::Tape<T>& tape, std::size_t clip, std::size_t kernel) {
    const auto& x = tape.value(clip);
    const auto& kv = tape.value(kernel);
    if (x.rank() != 4) throw ShapeError("temporal_conv: clip must be C x L x H x W");
    const std::size_t channels = x.extent(0), frames = x.extent(1), plane = x.extent(2) * x.extent(3);
    if (kv.shape() != Shape{channels, 3}) throw ShapeError("temporal_conv: kernel must be C x 3");
    BasicTensor<T> out(x.shape());
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < frames; ++t) {
            T* dst = out.ptr() + (c * frames + t) * plane;
            for (std::size_t j = 0; j < 3; ++j) {
                if ((t == 0 && j == 0) || (t + 1 == frames && j == 2)) continue;
                const T w = kv[c * 3 + j];
                const T* src = x.ptr() + (c * frames + t + j - 1) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += w * src[i];
            }
        }
    }
    return tape.push(ad::OpKind::temporal_conv, {clip, kernel}, std::move(out),
                     [channels, frames, plane](const BasicTensor<T>& g, auto in, auto gin) {
                         const auto& x = *in[0];
                         const auto& kv = *in[1];
                         for (std::size_t c = 0; c < channels; ++c) {
                             for (std::size_t t = 0; t < frames; ++t) {
                                 const T* gt = g.ptr() + (c * frames + t) * plane;
                                 for (std::size_t j = 0; j < 3; ++j) {
                                     if ((t == 0 && j == 0) || (t + 1 == frames && j == 2)) continue;
                                     const std::size_t s = (c * frames + t + j - 1) * plane;
                                     double dk = 0.0;
                                     for (std::size_t i = 0; i < plane; ++i) {
                                         (*gin[0])[s + i] += kv[c * 3 + j] * gt[i];
                                         dk += static_cast<double>(gt[i]) * x[s + i];
                                     }
                                     (*gin[1])[c * 3 + j] += static_cast<T>(dk);
                                 }
                             }
                         }
                     });
}

std::uint64_t flop_count(const SifaConfig& cfg, std::size_t channels, std::size_t frames, std::size_t height,
                         std::size_t width) {
    cfg.validate();
    const std::uint64_t c = channels, kk = cfg.k * cfg.k;
    const std::uint64_t queries = static_cast<std::uint64_t>(frames) * height * width;
    if (cfg.variant == Variant::correlation_only) return queries * (c * kk + kk * c);

    const std::uint64_t pool = cfg.pool_size();
    std::uint64_t per_query = 2 * c * pool;
    if (cfg.value_projection) per_query += c * c;
    std::uint64_t total = queries * per_query;
    if (cfg.sampling == Sampling::deformable) {
        const std::uint64_t estimators = cfg.variant == Variant::star ? 2 : 1;
        total += queries * 4 * c * pool;
        total += estimators * queries * 2 * kk * c * 9;
    }
    return total;
}

// ---- demo network ---------------------------------------------------------

template <typename T>
DemoNet<T> DemoNet<T>::init(const DemoSpec& spec, std::uint64_t seed) {
    spec.block.validate();
    DemoNet net;
    net.spec = spec;
    std::mt19937_64 rng(seed);
    auto fill = [&rng](BasicTensor<T>& t, double stddev) {
        std::normal_distribution<double> normal(0.0, stddev);
        for (auto& v : t.data()) v = static_cast<T>(normal(rng));
    };
    net.stem = BasicConv2dParams<T>::zeros(spec.channels, spec.in_channels, 3);
    fill(net.stem.weight, std::sqrt(2.0 / static_cast<double>(spec.in_channels * 9)));
    for (std::size_t b = 0; b < spec.blocks; ++b) {
        net.blocks.push_back(BlockParams<T>::init(spec.block, spec.channels, rng()));
    }
    net.classifier_weight = BasicTensor<T>({spec.num_classes, spec.channels});
    fill(net.classifier_weight, 1.0 / std::sqrt(static_cast<double>(spec.channels)));
    net.classifier_bias = BasicTensor<T>({spec.num_classes});
    return net;
}

template <typename T>
void DemoNet<T>::validate() const {
    spec.block.validate();
    stem.validate();
    if (stem.out_channels() != spec.channels || stem.in_channels() != spec.in_channels) {
        throw ConfigError("stem must map " + std::to_string(spec.in_channels) + " to " +
                          std::to_string(spec.channels) + " channels");
    }
    if (blocks.size() != spec.blocks) throw ConfigError("block count does not match the spec");
    for (const auto& b : blocks) b.validate(spec.block, spec.channels);
    if (classifier_weight.shape() != Shape{spec.num_classes, spec.channels} ||
        classifier_bias.shape() != Shape{spec.num_classes}) {
        throw ConfigError("classifier must be num_classes x channels");
    }
}

namespace {

template <typename NetRef, typename Out>
void collect_params(NetRef& net, Out& out) {
    out.push_back({{"stem.weight", "stem"}, &net.stem.weight});
    out.push_back({{"stem.bias", "stem"}, &net.stem.bias});
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        auto& bp = net.blocks[b];
        const std::string prefix = "block" + std::to_string(b);
        auto conv = [&](auto& p, const char* suffix, const char* role) {
            if (!p) return;
            out.push_back({{prefix + suffix + ".weight", role}, &p->weight});
            out.push_back({{prefix + suffix + ".bias", role}, &p->bias});
        };
        conv(bp.offset_estimator, ".offset", "offset_estimator");
        conv(bp.backward_estimator, ".offset_prev", "backward_estimator");
        conv(bp.correlation_projection, ".corr_proj", "correlation_projection");
        conv(bp.value_projection, ".value_proj", "value_projection");
    }
    out.push_back({{"classifier.weight", "classifier"}, &net.classifier_weight});
    out.push_back({{"classifier.bias", "classifier"}, &net.classifier_bias});
}

}  // namespace

template <typename T>
std::vector<std::pair<NamedParam, BasicTensor<T>*>> named_parameters(DemoNet<T>& net) {
    std::vector<std::pair<NamedParam, BasicTensor<T>*>> out;
    collect_params(net, out);
    return out;
}

template <typename T>
std::vector<std::pair<NamedParam, const BasicTensor<T>*>> named_parameters(const DemoNet<T>& net) {
    std::vector<std::pair<NamedParam, const BasicTensor<T>*>> out;
    collect_params(net, out);
    return out;
}

template <typename T>
NetIds register_net(ad::Tape<T>& tape, const DemoNet<T>& net) {
    NetIds ids;
    ids.stem = {tape.leaf(net.stem.weight, "stem.weight"), tape.leaf(net.stem.bias, "stem.bias")};
    ids.leaves.push_back({"stem.weight", "stem", ids.stem.weight});
    ids.leaves.push_back({"stem.bias", "stem", ids.stem.bias});
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        ids.blocks.push_back(register_block(tape, net.blocks[b], "block" + std::to_string(b), &ids.leaves));
    }
    ids.classifier_weight = tape.leaf(net.classifier_weight, "classifier.weight");
    ids.classifier_bias = tape.leaf(net.classifier_bias, "classifier.bias");
    ids.leaves.push_back({"classifier.weight", "classifier", ids.classifier_weight});
    ids.leaves.push_back({"classifier.bias", "classifier", ids.classifier_bias});
    return ids;
}

template <typename T>
std::size_t demo_net_logits(ad::Tape<T>& tape, std::size_t clip, const DemoNet<T>& net, const NetIds& ids,
                            NetTrace* trace) {
    const auto& x = tape.value(clip);
    if (x.rank() != 4 || x.extent(0) != net.spec.in_channels) {
        throw ShapeError("demo_net: clip must be " + std::to_string(net.spec.in_channels) + " x L x H x W, got " +
                         shape_str(x.shape()));
    }
    const std::size_t frames = x.extent(1);
    std::vector<std::size_t> stemmed(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t f = ad::slice_frame(tape, clip, t);
        stemmed[t] = ad::relu(tape, ad::conv2d(tape, f, ids.stem.weight, ids.stem.bias));
    }
    std::size_t h = ad::stack_frames(tape, std::span<const std::size_t>(stemmed));
    if (trace) trace->blocks.resize(ids.blocks.size());
    for (std::size_t b = 0; b < ids.blocks.size(); ++b) {
        if (trace) trace->block_inputs.push_back(h);
        h = ad::relu(tape, block_forward(tape, h, net.spec.block, ids.blocks[b], trace ? &trace->blocks[b] : nullptr));
    }
    return ad::affine(tape, ad::mean_pool(tape, h), ids.classifier_weight, ids.classifier_bias);
}

template <typename T>
BasicTensor<T> demo_net_forward(std::span<const BasicTensor<T>> clips, const DemoNet<T>& net) {
    net.validate();
    BasicTensor<T> logits({clips.size(), net.spec.num_classes});
    for (std::size_t i = 0; i < clips.size(); ++i) {
        ad::Tape<T> tape(false);
        const NetIds ids = register_net(tape, net);
        const auto& row = tape.value(demo_net_logits(tape, tape.leaf(clips[i]), net, ids));
        std::copy(row.ptr(), row.ptr() + row.size(), logits.ptr() + i * net.spec.num_classes);
    }
    return logits;
}

#define SIFA_INSTANTIATE(T)                                                                                      \
    template struct BlockParams<T>;                                                                               \
    template struct DemoNet<T>;                                                                                   \
    template BlockIds register_block<T>(ad::Tape<T>&, const BlockParams<T>&, const std::string&,                  \
                                        std::vector<ParamLeaf>*);                                                 \
    template std::size_t block_forward<T>(ad::Tape<T>&, std::size_t, const SifaConfig&, const BlockIds&,          \
                                          BlockTrace*);                                                           \
    template BasicTensor<T> sifa_block_forward<T>(const BasicTensor<T>&, const SifaConfig&, const BlockParams<T>&); \
    template BasicTensor<T> sifa_c_forward<T>(const BasicTensor<T>&, const SifaConfig&, const BlockParams<T>&);   \
    template BasicTensor<T> sifa_star_forward<T>(const BasicTensor<T>&, const SifaConfig&, const BlockParams<T>&); \
    template BasicTensor<T> temporal_conv_baseline<T>(const BasicTensor<T>&, const BasicTensor<T>&);              \
    template std::size_t temporal_conv<T>(ad::Tape<T>&, std::size_t, std::size_t);                                \
    template std::vector<std::pair<NamedParam, BasicTensor<T>*>> named_parameters<T>(DemoNet<T>&);                \
    template std::vector<std::pair<NamedParam, const BasicTensor<T>*>> named_parameters<T>(const DemoNet<T>&);    \
    template NetIds register_net<T>(ad::Tape<T>&, const DemoNet<T>&);                                             \
    template std::size_t demo_net_logits<T>(ad::Tape<T>&, std::size_t, const DemoNet<T>&, const NetIds&,          \
                                            NetTrace*);                                                           \
    template BasicTensor<T> demo_net_forward<T>(std::span<const BasicTensor<T>>, const DemoNet<T>&);

SIFA_INSTANTIATE(float)
SIFA_INSTANTIATE(double)

#undef SIFA_INSTANTIATE

}  // namespace sifa
