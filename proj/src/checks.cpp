#include "sifa/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "sifa/deform.hpp"
#include "sifa/oracle.hpp"

namespace sifa::checks {

namespace {

using Rng = std::mt19937_64;

TensorD uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorD t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

void fill_normal(TensorD& t, Rng& rng, double stddev, double mean = 0.0) {
    std::normal_distribution<double> d(mean, stddev);
    for (auto& v : t.data()) v = d(rng);
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

std::string fixture_label(const SifaConfig& cfg, const FixtureShape& s) {
    return cfg.describe() + " C=" + std::to_string(s.channels) + " L=" + std::to_string(s.frames) +
           " H=" + std::to_string(s.height) + " W=" + std::to_string(s.width);
}

}  // namespace

BlockParams<double> random_block_params(const SifaConfig& cfg, std::size_t channels, std::uint64_t seed,
                                        double offset_scale) {
    Rng rng(seed);
    auto p = BlockParams<double>::init(cfg, channels, rng());
    const double est_std = offset_scale * std::sqrt(3.0 / (9.0 * static_cast<double>(channels)));
    for (auto* est : {&p.offset_estimator, &p.backward_estimator}) {
        if (!*est) continue;
        fill_normal((*est)->weight, rng, est_std);
        fill_normal((*est)->bias, rng, 0.5 * offset_scale);
    }
    if (p.correlation_projection) {
        fill_normal(p.correlation_projection->weight, rng, 1.0 / std::sqrt(static_cast<double>(cfg.k * cfg.k)));
        fill_normal(p.correlation_projection->bias, rng, 0.1);
    }
    if (p.value_projection) {
        auto& w = p.value_projection->weight;
        for (std::size_t o = 0; o < channels; ++o) {
            for (std::size_t c = 0; c < channels; ++c) {
                w[o * channels + c] = (o == c ? 1.0 : 0.0) + std::normal_distribution<double>(0.0, 0.1)(rng);
            }
        }
        fill_normal(p.value_projection->bias, rng, 0.1);
    }
    return p;
}

FixtureResult run_oracle_fixture(const SifaConfig& cfg, const FixtureShape& shape, std::uint64_t seed) {
    Rng rng(seed);
    const TensorD clip = uniform({shape.channels, shape.frames, shape.height, shape.width}, rng);
    const BlockParams<double> params = random_block_params(cfg, shape.channels, rng(), 1.5);

    FixtureResult r;
    r.label = fixture_label(cfg, shape);
    r.diff_f64 = max_abs_diff(sifa_block_forward(clip, cfg, params), oracle::oracle_forward(clip, cfg, params));
    const Tensor clip32 = clip.cast<float>();
    const BlockParams<float> params32 = params.cast<float>();
    r.diff_f32 =
        max_abs_diff(sifa_block_forward(clip32, cfg, params32), oracle::oracle_forward(clip32, cfg, params32));
    r.pass = r.diff_f32 < kOracleTolF32 && r.diff_f64 < kOracleTolF64;
    return r;
}

std::vector<FixtureResult> random_oracle_fixtures(std::size_t count, std::uint64_t seed) {
    static constexpr Variant variants[] = {Variant::correlation_only, Variant::regular_attention, Variant::full,
                                           Variant::star};
    static constexpr OffsetSource sources[] = {OffsetSource::motion_saliency, OffsetSource::next_frame,
                                               OffsetSource::temporal_difference};
    static constexpr std::size_t ks[] = {1, 3, 5};
    static constexpr std::size_t channels[] = {4, 16};
    static constexpr std::size_t frames[] = {1, 2, 4, 8};
    static constexpr std::size_t sizes[] = {5, 8};
    Rng rng(seed);
    std::vector<FixtureResult> out;
    for (std::size_t i = 0; i < count; ++i) {
        SifaConfig cfg = SifaConfig::for_variant(variants[i % 4], ks[(i / 4) % 3]);
        cfg.norm = (i / 2) % 2 ? attn::NormMode::raw : attn::NormMode::softmax;
        cfg.offset_source = sources[(i / 4) % 3];
        if (cfg.variant == Variant::star && i % 3 == 0) cfg.sampling = Sampling::regular;
        cfg.value_projection = cfg.variant != Variant::correlation_only && i % 5 == 0;
        FixtureShape shape;
        shape.channels = channels[rng() % 2];
        shape.frames = frames[rng() % 4];
        if (cfg.variant == Variant::star) shape.frames = std::max<std::size_t>(shape.frames, 2);
        shape.height = shape.width = sizes[rng() % 2];
        out.push_back(run_oracle_fixture(cfg, shape, rng()));
    }
    return out;
}

// ---- gradient suite -------------------------------------------------------

namespace {

using Tape = ad::Tape<double>;
// Records the objective on `tape` and appends, in order, the tape ids of the
// checked parameters to `leaves`.
using Builder = std::function<std::size_t(Tape& tape, std::vector<std::size_t>& leaves)>;

struct Param {
    std::string name;
    TensorD* value;
};

std::vector<ad::GradReport> check(const std::string& prefix, const std::vector<Param>& params, const Builder& build,
                                  const ad::FiniteDiffOptions& options) {
    Tape tape(true);
    std::vector<std::size_t> leaves;
    const std::size_t out = build(tape, leaves);
    if (leaves.size() != params.size()) throw ad::TapeError("gradcheck builder registered the wrong leaf count");
    auto grads = tape.backward(out);
    std::vector<TensorD> analytic;
    for (std::size_t i = 0; i < params.size(); ++i) {
        analytic.push_back(grads.has(leaves[i]) ? grads[leaves[i]] : TensorD(params[i].value->shape()));
    }
    std::vector<ad::CheckedParam> checked;
    for (std::size_t i = 0; i < params.size(); ++i) {
        checked.push_back({prefix + params[i].name, params[i].value, &analytic[i]});
    }
    auto fn = [&] {
        Tape probe(false, true);
        std::vector<std::size_t> ids;
        const std::size_t o = build(probe, ids);
        return ad::Probe{probe.value(o)[0], ad::branch_signature(probe)};
    };
    return finite_diff_check(fn, checked, options);
}

// sum(x * weights), a fixed random linear read-out.
std::size_t readout(Tape& tape, std::size_t x, const TensorD& weights) {
    return ad::sum(tape, ad::mul(tape, x, tape.leaf(weights)));
}

void append(std::vector<ad::GradReport>& dst, std::vector<ad::GradReport> src) {
    for (auto& r : src) dst.push_back(std::move(r));
}

// Distance of the fixture to the nearest kink: deformable sample positions
// to the nearest integer, ReLU inputs to zero.
double kink_margin(const DemoNet<double>& net, const TensorD& clip) {
    Tape tape(false);
    const NetIds ids = register_net(tape, net);
    NetTrace trace;
    demo_net_logits(tape, tape.leaf(clip), net, ids, &trace);
    double margin = 0.5;
    for (const auto& b : trace.blocks) {
        for (const auto* fields : {&b.offsets, &b.backward_offsets}) {
            for (const std::size_t id : *fields) {
                if (id == 0) continue;
                for (const double v : tape.value(id).data()) margin = std::min(margin, std::abs(v - std::round(v)));
            }
        }
    }
    for (std::size_t id = 0; id < tape.size(); ++id) {
        const auto& rec = tape.record(id);
        if (rec.op != ad::OpKind::relu) continue;
        // Exact zeros sit downstream of dead units, which are checked themselves.
        for (const double v : tape.value(rec.inputs[0]).data()) {
            if (v != 0.0) margin = std::min(margin, std::abs(v));
        }
    }
    return margin;
}

}  // namespace

std::vector<ad::GradReport> primitive_gradchecks(std::size_t k, std::uint64_t seed,
                                                 const ad::FiniteDiffOptions& options) {
    Rng rng(seed);
    std::vector<ad::GradReport> reports;
    const std::size_t kk = k * k;
    auto leaves_for = [](Tape& tape, std::vector<std::size_t>& leaves, std::initializer_list<const TensorD*> ts) {
        for (const TensorD* t : ts) leaves.push_back(tape.leaf(*t));
    };

    {
        TensorD x = uniform({3, 5, 5}, rng), w = uniform({4, 3, 3, 3}, rng), b = uniform({4}, rng);
        const TensorD r = uniform({4, 5, 5}, rng);
        append(reports, check("conv2d.", {{"input", &x}, {"weight", &w}, {"bias", &b}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&x, &w, &b});
                                  return readout(t, ad::conv2d(t, l[0], l[1], l[2]), r);
                              },
                              options));
    }
    {
        TensorD cur = uniform({3, 4, 4}, rng), next = uniform({3, 4, 4}, rng);
        const TensorD r = uniform({3, 4, 4}, rng);
        append(reports, check("saliency.", {{"frame", &cur}, {"next", &next}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&cur, &next});
                                  const std::size_t m = ad::mul(t, ad::sigmoid(t, ad::sub(t, l[1], l[0])), l[1]);
                                  return readout(t, m, r);
                              },
                              options));
    }
    {
        TensorD x = uniform({2, 4, 4}, rng);
        const TensorD r = uniform({2, 4, 4}, rng);
        append(reports, check("relu.", {{"input", &x}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&x});
                                  return readout(t, ad::relu(t, l[0]), r);
                              },
                              options));
    }
    {
        // Direct sampler check: frame values and the fractional position.
        TensorD frame = uniform({3, 5, 5}, rng);
        TensorD pos({2}, {1.37, 2.71});
        const std::vector<double> r{0.7, -1.3, 0.4};
        auto value = [&] {
            const auto s = deform::bilinear_sample(frame, {pos[0], pos[1]});
            double acc = 0.0;
            for (std::size_t c = 0; c < 3; ++c) acc += r[c] * s[c];
            const auto st = deform::bilinear_stencil({pos[0], pos[1]});
            return ad::Probe{acc, ad::hash_mix(ad::hash_mix(ad::kHashSeed, st.r0), st.c0)};
        };
        TensorD gframe(frame.shape());
        const auto d = deform::bilinear_backward(frame, {pos[0], pos[1]}, std::span<const double>(r), &gframe);
        const TensorD gpos({2}, {d.row, d.col});
        const std::vector<ad::CheckedParam> ps{{"bilinear.frame", &frame, &gframe}, {"bilinear.position", &pos, &gpos}};
        append(reports, ad::finite_diff_check(value, ps, options));
    }
    for (const auto mode : {attn::NormMode::softmax, attn::NormMode::raw}) {
        const std::string tag = std::string("[") + to_string(mode) + "].";
        // Moderate feature scale keeps the softmax curvature small next to the slopes.
        TensorD q = uniform({4, 5, 5}, rng, -0.5, 0.5), f = uniform({4, 5, 5}, rng, -0.5, 0.5),
                g = uniform({4, 5, 5}, rng, -0.5, 0.5);
        TensorD off = uniform({2 * kk, 5, 5}, rng, -1.5, 1.5), off2 = uniform({2 * kk, 5, 5}, rng, -1.5, 1.5);
        const TensorD r = uniform({4, 5, 5}, rng);
        append(reports, check("attend_regular" + tag, {{"query", &q}, {"frame", &f}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&q, &f});
                                  const ad::SourceRef<double> src[] = {{l[1], std::nullopt}};
                                  return readout(t, ad::attend(t, l[0], std::span<const ad::SourceRef<double>>(src), k, mode), r);
                              },
                              options));
        append(reports, check("attend_deformable" + tag, {{"query", &q}, {"frame", &f}, {"offsets", &off}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&q, &f, &off});
                                  const ad::SourceRef<double> src[] = {{l[1], l[2]}};
                                  return readout(t, ad::attend(t, l[0], std::span<const ad::SourceRef<double>>(src), k, mode), r);
                              },
                              options));
        append(reports, check("attend_joint" + tag,
                              {{"query", &q}, {"next", &f}, {"next_offsets", &off}, {"prev", &g}, {"prev_offsets", &off2}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&q, &f, &off, &g, &off2});
                                  const ad::SourceRef<double> src[] = {{l[1], l[2]}, {l[3], l[4]}};
                                  return readout(t, ad::attend(t, l[0], std::span<const ad::SourceRef<double>>(src), k, mode), r);
                              },
                              options));
        const TensorD rc = uniform({kk, 5, 5}, rng);
        append(reports, check("correlate" + tag, {{"query", &q}, {"source", &f}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&q, &f});
                                  return readout(t, ad::correlate(t, l[0], l[1], k, mode), rc);
                              },
                              options));
    }
    {
        TensorD clip = uniform({3, 4, 4, 4}, rng), kernel = uniform({3, 3}, rng);
        const TensorD r = uniform({3, 4, 4, 4}, rng);
        append(reports, check("temporal_conv.", {{"clip", &clip}, {"kernel", &kernel}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&clip, &kernel});
                                  return readout(t, temporal_conv(t, l[0], l[1]), r);
                              },
                              options));
    }
    {
        TensorD x = uniform({4, 3, 3}, rng), w = uniform({5, 4}, rng), b = uniform({5}, rng);
        append(reports, check("classifier_head.", {{"features", &x}, {"weight", &w}, {"bias", &b}},
                              [&](Tape& t, std::vector<std::size_t>& l) {
                                  leaves_for(t, l, {&x, &w, &b});
                                  return ad::softmax_xent(t, ad::affine(t, ad::mean_pool(t, l[0]), l[1], l[2]), 1);
                              },
                              options));
    }
    return reports;
}

std::vector<ad::GradReport> demo_net_gradcheck(const SifaConfig& cfg, std::uint64_t seed,
                                               const ad::FiniteDiffOptions& options) {
    Rng rng(seed);
    DemoSpec spec;
    spec.block = cfg;
    spec.channels = 4;
    spec.num_classes = 5;
    DemoNet<double> net = DemoNet<double>::init(spec, rng());
    std::uniform_real_distribution<double> frac(0.2, 0.8);
    for (auto& b : net.blocks) {
        b = random_block_params(cfg, spec.channels, rng(), 0.1);
        // Biases put the samples well inside a bilinear cell.
        for (auto* est : {&b.offset_estimator, &b.backward_estimator}) {
            if (!*est) continue;
            for (double& v : (*est)->bias.data()) v = (rng() % 2 ? 1.0 : -1.0) * frac(rng);
        }
    }
    // Small features keep the curvature of the raw (cubic) aggregation low;
    // a positive stem bias keeps most ReLU inputs away from zero.
    for (double& v : net.stem.weight.data()) v *= 0.2;
    fill_normal(net.stem.bias, rng, 0.02, 0.1);
    fill_normal(net.classifier_bias, rng, 0.1);
    // Redraw the clip until no kink lies within reach of the finite-difference
    // stencil: 1e-3 for sample positions, 2e-3 for ReLU inputs.
    TensorD clip;
    for (int attempt = 0;; ++attempt) {
        clip = uniform({1, 2, 4, 4}, rng, 0.0, 0.25);
        if (kink_margin(net, clip) >= 2e-3) break;
        if (attempt == 999) throw NumericError("demo_net_gradcheck: no kink-free fixture found");
    }

    std::vector<Param> params;
    for (auto& [np, tensor] : named_parameters(net)) params.push_back({np.name, tensor});
    params.push_back({"input", &clip});
    std::string prefix = std::string("net[") + to_string(cfg.variant) + ",k" + std::to_string(cfg.k) + "," +
                         to_string(cfg.norm);
    if (cfg.sampling == Sampling::deformable) prefix += std::string(",") + to_string(cfg.offset_source);
    prefix += "].";
    return check(prefix, params,
                 [&](Tape& t, std::vector<std::size_t>& l) {
                     const NetIds ids = register_net(t, net);
                     for (const auto& leaf : ids.leaves) l.push_back(leaf.id);
                     const std::size_t x = t.leaf(clip);
                     l.push_back(x);
                     return ad::softmax_xent(t, demo_net_logits(t, x, net, ids), 2);
                 },
                 options);
}

}  // namespace sifa::checks
