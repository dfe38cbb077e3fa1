#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "golden_fixture.hpp"
#include "sifa/blocks.hpp"
#include "sifa/checks.hpp"
#include "sifa/oracle.hpp"
#include "sifa/tensor_io.hpp"
#include "test_util.hpp"

using namespace sifa;

#ifndef SIFA_GOLDEN_DIR
#error "SIFA_GOLDEN_DIR must point at tests/golden"
#endif

namespace {

const Variant kVariants[] = {Variant::correlation_only, Variant::regular_attention, Variant::full, Variant::star};

// Frame t of a C x L x H x W clip.
template <typename T>
BasicTensor<T> frame_of(const BasicTensor<T>& clip, std::size_t t) {
    const std::size_t c = clip.extent(0), l = clip.extent(1), hw = clip.extent(2) * clip.extent(3);
    BasicTensor<T> f({c, clip.extent(2), clip.extent(3)});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) f[ch * hw + i] = clip[(ch * l + t) * hw + i];
    return f;
}

template <typename T>
void perturb_frame(BasicTensor<T>& clip, std::size_t t, std::mt19937_64& rng) {
    const std::size_t c = clip.extent(0), l = clip.extent(1), hw = clip.extent(2) * clip.extent(3);
    std::uniform_real_distribution<double> d(-1, 1);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) clip[(ch * l + t) * hw + i] += static_cast<T>(d(rng));
}

BlockParams<float> random_params(const SifaConfig& cfg, std::size_t channels, std::uint64_t seed) {
    return checks::random_block_params(cfg, channels, seed, 1.0).cast<float>();
}

}  // namespace

TEST(Config, VariantRules) {
    for (auto v : kVariants) EXPECT_NO_THROW(SifaConfig::for_variant(v, 3).validate());
    SifaConfig c = SifaConfig::for_variant(Variant::correlation_only, 3);
    c.sampling = Sampling::deformable;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SifaConfig::for_variant(Variant::correlation_only, 3);
    c.value_projection = true;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SifaConfig::for_variant(Variant::full, 3);
    c.sampling = Sampling::regular;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SifaConfig::for_variant(Variant::star, 3);
    c.sampling = Sampling::regular;
    EXPECT_NO_THROW(c.validate());
    c.k = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(SifaConfig::for_variant(Variant::star, 3).pool_size(), 18u);
    EXPECT_EQ(SifaConfig::for_variant(Variant::full, 5).pool_size(), 25u);
}

TEST(Config, EstimatorChannels) {
    const auto p = BlockParams<float>::init(SifaConfig::for_variant(Variant::full, 3), 16, 0);
    ASSERT_TRUE(p.offset_estimator);
    EXPECT_EQ(p.offset_estimator->out_channels(), 18u);
    EXPECT_FALSE(p.backward_estimator);
    const auto s = BlockParams<float>::init(SifaConfig::for_variant(Variant::star, 5), 8, 0);
    ASSERT_TRUE(s.backward_estimator);
    EXPECT_EQ(s.backward_estimator->out_channels(), 50u);
    EXPECT_THROW(p.validate(SifaConfig::for_variant(Variant::star, 3), 16), ConfigError);
}

TEST(Block, ShapePreserved) {
    std::mt19937_64 rng(1);
    for (auto v : kVariants)
        for (std::size_t frames : {2u, 3u}) {
            const auto cfg = SifaConfig::for_variant(v, 3);
            const auto clip = test::random_tensor<float>({4, frames, 5, 6}, rng);
            EXPECT_EQ(sifa_block_forward(clip, cfg, random_params(cfg, 4, 3)).shape(), clip.shape());
        }
}

TEST(Block, ZeroClipGivesZero) {
    const auto zero = Tensor({4, 3, 5, 5});
    for (auto v : {Variant::regular_attention, Variant::full, Variant::star}) {
        const auto cfg = SifaConfig::for_variant(v, 3);
        const auto y = sifa_block_forward(zero, cfg, BlockParams<float>::init(cfg, 4, 0));
        for (float x : y.data()) EXPECT_EQ(x, 0.0f);
    }
    // Raw correlations of a zero clip vanish; the projection has no bias at init.
    auto cfg = SifaConfig::for_variant(Variant::correlation_only, 3);
    cfg.norm = attn::NormMode::raw;
    const auto yc = sifa_c_forward(zero, cfg, BlockParams<float>::init(cfg, 4, 0));
    for (float x : yc.data()) EXPECT_EQ(x, 0.0f);
}

TEST(Block, ZeroOffsetsEqualRegular) {
    std::mt19937_64 rng(2);
    const auto clip = test::random_tensor<float>({4, 4, 6, 6}, rng);
    for (std::size_t k : {1u, 3u, 5u})
        for (auto norm : {attn::NormMode::raw, attn::NormMode::softmax}) {
            auto full = SifaConfig::for_variant(Variant::full, k);
            auto reg = SifaConfig::for_variant(Variant::regular_attention, k);
            full.norm = reg.norm = norm;
            const auto a = sifa_block_forward(clip, full, BlockParams<float>::init(full, 4, 0));
            const auto b = sifa_block_forward(clip, reg, BlockParams<float>::init(reg, 4, 0));
            EXPECT_EQ(a, b);

            auto star = SifaConfig::for_variant(Variant::star, k), star_reg = star;
            star.norm = star_reg.norm = norm;
            star_reg.sampling = Sampling::regular;
            EXPECT_EQ(sifa_star_forward(clip, star, BlockParams<float>::init(star, 4, 0)),
                      sifa_star_forward(clip, star_reg, BlockParams<float>::init(star_reg, 4, 0)));
        }
}

TEST(Block, SingleNeighborSoftmaxAddsNextFrame) {
    std::mt19937_64 rng(3);
    const auto clip = test::random_tensor<float>({3, 3, 4, 4}, rng, -5, 5);
    const auto cfg = SifaConfig::for_variant(Variant::regular_attention, 1);
    const auto y = sifa_block_forward(clip, cfg, BlockParams<float>::init(cfg, 3, 0));
    for (std::size_t t = 0; t < 3; ++t) {
        const auto q = frame_of(clip, t), v = frame_of(clip, std::min<std::size_t>(t + 1, 2)), out = frame_of(y, t);
        for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(out[i], q[i] + v[i]);
    }
}

TEST(Block, SingleFrameAttendsItself) {
    std::mt19937_64 rng(4);
    const auto clip = test::random_tensor<double>({4, 1, 5, 5}, rng);
    const auto cfg = SifaConfig::for_variant(Variant::full, 3);
    const auto params = BlockParams<double>::init(cfg, 4, 0);
    const auto y = sifa_block_forward(clip, cfg, params);
    EXPECT_LT(test::max_abs_diff(y, oracle::oracle_forward(clip, cfg, params)), 1e-12);
    // Same as attending the frame to itself on the regular grid.
    const auto f = frame_of(clip, 0);
    const attn::Source<double> src[] = {{&f, nullptr}};
    const auto agg = attn::attend_frame<double>(f, src, 3, attn::NormMode::softmax);
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(y[i], f[i] + agg[i], 1e-15);
}

TEST(Block, TemporalLocality) {
    std::mt19937_64 rng(5);
    for (auto v : {Variant::correlation_only, Variant::regular_attention, Variant::full}) {
        const auto cfg = SifaConfig::for_variant(v, 3);
        const auto params = random_params(cfg, 4, 11);
        const auto clip = test::random_tensor<float>({4, 5, 6, 6}, rng);
        const auto base = sifa_block_forward(clip, cfg, params);
        for (std::size_t t = 0; t + 2 < 5; ++t) {
            auto moved = clip;
            perturb_frame(moved, t + 2, rng);
            const auto y = sifa_block_forward(moved, cfg, params);
            EXPECT_EQ(frame_of(y, t), frame_of(base, t)) << to_string(v) << " t=" << t;
            EXPECT_NE(frame_of(y, t + 1), frame_of(base, t + 1)) << to_string(v) << " t=" << t;
        }
    }
}

TEST(Block, LastFrameIgnoresOthers) {
    std::mt19937_64 rng(6);
    for (auto v : {Variant::correlation_only, Variant::regular_attention, Variant::full}) {
        const auto cfg = SifaConfig::for_variant(v, 3);
        const auto params = random_params(cfg, 4, 12);
        const auto clip = test::random_tensor<float>({4, 4, 5, 5}, rng);
        auto moved = clip;
        for (std::size_t t = 0; t < 3; ++t) perturb_frame(moved, t, rng);
        EXPECT_EQ(frame_of(sifa_block_forward(moved, cfg, params), 3), frame_of(sifa_block_forward(clip, cfg, params), 3));
    }
}

TEST(Block, StarDependsOnNeighborsOnly) {
    std::mt19937_64 rng(7);
    const auto cfg = SifaConfig::for_variant(Variant::star, 3);
    const auto params = random_params(cfg, 4, 13);
    const auto clip = test::random_tensor<float>({4, 6, 5, 5}, rng);
    const auto base = sifa_star_forward(clip, cfg, params);
    for (std::size_t s = 0; s < 6; ++s) {
        auto moved = clip;
        perturb_frame(moved, s, rng);
        const auto y = sifa_star_forward(moved, cfg, params);
        for (std::size_t t = 0; t < 6; ++t) {
            const bool near = s + 1 >= t && s <= t + 1;
            if (near) {
                EXPECT_NE(frame_of(y, t), frame_of(base, t)) << "s=" << s << " t=" << t;
            } else {
                EXPECT_EQ(frame_of(y, t), frame_of(base, t)) << "s=" << s << " t=" << t;
            }
        }
    }
    EXPECT_THROW(sifa_star_forward(test::random_tensor<float>({4, 1, 5, 5}, rng), cfg, params), ShapeError);
}

TEST(Block, StarBoundaryRule) {
    std::mt19937_64 rng(8);
    const auto cfg = SifaConfig::for_variant(Variant::star, 3);
    const auto params = checks::random_block_params(cfg, 3, 14, 1.0);
    const auto clip = test::random_tensor<double>({3, 2, 5, 5}, rng);
    const auto y = sifa_star_forward(clip, cfg, params);
    const auto f0 = frame_of(clip, 0), f1 = frame_of(clip, 1);
    // msm(t, neighbor) = sigmoid(neighbor - f_t) * neighbor
    auto offsets = [&](const TensorD& q, const TensorD& n, const BasicConv2dParams<double>& est) {
        return deform::estimate_offsets(deform::motion_saliency(deform::temporal_difference(q, n), n).values, est, 3).values;
    };
    // frame 0: forward to frame 1, backward to itself; frame 1: forward to itself, backward to frame 0.
    const std::pair<const TensorD*, std::pair<const TensorD*, const TensorD*>> plan[] = {{&f0, {&f1, &f0}},
                                                                                         {&f1, {&f1, &f0}}};
    for (std::size_t t = 0; t < 2; ++t) {
        const TensorD& q = *plan[t].first;
        const TensorD &next = *plan[t].second.first, &prev = *plan[t].second.second;
        const auto on = offsets(q, next, *params.offset_estimator), op = offsets(q, prev, *params.backward_estimator);
        const attn::Source<double> src[] = {{&next, &on}, {&prev, &op}};
        const auto agg = attn::attend_frame<double>(q, src, 3, cfg.norm);
        const auto out = frame_of(y, t);
        for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(out[i], q[i] + agg[i], 1e-12);
    }
}

TEST(Block, MatchesOracle) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto cfg = SifaConfig::for_variant(kVariants[seed % 4], seed % 3 == 0 ? 5 : 3);
        const auto r = checks::run_oracle_fixture(cfg, {4, 3, 6, 6}, seed);
        EXPECT_TRUE(r.pass) << r.label << " f32 " << r.diff_f32 << " f64 " << r.diff_f64;
    }
}

TEST(CorrelationOnly, MatchesPerQueryLoop) {
    std::mt19937_64 rng(9);
    const auto cfg = SifaConfig::for_variant(Variant::correlation_only, 3);
    const auto params = checks::random_block_params(cfg, 4, 15);
    const auto clip = test::random_tensor<double>({4, 2, 5, 5}, rng);
    const auto y = sifa_c_forward(clip, cfg, params);
    const auto& proj = *params.correlation_projection;
    for (std::size_t t = 0; t < 2; ++t) {
        const auto q = frame_of(clip, t), n = frame_of(clip, 1);
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 5; ++c) {
                std::vector<double> qv(4);
                for (std::size_t i = 0; i < 4; ++i) qv[i] = q.at({i, r, c});
                const auto nb = deform::extract_neighbors<double>(n, r, c, 3, nullptr);
                const auto w = attn::normalize(attn::correlate<double>(qv, nb.keys), cfg.norm, 4);
                for (std::size_t o = 0; o < 4; ++o) {
                    double acc = proj.bias[o];
                    for (std::size_t g = 0; g < 9; ++g) acc += proj.weight[o * 9 + g] * w.values[g];
                    EXPECT_NEAR(y.at({o, t, r, c}), qv[o] + acc, 1e-12);
                }
            }
    }
    EXPECT_THROW(sifa_c_forward(clip, SifaConfig::for_variant(Variant::full, 3), params), ConfigError);
}

TEST(TemporalConv, Kernels) {
    std::mt19937_64 rng(10);
    const auto clip = test::random_tensor<double>({2, 4, 3, 3}, rng);
    EXPECT_EQ(temporal_conv_baseline(clip, TensorD({2, 3}, {0, 1, 0, 0, 1, 0})), clip);

    const auto flat = TensorD::full({2, 4, 3, 3}, 3.0);
    const auto avg = temporal_conv_baseline(flat, TensorD::full({2, 3}, 1.0 / 3.0));
    for (std::size_t t = 0; t < 4; ++t) {
        const double expect = (t == 0 || t == 3) ? 2.0 : 3.0;
        const auto ft = frame_of(avg, t);
        for (double v : ft.data()) EXPECT_NEAR(v, expect, 1e-15);
    }

    const auto kernel = test::random_tensor<double>({2, 3}, rng);
    const auto y = temporal_conv_baseline(clip, kernel);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    double acc = 0.0;
                    for (int tap = 0; tap < 3; ++tap) {
                        const long s = long(t) - 1 + tap;
                        if (s >= 0 && s < 4) acc += kernel.at({c, std::size_t(tap)}) * clip.at({c, std::size_t(s), i, j});
                    }
                    EXPECT_NEAR(y.at({c, t, i, j}), acc, 1e-15);
                }
}

TEST(Flops, ClosedForms) {
    const auto k1 = SifaConfig::for_variant(Variant::regular_attention, 1);
    EXPECT_EQ(flop_count(k1, 16, 1, 1, 1), 2u * 16u);
    EXPECT_EQ(flop_count(k1, 16, 8, 14, 14), 2u * 16u * 8u * 14u * 14u);

    std::uint64_t prev = 0;
    for (std::size_t k : {1u, 3u, 5u, 7u, 9u}) {
        const auto n = flop_count(SifaConfig::for_variant(Variant::full, k), 64, 8, 14, 14);
        EXPECT_GT(n, prev);
        prev = n;
    }

    // Deformable minus regular: offset conv plus four MACs per sampled scalar.
    const std::uint64_t c = 8, l = 3, h = 5, w = 7, kk = 9, q = l * h * w;
    const auto def = flop_count(SifaConfig::for_variant(Variant::full, 3), c, l, h, w);
    const auto reg = flop_count(SifaConfig::for_variant(Variant::regular_attention, 3), c, l, h, w);
    EXPECT_EQ(def - reg, q * (2 * kk) * c * 9 + 4 * c * kk * q);
}

TEST(Flops, MatchInstrumentedCounter) {
    std::mt19937_64 rng(11);
    for (auto v : kVariants)
        for (std::size_t k : {1u, 3u}) {
            auto cfg = SifaConfig::for_variant(v, k);
            for (bool vp : {false, true}) {
                if (vp && v == Variant::correlation_only) continue;
                cfg.value_projection = vp;
                const auto clip = test::random_tensor<double>({3, 2, 4, 5}, rng);
                oracle::OpCounter counter;
                oracle::oracle_forward(clip, cfg, checks::random_block_params(cfg, 3, 1), &counter);
                EXPECT_EQ(counter.macs, flop_count(cfg, 3, 2, 4, 5)) << cfg.describe();
            }
        }
}

TEST(DemoNet, ZeroClassifierGivesBias) {
    DemoSpec spec;
    spec.channels = 4;
    auto net = DemoNet<float>::init(spec, 1);
    net.classifier_weight.fill(0.0f);
    for (std::size_t i = 0; i < spec.num_classes; ++i) net.classifier_bias[i] = 0.5f * float(i);
    std::mt19937_64 rng(12);
    const std::vector<Tensor> clips{test::random_tensor<float>({1, 3, 6, 6}, rng), test::random_tensor<float>({1, 3, 6, 6}, rng)};
    const auto logits = demo_net_forward<float>(clips, net);
    ASSERT_EQ(logits.shape(), (Shape{2, spec.num_classes}));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < spec.num_classes; ++i) EXPECT_EQ(logits.at({n, i}), net.classifier_bias[i]);
}

TEST(DemoNet, IdenticalClipsIdenticalRows) {
    DemoSpec spec;
    spec.channels = 6;
    const auto net = DemoNet<float>::init(spec, 2);
    std::mt19937_64 rng(13);
    const auto clip = test::random_tensor<float>({1, 3, 6, 6}, rng);
    const std::vector<Tensor> clips{clip, clip, clip};
    const auto logits = demo_net_forward<float>(clips, net);
    for (std::size_t i = 0; i < spec.num_classes; ++i) {
        EXPECT_TRUE(std::isfinite(logits.at({0, i})));
        EXPECT_EQ(logits.at({0, i}), logits.at({1, i}));
        EXPECT_EQ(logits.at({0, i}), logits.at({2, i}));
    }
}

TEST(DemoNet, GoldenLogits) {
    const auto golden = read_tensor_as<double>(std::filesystem::path(SIFA_GOLDEN_DIR) / "demo_logits.sifa");
    const auto net = test::golden_net().cast<float>();
    std::vector<Tensor> clips;
    for (const auto& c : test::golden_clips()) clips.push_back(c.cast<float>());
    const auto logits = demo_net_forward<float>(clips, net);
    ASSERT_EQ(logits.shape(), golden.shape());
    EXPECT_LT(test::max_abs_diff(logits, golden), 1e-5);
}

TEST(DemoNet, ParameterOrder) {
    DemoSpec spec;
    spec.block = SifaConfig::for_variant(Variant::star, 3);
    spec.block.value_projection = true;
    auto net = DemoNet<float>::init(spec, 3);
    std::vector<std::string> names;
    for (const auto& [np, t] : named_parameters(net)) names.push_back(np.name);
    const std::vector<std::string> expected{
        "stem.weight", "stem.bias",
        "block0.offset.weight", "block0.offset.bias", "block0.offset_prev.weight", "block0.offset_prev.bias",
        "block0.value_proj.weight", "block0.value_proj.bias",
        "block1.offset.weight", "block1.offset.bias", "block1.offset_prev.weight", "block1.offset_prev.bias",
        "block1.value_proj.weight", "block1.value_proj.bias",
        "classifier.weight", "classifier.bias"};
    EXPECT_EQ(names, expected);
}
