#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sifa/attention.hpp"
#include "sifa/autodiff.hpp"
#include "sifa/tensor.hpp"

// Clip-level inter-frame attention blocks, their variants and baselines,
// and the small classifier used by the training demo.
namespace sifa {

enum class Sampling { regular, deformable };
enum class OffsetSource { next_frame, temporal_difference, motion_saliency };
enum class Variant { correlation_only, regular_attention, full, star };

const char* to_string(Sampling s);
const char* to_string(OffsetSource s);
const char* to_string(Variant v);
const char* to_string(attn::NormMode m);

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SifaConfig {
    std::size_t k = 3;
    Sampling sampling = Sampling::deformable;
    OffsetSource offset_source = OffsetSource::motion_saliency;
    attn::NormMode norm = attn::NormMode::softmax;
    Variant variant = Variant::full;
    bool value_projection = false;  // 1x1 conv on the aggregated features

    // correlation_only and regular_attention sample the regular grid, full
    // deforms it; star may do either.
    static SifaConfig for_variant(Variant v, std::size_t k);

    // Neighbors pooled per query: k^2, or 2k^2 for star.
    std::size_t pool_size() const;
    void validate() const;
    std::string describe() const;
};

template <typename T>
struct BlockParams {
    std::optional<BasicConv2dParams<T>> offset_estimator;       // from frame t+1, 2k^2 out channels
    std::optional<BasicConv2dParams<T>> backward_estimator;     // star only, from frame t-1
    std::optional<BasicConv2dParams<T>> correlation_projection; // correlation_only: k^2 -> C, 1x1
    std::optional<BasicConv2dParams<T>> value_projection;       // C -> C, 1x1

    // Zero offset estimators, identity value projection, and a correlation
    // projection drawn from N(0, scale^2 / k^2).
    static BlockParams init(const SifaConfig& cfg, std::size_t channels, std::uint64_t seed,
                            double projection_scale = 1.0);
    void validate(const SifaConfig& cfg, std::size_t channels) const;

    template <typename U>
    BlockParams<U> cast() const {
        BlockParams<U> out;
        auto conv = [](const auto& p) { return p ? std::optional(p->template cast<U>()) : std::nullopt; };
        out.offset_estimator = conv(offset_estimator);
        out.backward_estimator = conv(backward_estimator);
        out.correlation_projection = conv(correlation_projection);
        out.value_projection = conv(value_projection);
        return out;
    }
};

// ---- tape-level assembly --------------------------------------------------

struct ConvIds {
    std::size_t weight = 0;
    std::size_t bias = 0;
};

struct BlockIds {
    std::optional<ConvIds> offset_estimator, backward_estimator, correlation_projection, value_projection;
};

// Named leaves in the order of parameter registration.
struct ParamLeaf {
    std::string name;
    std::string role;
    std::size_t id = 0;
};

template <typename T>
BlockIds register_block(ad::Tape<T>& tape, const BlockParams<T>& params, const std::string& prefix,
                        std::vector<ParamLeaf>* leaves = nullptr);

// Per-frame intermediates captured for visualization.
struct BlockTrace {
    std::optional<std::size_t> probe_frame;
    std::size_t probe_row = 0, probe_col = 0;
    attn::AttentionProbe attention;         // filled for probe_frame
    std::vector<std::size_t> offset_input;  // per frame: tape id of the estimator input (empty if regular)
    std::vector<std::size_t> offsets;       // per frame: tape id of the forward offset field
    std::vector<std::size_t> backward_offsets;  // star only: per frame, the offset field toward t-1
};

template <typename T>
std::size_t block_forward(ad::Tape<T>& tape, std::size_t clip, const SifaConfig& cfg, const BlockIds& ids,
                          BlockTrace* trace = nullptr);

// ---- direct forward entry points -------------------------------------------

// Any variant, C x L x H x W in and out.
template <typename T>
BasicTensor<T> sifa_block_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params);

template <typename T>
BasicTensor<T> sifa_c_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params);

template <typename T>
BasicTensor<T> sifa_star_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params);

// Depthwise 3-tap convolution along time, zero padded; kernel is C x 3 and
// tap j multiplies frame t - 1 + j.
template <typename T>
BasicTensor<T> temporal_conv_baseline(const BasicTensor<T>& clip, const BasicTensor<T>& kernel);

template <typename T>
std::size_t temporal_conv(ad::Tape<T>& tape, std::size_t clip, std::size_t kernel);

// Multiply-accumulate count of one block over a C x L x H x W clip.
// Regular gathers and elementwise ops are free; every bilinear sample costs
// four MACs per channel and every offset-conv tap one MAC, padded or not.
std::uint64_t flop_count(const SifaConfig& cfg, std::size_t channels, std::size_t frames, std::size_t height,
                         std::size_t width);

// ---- demo network ---------------------------------------------------------

struct DemoSpec {
    SifaConfig block;
    std::size_t in_channels = 1;
    std::size_t channels = 16;
    std::size_t blocks = 2;
    std::size_t num_classes = 8;
};

template <typename T>
struct DemoNet {
    DemoSpec spec;
    BasicConv2dParams<T> stem;  // channels x in_channels x 3 x 3
    std::vector<BlockParams<T>> blocks;
    BasicTensor<T> classifier_weight;  // num_classes x channels
    BasicTensor<T> classifier_bias;    // num_classes

    static DemoNet init(const DemoSpec& spec, std::uint64_t seed);
    void validate() const;

    template <typename U>
    DemoNet<U> cast() const {
        DemoNet<U> out;
        out.spec = spec;
        out.stem = stem.template cast<U>();
        for (const auto& b : blocks) out.blocks.push_back(b.template cast<U>());
        out.classifier_weight = classifier_weight.template cast<U>();
        out.classifier_bias = classifier_bias.template cast<U>();
        return out;
    }
};

struct NamedParam {
    std::string name;
    std::string role;
};

// Parameter tensors in a fixed order shared by the optimizer, the manifest
// and the gradient checker.
template <typename T>
std::vector<std::pair<NamedParam, BasicTensor<T>*>> named_parameters(DemoNet<T>& net);
template <typename T>
std::vector<std::pair<NamedParam, const BasicTensor<T>*>> named_parameters(const DemoNet<T>& net);

struct NetIds {
    ConvIds stem;
    std::vector<BlockIds> blocks;
    std::size_t classifier_weight = 0, classifier_bias = 0;
    std::vector<ParamLeaf> leaves;  // same order as named_parameters
};

template <typename T>
NetIds register_net(ad::Tape<T>& tape, const DemoNet<T>& net);

struct NetTrace {
    std::vector<BlockTrace> blocks;
    std::vector<std::size_t> block_inputs;  // tape ids
};

// Logits of one in_channels x L x H x W clip.
template <typename T>
std::size_t demo_net_logits(ad::Tape<T>& tape, std::size_t clip, const DemoNet<T>& net, const NetIds& ids,
                            NetTrace* trace = nullptr);

// Batch x num_classes logits.
template <typename T>
BasicTensor<T> demo_net_forward(std::span<const BasicTensor<T>> clips, const DemoNet<T>& net);

}  // namespace sifa
