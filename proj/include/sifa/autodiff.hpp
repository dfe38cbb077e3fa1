#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sifa/attention.hpp"
#include "sifa/tensor.hpp"

// Reverse-mode differentiation by replaying explicit per-op backward rules.
namespace sifa::ad {

enum class OpKind : std::uint8_t {
    leaf,
    slice_frame,
    stack_frames,
    add,
    sub,
    mul,
    sigmoid,
    relu,
    conv2d,
    attend,
    correlate,
    temporal_conv,
    mean_pool,
    affine,
    softmax_xent,
    sum,
};

const char* op_name(OpKind op);

class TapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

template <typename T>
class Tape {
public:
    using Id = std::size_t;
    // Adds the contribution of grad_out to each input gradient; `in` holds the
    // input values in the order they were recorded.
    using BackwardFn = std::function<void(const BasicTensor<T>& grad_out, std::span<const BasicTensor<T>* const> in,
                                          std::span<BasicTensor<T>* const> grad_in)>;

    struct Record {
        OpKind op = OpKind::leaf;
        std::vector<Id> inputs;
        BasicTensor<T> value;
        BackwardFn backward;
        std::string name;
        std::vector<std::int64_t> branches;  // non-differentiable branch choices, when tracked
    };

    class Gradients {
    public:
        explicit Gradients(std::vector<BasicTensor<T>> g) : grads_(std::move(g)) {}
        bool has(Id id) const { return id < grads_.size() && !grads_[id].empty(); }
        const BasicTensor<T>& operator[](Id id) const;
        BasicTensor<T> take(Id id) { return std::move(grads_.at(id)); }

    private:
        std::vector<BasicTensor<T>> grads_;
    };

    explicit Tape(bool recording = true, bool track_branches = false)
        : recording_(recording), track_branches_(track_branches) {}

    bool recording() const noexcept { return recording_; }
    bool tracks_branches() const noexcept { return track_branches_; }
    std::size_t size() const noexcept { return records_.size(); }

    Id leaf(BasicTensor<T> value, std::string name = {});
    Id push(OpKind op, std::vector<Id> inputs, BasicTensor<T> value, BackwardFn backward,
            std::vector<std::int64_t> branches = {});

    const BasicTensor<T>& value(Id id) const { return records_.at(id).value; }
    const Record& record(Id id) const { return records_.at(id); }

    // Seeds `output` with `seed` (all ones when empty) and visits records in
    // exact reverse order of recording. `visited`, when given, receives the
    // ids whose backward rule ran.
    Gradients backward(Id output, BasicTensor<T> seed = {}, std::vector<Id>* visited = nullptr) const;

private:
    bool recording_;
    bool track_branches_;
    std::deque<Record> records_;  // stable references across push
};

// ---- primitive ops -------------------------------------------------------

template <typename T>
using Id = typename Tape<T>::Id;

template <typename T>
Id<T> slice_frame(Tape<T>& tape, Id<T> clip, std::size_t t);

template <typename T>
Id<T> stack_frames(Tape<T>& tape, std::span<const Id<T>> frames);

template <typename T>
Id<T> add(Tape<T>& tape, Id<T> a, Id<T> b);

template <typename T>
Id<T> sub(Tape<T>& tape, Id<T> a, Id<T> b);

template <typename T>
Id<T> mul(Tape<T>& tape, Id<T> a, Id<T> b);

template <typename T>
Id<T> sigmoid(Tape<T>& tape, Id<T> a);

template <typename T>
Id<T> relu(Tape<T>& tape, Id<T> a);

// Same-size convolution of a C x H x W frame; padding follows the kernel.
template <typename T>
Id<T> conv2d(Tape<T>& tape, Id<T> x, Id<T> weight, Id<T> bias);

template <typename T>
struct SourceRef {
    Id<T> frame;
    std::optional<Id<T>> offsets;  // 2k^2 x H x W, absent for the regular grid
};

// Aggregated neighbor features (no residual) for every location of `query`.
template <typename T>
Id<T> attend(Tape<T>& tape, Id<T> query, std::span<const SourceRef<T>> sources, std::size_t k, attn::NormMode mode,
             attn::AttentionProbe* probe = nullptr);

template <typename T>
Id<T> correlate(Tape<T>& tape, Id<T> query, Id<T> source, std::size_t k, attn::NormMode mode);

// Mean over every axis but the first: C x ... -> C.
template <typename T>
Id<T> mean_pool(Tape<T>& tape, Id<T> x);

// weight (N x C) * x (C) + bias (N).
template <typename T>
Id<T> affine(Tape<T>& tape, Id<T> x, Id<T> weight, Id<T> bias);

// Cross-entropy of softmax(logits) against an integer label; output shape [1].
template <typename T>
Id<T> softmax_xent(Tape<T>& tape, Id<T> logits, std::size_t label);

template <typename T>
Id<T> sum(Tape<T>& tape, Id<T> x);

// ---- finite-difference checking -------------------------------------------

struct GradReport {
    std::string parameter;
    TensorD analytic;
    TensorD numeric;  // only checked coordinates are filled
    std::vector<std::size_t> checked;
    std::size_t excluded = 0;  // coordinates whose stencil crossed a kink
    double max_rel_err = 0.0;
    bool pass = false;
};

// Relative error with the denominator floored at 1e-8.
double relative_error(double analytic, double numeric);

// Objective value plus a signature of the non-differentiable branch taken
// (bilinear cell and ReLU sign pattern). Stencils whose two evaluations see
// different signatures straddle a kink and are excluded from the comparison.
struct Probe {
    double value = 0.0;
    std::uint64_t branch = 0;
};

struct CheckedParam {
    std::string name;
    TensorD* value = nullptr;           // perturbed in place, restored after each coordinate
    const TensorD* analytic = nullptr;  // same shape as *value
};

struct FiniteDiffOptions {
    double step = 1e-3;
    double tolerance = 1e-4;
    std::size_t max_coords = 256;
    std::uint64_t seed = 0;
};

std::vector<GradReport> finite_diff_check(const std::function<Probe()>& fn, std::span<const CheckedParam> params,
                                          const FiniteDiffOptions& options = {});

std::string render_table(std::span<const GradReport> reports);
std::string render_csv(std::span<const GradReport> reports);

// FNV-1a fold used to build branch signatures.
inline std::uint64_t hash_mix(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ull;
    }
    return h;
}
inline constexpr std::uint64_t kHashSeed = 0xcbf29ce484222325ull;

// Signature of every non-differentiable branch recorded on a tape: bilinear
// cells of deformable samples and the sign pattern of ReLU inputs.
template <typename T>
std::uint64_t branch_signature(const Tape<T>& tape);

}  // namespace sifa::ad
