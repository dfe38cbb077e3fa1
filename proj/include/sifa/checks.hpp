#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sifa/autodiff.hpp"
#include "sifa/blocks.hpp"

// Reusable verification runs: optimized-vs-oracle fixtures and the
// finite-difference gradient suite.
namespace sifa::checks {

struct FixtureShape {
    std::size_t channels = 4, frames = 2, height = 5, width = 5;
};

struct FixtureResult {
    std::string label;
    double diff_f32 = 0.0;  // max abs diff, single precision
    double diff_f64 = 0.0;  // max abs diff, double precision
    bool pass = false;
};

inline constexpr double kOracleTolF32 = 1e-5;
inline constexpr double kOracleTolF64 = 1e-11;

// Random clip and parameters (offset estimators and projections drawn at
// random so samples land off the grid), both precisions against the oracle.
FixtureResult run_oracle_fixture(const SifaConfig& cfg, const FixtureShape& shape, std::uint64_t seed);

// `count` fixtures cycling through every variant, both norms, k in {1,3,5},
// C in {4,16}, L in {1,2,4,8}, H = W in {5,8}.
std::vector<FixtureResult> random_oracle_fixtures(std::size_t count, std::uint64_t seed);

// Random block parameters in double precision.
BlockParams<double> random_block_params(const SifaConfig& cfg, std::size_t channels, std::uint64_t seed,
                                        double offset_scale = 0.3);

// Finite-difference checks of every continuous-input primitive: conv2d,
// the saliency chain, bilinear sampling (frame and position), attend
// (regular and deformable, both norms), correlate, temporal conv, relu,
// mean pool, affine and softmax cross-entropy.
std::vector<ad::GradReport> primitive_gradchecks(std::size_t k, std::uint64_t seed,
                                                 const ad::FiniteDiffOptions& options = {});

// Every parameter of a small demo net built with `cfg`, plus the input clip.
std::vector<ad::GradReport> demo_net_gradcheck(const SifaConfig& cfg, std::uint64_t seed,
                                               const ad::FiniteDiffOptions& options = {});

}  // namespace sifa::checks
