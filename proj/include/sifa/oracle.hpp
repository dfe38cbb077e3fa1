#pragma once

#include <cstdint>

#include "sifa/blocks.hpp"
#include "sifa/tensor.hpp"

// Deliberately naive re-implementation of a block forward pass, used as the
// reference for the optimized path. Shares nothing with it but the tensor
// and config types.
namespace sifa::oracle {

// Multiply-accumulates performed, tallied one scalar at a time.
struct OpCounter {
    std::uint64_t macs = 0;
};

template <typename T>
BasicTensor<T> oracle_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params,
                              OpCounter* counter = nullptr);

}  // namespace sifa::oracle
