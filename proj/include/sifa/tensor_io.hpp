#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <variant>
#include <vector>

#include "sifa/tensor.hpp"

namespace sifa {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Binary layout: "SIFA" magic, version byte (1), dtype byte (1 = f32, 2 = f64),
// rank byte, rank x u32 LE extents, then LE scalars in row-major order.
inline constexpr std::uint8_t kTensorMagic[4] = {0x53, 0x49, 0x46, 0x41};
inline constexpr std::uint8_t kTensorVersion = 1;

using AnyTensor = std::variant<Tensor, TensorD>;

template <typename T>
std::vector<std::uint8_t> encode_tensor(const BasicTensor<T>& t);

AnyTensor decode_tensor(std::span<const std::uint8_t> bytes);

// Decodes and converts to T when the stored dtype differs.
template <typename T>
BasicTensor<T> decode_tensor_as(std::span<const std::uint8_t> bytes);

template <typename T>
void write_tensor(const std::filesystem::path& path, const BasicTensor<T>& t);

AnyTensor read_tensor(const std::filesystem::path& path);

template <typename T>
BasicTensor<T> read_tensor_as(const std::filesystem::path& path);

}  // namespace sifa
