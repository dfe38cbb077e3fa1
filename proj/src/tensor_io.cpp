#include "sifa/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

namespace sifa {

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename T>
BasicTensor<T> decode_payload(const Shape& shape, const std::uint8_t* p, std::size_t avail) {
    const std::size_t n = shape_numel(shape);
    if (avail != n * sizeof(T)) {
        throw FormatError("tensor payload has " + std::to_string(avail) + " bytes, expected " +
                          std::to_string(n * sizeof(T)));
    }
    std::vector<T> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<T>(get_le<Bits<T>>(p + i * sizeof(T)));
    return BasicTensor<T>(shape, std::move(data));
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_tensor(const BasicTensor<T>& t) {
    if (t.rank() < 1 || t.rank() > 4) throw FormatError("cannot encode tensor of rank " + std::to_string(t.rank()));
    std::vector<std::uint8_t> out;
    out.reserve(8 + 4 * t.rank() + sizeof(T) * t.size());
    out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
    out.push_back(kTensorVersion);
    out.push_back(static_cast<std::uint8_t>(dtype_of<T>()));
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (T v : t.data()) put_le<Bits<T>>(out, std::bit_cast<Bits<T>>(v));
    return out;
}

AnyTensor decode_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 7) throw FormatError("tensor file truncated");
    if (!std::equal(std::begin(kTensorMagic), std::end(kTensorMagic), bytes.begin())) {
        throw FormatError("bad tensor magic");
    }
    if (bytes[4] != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(bytes[4]));
    const std::uint8_t dtype = bytes[5];
    const std::size_t rank = bytes[6];
    if (rank < 1 || rank > 4) throw FormatError("unsupported tensor rank " + std::to_string(rank));
    if (bytes.size() < 7 + 4 * rank) throw FormatError("tensor header truncated");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        shape[i] = get_le<std::uint32_t>(bytes.data() + 7 + 4 * i);
        if (shape[i] == 0) throw FormatError("zero tensor extent");
    }
    const std::uint8_t* payload = bytes.data() + 7 + 4 * rank;
    const std::size_t avail = bytes.size() - (7 + 4 * rank);
    switch (dtype) {
        case static_cast<std::uint8_t>(DType::f32):
            return decode_payload<float>(shape, payload, avail);
        case static_cast<std::uint8_t>(DType::f64):
            return decode_payload<double>(shape, payload, avail);
        default:
            throw FormatError("unknown tensor dtype " + std::to_string(dtype));
    }
}

template <typename T>
BasicTensor<T> decode_tensor_as(std::span<const std::uint8_t> bytes) {
    return std::visit([](const auto& t) { return t.template cast<T>(); }, decode_tensor(bytes));
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const BasicTensor<T>& t) {
    const auto bytes = encode_tensor(t);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

AnyTensor read_tensor(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    return decode_tensor(bytes);
}

template <typename T>
BasicTensor<T> read_tensor_as(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    return decode_tensor_as<T>(bytes);
}

template std::vector<std::uint8_t> encode_tensor<float>(const Tensor&);
template std::vector<std::uint8_t> encode_tensor<double>(const TensorD&);
template Tensor decode_tensor_as<float>(std::span<const std::uint8_t>);
template TensorD decode_tensor_as<double>(std::span<const std::uint8_t>);
template void write_tensor<float>(const std::filesystem::path&, const Tensor&);
template void write_tensor<double>(const std::filesystem::path&, const TensorD&);
template Tensor read_tensor_as<float>(const std::filesystem::path&);
template TensorD read_tensor_as<double>(const std::filesystem::path&);

}  // namespace sifa
