#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sifa {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a public operation would produce NaN or Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

// Dense row-major tensor of rank 1..4, last axis fastest.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape);
    BasicTensor(Shape shape, std::vector<T> data);

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
    static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape()); }
    static BasicTensor full(Shape shape, T value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t extent(std::size_t axis) const;
    bool empty() const noexcept { return data_.empty(); }
    DType dtype() const noexcept { return dtype_of<T>(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // Flat offset of a full coordinate tuple; throws on rank or range mismatch.
    std::size_t index(std::span<const std::size_t> coords) const;
    std::size_t index(std::initializer_list<std::size_t> coords) const {
        return index(std::span<const std::size_t>(coords.begin(), coords.size()));
    }
    std::vector<std::size_t> coords(std::size_t flat) const;

    T& at(std::initializer_list<std::size_t> coords) { return data_[index(coords)]; }
    const T& at(std::initializer_list<std::size_t> coords) const { return data_[index(coords)]; }

    void fill(T value);
    BasicTensor reshaped(Shape shape) const;
    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Throws NumericError if any element is NaN or Inf.
template <typename T>
void require_finite(const BasicTensor<T>& t, const char* where);

template <typename T>
BasicTensor<T> zeros(Shape shape) {
    return BasicTensor<T>(std::move(shape));
}

enum class ElementwiseOp { add, sub, mul };

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::add, a, b);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::sub, a, b);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::mul, a, b);
}

template <typename T>
T sigmoid(T x) noexcept;

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a);

// Left-to-right sum of products, accumulated in double.
template <typename T>
T dot(std::span<const T> a, std::span<const T> b);

template <typename T>
double sum(const BasicTensor<T>& a);

template <typename T>
struct BasicConv2dParams {
    BasicTensor<T> weight;  // out_ch x in_ch x kh x kw
    BasicTensor<T> bias;    // out_ch
    std::size_t padding = 0;

    std::size_t out_channels() const { return weight.extent(0); }
    std::size_t in_channels() const { return weight.extent(1); }
    std::size_t kernel_h() const { return weight.extent(2); }
    std::size_t kernel_w() const { return weight.extent(3); }

    // Zero weights and bias with "same" padding for an odd square kernel.
    static BasicConv2dParams zeros(std::size_t out_ch, std::size_t in_ch, std::size_t kernel);
    void validate() const;
    template <typename U>
    BasicConv2dParams<U> cast() const {
        return {weight.template cast<U>(), bias.template cast<U>(), padding};
    }
};

using Conv2dParams = BasicConv2dParams<float>;

// Stride-1 cross-correlation with zero padding plus bias.
// Input C_in x H x W, output C_out x H x W.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicConv2dParams<T>& p);

// Same operation on separately held weight / bias, padding (k-1)/2.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

template <typename T>
struct Conv2dGrads {
    BasicTensor<T> input;
    BasicTensor<T> weight;
    BasicTensor<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicConv2dParams<T>& p,
                               const BasicTensor<T>& grad_out);

// Accumulates into existing gradient buffers; any pointer may be null.
template <typename T>
void conv2d_backward_into(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                          BasicTensor<T>* grad_input, BasicTensor<T>* grad_weight, BasicTensor<T>* grad_bias);

}  // namespace sifa
