#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "sifa/tensor_io.hpp"
#include "test_util.hpp"

using namespace sifa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "sifa_tests";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

// Header and payload spelled out byte by byte.
TEST(TensorIO, LayoutIsExact) {
    const Tensor t({2}, {1.0f, -2.0f});
    const std::vector<std::uint8_t> expected{0x53, 0x49, 0x46, 0x41, 1, 1, 1, 2, 0, 0, 0,
                                             0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
    EXPECT_EQ(encode_tensor(t), expected);

    const TensorD d({1, 1}, {0.5});
    const auto bytes = encode_tensor(d);
    ASSERT_EQ(bytes.size(), 4u + 3u + 8u + 8u);
    EXPECT_EQ(bytes[5], 2);
    EXPECT_EQ(bytes[6], 2);
    EXPECT_EQ(bytes[22], 0x3f);
    EXPECT_EQ(bytes[21], 0xe0);
}

TEST(TensorIO, RoundTripBitExact) {
    std::mt19937_64 rng(11);
    for (const Shape& shape : {Shape{7}, Shape{3, 5}, Shape{2, 3, 4}, Shape{2, 3, 4, 5}}) {
        const auto f = test::random_tensor<float>(shape, rng, -1e3, 1e3);
        const auto d = test::random_tensor<double>(shape, rng, -1e-3, 1e-3);
        const auto fb = encode_tensor(f);
        const auto back = std::get<Tensor>(decode_tensor(fb));
        EXPECT_EQ(back, f);
        EXPECT_EQ(encode_tensor(back), fb);
        EXPECT_EQ(std::get<TensorD>(decode_tensor(encode_tensor(d))), d);
    }
    // Bit patterns survive even where == would not notice (signed zero).
    const Tensor z({2}, {-0.0f, 0.0f});
    const auto zb = std::get<Tensor>(decode_tensor(encode_tensor(z)));
    EXPECT_TRUE(std::signbit(zb[0]));
    EXPECT_FALSE(std::signbit(zb[1]));
}

TEST(TensorIO, FileRoundTrip) {
    std::mt19937_64 rng(12);
    const auto t = test::random_tensor<double>({3, 4, 4}, rng);
    const auto path = scratch("round_trip.sifa");
    write_tensor(path, t);
    EXPECT_EQ(read_tensor_as<double>(path), t);
    EXPECT_EQ(read_tensor_as<float>(path), t.cast<float>());
}

TEST(TensorIO, RejectsCorruption) {
    const auto good = encode_tensor(Tensor({2, 2}, {1, 2, 3, 4}));
    for (std::size_t i = 0; i < 4; ++i) {
        auto bad = good;
        bad[i] ^= 0x01;
        EXPECT_THROW(decode_tensor(bad), FormatError) << "magic byte " << i;
    }
    auto bad_version = good;
    bad_version[4] = 2;
    EXPECT_THROW(decode_tensor(bad_version), FormatError);
    auto bad_dtype = good;
    bad_dtype[5] = 3;
    EXPECT_THROW(decode_tensor(bad_dtype), FormatError);
    auto bad_rank = good;
    bad_rank[6] = 5;
    EXPECT_THROW(decode_tensor(bad_rank), FormatError);
    auto truncated = good;
    truncated.pop_back();
    EXPECT_THROW(decode_tensor(truncated), FormatError);
    auto trailing = good;
    trailing.push_back(0);
    EXPECT_THROW(decode_tensor(trailing), FormatError);
}

TEST(TensorIO, CorruptedFileRejected) {
    const auto path = scratch("corrupt.sifa");
    write_tensor(path, Tensor({3}, {1, 2, 3}));
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    EXPECT_THROW(read_tensor(path), FormatError);
}
