// Writes the golden demo-net logits from the naive path: loop stem conv,
// oracle blocks, pooling and classifier written out by hand, all in double.
// usage: sifa_make_golden <out.sifa>
#include <algorithm>
#include <iostream>

#include "golden_fixture.hpp"
#include "sifa/oracle.hpp"
#include "sifa/tensor_io.hpp"
#include "test_util.hpp"

using namespace sifa;

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: sifa_make_golden <out.sifa>\n";
        return 2;
    }
    const auto net = test::golden_net();
    const auto clips = test::golden_clips();
    const std::size_t classes = net.spec.num_classes, channels = net.spec.channels;
    TensorD logits({clips.size(), classes});
    for (std::size_t n = 0; n < clips.size(); ++n) {
        const auto& clip = clips[n];
        const std::size_t frames = clip.extent(1), h = clip.extent(2), w = clip.extent(3);
        TensorD x({channels, frames, h, w});
        for (std::size_t t = 0; t < frames; ++t) {
            TensorD f({clip.extent(0), h, w});
            for (std::size_t c = 0; c < clip.extent(0); ++c)
                for (std::size_t i = 0; i < h * w; ++i) f[c * h * w + i] = clip[(c * frames + t) * h * w + i];
            const auto y = test::conv2d_loop(f, net.stem);
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t i = 0; i < h * w; ++i) x[(c * frames + t) * h * w + i] = std::max(0.0, y[c * h * w + i]);
        }
        for (const auto& block : net.blocks) {
            x = oracle::oracle_forward(x, net.spec.block, block);
            for (auto& v : x.data()) v = std::max(0.0, v);
        }
        const std::size_t per = frames * h * w;
        for (std::size_t o = 0; o < classes; ++o) {
            double acc = net.classifier_bias[o];
            for (std::size_t c = 0; c < channels; ++c) {
                double mean = 0.0;
                for (std::size_t i = 0; i < per; ++i) mean += x[c * per + i];
                acc += net.classifier_weight.at({o, c}) * (mean / double(per));
            }
            logits.at({n, o}) = acc;
        }
    }
    write_tensor(argv[1], logits);
    std::cout << "wrote " << argv[1] << "\n";
    return 0;
}
