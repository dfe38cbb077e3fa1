#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sifa/blocks.hpp"
#include "sifa/tensor.hpp"

// Synthetic moving-object clips, SGD training of the demo network, model
// files and attention export.
namespace sifa::harness {

namespace fs = std::filesystem;

enum class ObjectKind { square, bar };

// Label order.
enum class Direction { up, down, left, right, upleft, upright, downleft, downright };
inline constexpr std::size_t kDirections = 8;

const char* to_string(Direction d);
// Unit step (row, col) of a direction; diagonals move one pixel on each axis.
std::pair<int, int> direction_step(Direction d);

struct SyntheticClipSpec {
    std::size_t grid = 16;
    std::size_t frames = 8;
    ObjectKind object = ObjectKind::square;
    Direction direction = Direction::right;
    double speed = 1.0;   // pixels per frame along each moving axis
    double jitter = 0.0;  // per-frame scale jitter fraction
    double noise = 0.0;   // additive uniform noise amplitude
    double size = 4.0;    // side of the square (bars are size x size/2)
    bool bar_vertical = false;
    double row = 0.0;  // top-left corner in frame 0
    double col = 0.0;
};

class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// 1 x L x H x W clip. Pixel intensity is the area covered by the object.
// Throws GeometryError if the object leaves the grid in any frame.
Tensor render_clip(const SyntheticClipSpec& spec, std::uint64_t seed);

// Ranges a dataset is drawn from.
struct DatasetSpec {
    std::size_t grid = 16;
    std::size_t frames = 4;  // 8 frames at 2 px/frame leave no room on a 16 px grid
    double speed = 2.0;
    double jitter = 0.2;
    double noise = 0.05;
    double min_size = 3.0;
    double max_size = 5.0;
    bool bars = true;  // mix bars with squares
};

struct Sample {
    Tensor clip;
    std::size_t label = 0;
};

// Draws one clip with the given direction from the ranges in `spec`.
Sample draw_clip(const DatasetSpec& spec, Direction direction, std::uint64_t seed);

// Balanced labels (class i % 8), train and test from disjoint seed streams.
std::vector<Sample> make_split(const DatasetSpec& spec, std::size_t n, std::uint64_t seed, bool test);

// Writes <dir>/train and <dir>/test, each with clip files and labels.csv.
void gen_dataset(const DatasetSpec& spec, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                 const fs::path& dir);

void write_split(const std::vector<Sample>& samples, const fs::path& dir);
std::vector<Sample> read_split(const fs::path& dir);

// ---- training ---------------------------------------------------------------

struct TrainConfig {
    double lr = 0.04;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t epochs = 64;
    std::size_t batch = 16;
    std::size_t patience = 3;  // epochs without train-loss improvement before halving lr
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool wall_clock = false;  // when off, wall_ms is written as 0 so logs are reproducible
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::size_t> predictions;
};

template <typename T>
EvalResult evaluate(const DemoNet<T>& net, const std::vector<Sample>& samples, std::size_t threads = 1);

// Mean loss and summed gradients (in named_parameters order) over a batch.
template <typename T>
double batch_gradients(const DemoNet<T>& net, const std::vector<const Sample*>& batch,
                       std::vector<BasicTensor<T>>& grads, std::size_t threads = 1);

struct TrainResult {
    std::vector<EpochMetrics> history;
    std::string log;  // metrics CSV contents
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Trains `net` in place. Throws NumericError if the loss diverges.
template <typename T>
TrainResult train(DemoNet<T>& net, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const EpochCallback& on_epoch = {});

std::string metrics_header(const DemoSpec& net, const TrainConfig& cfg);
std::string metrics_row(const EpochMetrics& m);

// ---- model files ------------------------------------------------------------

// Directory of tensor files, manifest.tsv (name, role, shape, path) and config.json.
template <typename T>
void save_net(const DemoNet<T>& net, const fs::path& dir);
template <typename T>
DemoNet<T> load_net(const fs::path& dir);

std::string config_json(const DemoSpec& spec);
DemoSpec parse_config_json(const std::string& text);

// ---- attention export -------------------------------------------------------

struct AttentionExport {
    std::vector<attn::AttentionProbe> probes;  // one per block
    std::vector<fs::path> files;
};

// Per block: CSV of sampled grid points and weights, a PGM heatmap of the
// weights, a PGM of the motion saliency channel-mean for frames (t, t+1), and
// the saliency map and offset field as tensor files.
template <typename T>
AttentionExport export_attention(const DemoNet<T>& net, const Tensor& clip, std::size_t t, std::size_t row,
                                 std::size_t col, const fs::path& out_dir);

// Binary greyscale image, values min-max scaled to [0, 255].
void write_pgm(const fs::path& path, const std::vector<double>& values, std::size_t height, std::size_t width);

}  // namespace sifa::harness
