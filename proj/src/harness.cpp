#include "sifa/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sifa/deform.hpp"
#include "sifa/tensor_io.hpp"

namespace sifa::harness {

const char* to_string(Direction d) {
    static constexpr const char* names[] = {"up",     "down",    "left",     "right",
                                            "upleft", "upright", "downleft", "downright"};
    return names[static_cast<int>(d)];
}

std::pair<int, int> direction_step(Direction d) {
    switch (d) {
        case Direction::up: return {-1, 0};
        case Direction::down: return {1, 0};
        case Direction::left: return {0, -1};
        case Direction::right: return {0, 1};
        case Direction::upleft: return {-1, -1};
        case Direction::upright: return {-1, 1};
        case Direction::downleft: return {1, -1};
        case Direction::downright: return {1, 1};
    }
    return {0, 0};
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) { return splitmix(splitmix(seed) ^ splitmix(stream + 1)); }

double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

std::pair<double, double> base_extent(const SyntheticClipSpec& s) {
    if (s.object == ObjectKind::square) return {s.size, s.size};
    return s.bar_vertical ? std::pair{s.size, s.size / 2} : std::pair{s.size / 2, s.size};
}

}  // namespace

Tensor render_clip(const SyntheticClipSpec& s, std::uint64_t seed) {
    if (s.grid == 0 || s.frames == 0) throw GeometryError("grid and frame count must be positive");
    if (!(s.size > 0) || s.jitter < 0 || s.jitter >= 1 || s.noise < 0 || s.speed < 0) {
        throw GeometryError("size must be positive, jitter in [0,1), noise and speed non-negative");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto [dr, dc] = direction_step(s.direction);
    const auto [bh, bw] = base_extent(s);
    const auto g = static_cast<double>(s.grid);
    constexpr double slack = 1e-9;

    Tensor out({1, s.frames, s.grid, s.grid});
    for (std::size_t t = 0; t < s.frames; ++t) {
        const double scale = s.jitter > 0 ? 1.0 + s.jitter * unit(rng) : 1.0;
        const double cy = s.row + dr * s.speed * static_cast<double>(t) + bh / 2;
        const double cx = s.col + dc * s.speed * static_cast<double>(t) + bw / 2;
        const double r0 = cy - bh * scale / 2, r1 = cy + bh * scale / 2;
        const double c0 = cx - bw * scale / 2, c1 = cx + bw * scale / 2;
        if (r0 < -slack || c0 < -slack || r1 > g + slack || c1 > g + slack) {
            throw GeometryError("object leaves the grid in frame " + std::to_string(t));
        }
        float* frame = out.ptr() + t * s.grid * s.grid;
        for (std::size_t i = 0; i < s.grid; ++i) {
            const double rcov = overlap(static_cast<double>(i), i + 1.0, r0, r1);
            for (std::size_t j = 0; j < s.grid; ++j) {
                double v = rcov * overlap(static_cast<double>(j), j + 1.0, c0, c1);
                if (s.noise > 0) v += s.noise * unit(rng);
                frame[i * s.grid + j] = static_cast<float>(v);
            }
        }
    }
    return out;
}

Sample draw_clip(const DatasetSpec& spec, Direction direction, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SyntheticClipSpec s;
    s.grid = spec.grid;
    s.frames = spec.frames;
    s.direction = direction;
    s.speed = spec.speed;
    s.jitter = spec.jitter;
    s.noise = spec.noise;
    s.object = spec.bars && u01(rng) < 0.5 ? ObjectKind::bar : ObjectKind::square;
    s.bar_vertical = u01(rng) < 0.5;
    s.size = spec.min_size + (spec.max_size - spec.min_size) * u01(rng);

    // Feasible top-left range so the largest jittered object stays inside in every frame.
    const auto [dr, dc] = direction_step(direction);
    const auto [bh, bw] = base_extent(s);
    const double travel = spec.speed * static_cast<double>(spec.frames - 1);
    const auto g = static_cast<double>(spec.grid);
    auto range = [&](double base, int step) {
        const double grow = base * spec.jitter / 2;
        const double lo = grow - std::min(0.0, step * travel);
        const double hi = g - base - grow - std::max(0.0, step * travel);
        if (lo > hi) {
            throw GeometryError("a " + std::to_string(base) + " px object moving " + std::to_string(travel) +
                                " px cannot stay inside a " + std::to_string(spec.grid) + " px grid");
        }
        return lo + (hi - lo) * u01(rng);
    };
    s.row = range(bh, dr);
    s.col = range(bw, dc);
    return {render_clip(s, rng()), static_cast<std::size_t>(direction)};
}

std::vector<Sample> make_split(const DatasetSpec& spec, std::size_t n, std::uint64_t seed, bool test) {
    if (n == 0) throw std::invalid_argument("split size must be at least 1");
    const std::uint64_t stream = derive(seed, test ? 2 : 1);
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(draw_clip(spec, static_cast<Direction>(i % kDirections), derive(stream, i)));
    }
    return out;
}

void write_split(const std::vector<Sample>& samples, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream labels(dir / "labels.csv");
    if (!labels) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
    labels << "path,label\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%05zu.sifa", i);
        write_tensor(dir / name, samples[i].clip);
        labels << name << ',' << samples[i].label << '\n';
    }
    if (!labels) throw std::runtime_error("failed writing " + (dir / "labels.csv").string());
}

std::vector<Sample> read_split(const fs::path& dir) {
    std::ifstream labels(dir / "labels.csv");
    if (!labels) throw std::runtime_error("cannot read " + (dir / "labels.csv").string());
    std::vector<Sample> out;
    std::string line;
    std::getline(labels, line);
    if (line != "path,label") throw FormatError("labels.csv must start with 'path,label'");
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw FormatError("bad labels.csv line: " + line);
        Sample s;
        s.clip = read_tensor_as<float>(dir / line.substr(0, comma));
        s.label = std::stoul(line.substr(comma + 1));
        if (s.label >= kDirections) throw FormatError("label out of range: " + line);
        out.push_back(std::move(s));
    }
    return out;
}

void gen_dataset(const DatasetSpec& spec, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                 const fs::path& dir) {
    write_split(make_split(spec, n_train, seed, false), dir / "train");
    write_split(make_split(spec, n_test, seed, true), dir / "test");
}

// ---- training ---------------------------------------------------------------

namespace {

// Runs fn(i) for i in [0, n) over `threads` contiguous chunks.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
        });
    }
}

template <typename T>
double clip_loss(const DemoNet<T>& net, const Sample& s, std::vector<BasicTensor<T>>* grads,
                 std::size_t* prediction) {
    ad::Tape<T> tape(grads != nullptr);
    const NetIds ids = register_net(tape, net);
    const std::size_t logits = demo_net_logits(tape, tape.leaf(s.clip.template cast<T>()), net, ids);
    if (prediction) {
        const auto& z = tape.value(logits);
        *prediction = static_cast<std::size_t>(std::max_element(z.ptr(), z.ptr() + z.size()) - z.ptr());
    }
    const std::size_t loss = ad::softmax_xent(tape, logits, s.label);
    if (grads) {
        auto g = tape.backward(loss);
        grads->clear();
        for (const auto& leaf : ids.leaves) {
            grads->push_back(g.has(leaf.id) ? g.take(leaf.id) : BasicTensor<T>(tape.value(leaf.id).shape()));
        }
    }
    return tape.value(loss)[0];
}

}  // namespace

template <typename T>
EvalResult evaluate(const DemoNet<T>& net, const std::vector<Sample>& samples, std::size_t threads) {
    EvalResult r;
    r.predictions.assign(samples.size(), 0);
    std::vector<double> losses(samples.size());
    parallel_for(samples.size(), threads,
                 [&](std::size_t i) { losses[i] = clip_loss<T>(net, samples[i], nullptr, &r.predictions[i]); });
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        r.loss += losses[i];
        correct += r.predictions[i] == samples[i].label;
    }
    if (!samples.empty()) {
        r.loss /= static_cast<double>(samples.size());
        r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    }
    return r;
}

template <typename T>
double batch_gradients(const DemoNet<T>& net, const std::vector<const Sample*>& batch,
                       std::vector<BasicTensor<T>>& grads, std::size_t threads) {
    std::vector<std::vector<BasicTensor<T>>> per(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) { losses[i] = clip_loss(net, *batch[i], &per[i], nullptr); });
    // Fixed merge order keeps the sum independent of the thread count.
    grads = std::move(per[0]);
    for (std::size_t i = 1; i < batch.size(); ++i) {
        for (std::size_t p = 0; p < grads.size(); ++p) {
            for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += per[i][p][j];
        }
    }
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(batch.size());
}

std::string metrics_header(const DemoSpec& net, const TrainConfig& cfg) {
    std::ostringstream os;
    os << "# net: " << net.block.describe() << " channels=" << net.channels << " blocks=" << net.blocks
       << " classes=" << net.num_classes << '\n';
    os << "# optimizer: sgd momentum=" << cfg.momentum << " weight_decay=" << cfg.weight_decay
       << " batch=" << cfg.batch << " epochs=" << cfg.epochs << " seed=" << cfg.seed << '\n';
    os << "# schedule: lr " << cfg.lr << " held constant, halved after " << cfg.patience
       << " epochs without train-loss improvement (no cosine decay)\n";
    os << "# dropout: none\n";
    os << "# wall_ms: " << (cfg.wall_clock ? "measured" : "not recorded (0)") << '\n';
    os << "epoch,train_loss,test_acc,lr,wall_ms\n";
    return os.str();
}

std::string metrics_row(const EpochMetrics& m) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.6f,%.4f,%.6g,%.0f\n", m.epoch, m.train_loss, m.test_acc, m.lr,
                  m.wall_ms);
    return line;
}

template <typename T>
TrainResult train(DemoNet<T>& net, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const EpochCallback& on_epoch) {
    if (!(cfg.lr >= 0) || cfg.momentum < 0 || cfg.weight_decay < 0 || cfg.batch == 0 || cfg.epochs == 0) {
        throw std::invalid_argument("train: lr, momentum and decay must be non-negative, batch and epochs positive");
    }
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    net.validate();
    auto params = named_parameters(net);
    std::vector<BasicTensor<T>> velocity;
    for (auto& [name, p] : params) velocity.emplace_back(p->shape());

    TrainResult result;
    result.log = metrics_header(net.spec, cfg);
    std::mt19937_64 rng(derive(cfg.seed, 7));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    double lr = cfg.lr;
    double best = INFINITY;
    std::size_t stale = 0;
    std::vector<BasicTensor<T>> grads;
    std::vector<const Sample*> batch;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
            batch.clear();
            for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch); ++i) batch.push_back(&train_set[order[i]]);
            const double loss = batch_gradients(net, batch, grads, cfg.threads);
            if (!std::isfinite(loss)) {
                throw NumericError("training diverged: loss " + std::to_string(loss) + " at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(b / cfg.batch) +
                                   ", lr " + std::to_string(lr));
            }
            loss_sum += loss * static_cast<double>(batch.size());
            const T inv = T(1) / static_cast<T>(batch.size());
            for (std::size_t p = 0; p < params.size(); ++p) {
                BasicTensor<T>& theta = *params[p].second;
                for (std::size_t j = 0; j < theta.size(); ++j) {
                    const T g = grads[p][j] * inv + static_cast<T>(cfg.weight_decay) * theta[j];
                    velocity[p][j] = static_cast<T>(cfg.momentum) * velocity[p][j] + g;
                    theta[j] -= static_cast<T>(lr) * velocity[p][j];
                }
            }
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(order.size());
        m.test_acc = test_set.empty() ? 0.0 : evaluate(net, test_set, cfg.threads).accuracy;
        m.lr = lr;
        if (cfg.wall_clock) {
            m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
        result.history.push_back(m);
        result.log += metrics_row(m);
        if (on_epoch) on_epoch(m);

        if (m.train_loss < best) {
            best = m.train_loss;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            lr /= 2;
            stale = 0;
        }
    }
    return result;
}

// ---- model files ------------------------------------------------------------

namespace {

using nlohmann::json;

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> names) {
    for (const auto& [n, v] : names) {
        if (s == n) return v;
    }
    throw FormatError("unknown config value '" + s + "'");
}

std::string shape_field(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

}  // namespace

std::string config_json(const DemoSpec& spec) {
    json j;
    j["in_channels"] = spec.in_channels;
    j["channels"] = spec.channels;
    j["blocks"] = spec.blocks;
    j["num_classes"] = spec.num_classes;
    json& b = j["block"];
    b["k"] = spec.block.k;
    b["variant"] = sifa::to_string(spec.block.variant);
    b["sampling"] = sifa::to_string(spec.block.sampling);
    b["offset_source"] = sifa::to_string(spec.block.offset_source);
    b["norm"] = sifa::to_string(spec.block.norm);
    b["value_projection"] = spec.block.value_projection;
    return j.dump(2) + "\n";
}

DemoSpec parse_config_json(const std::string& text) {
    DemoSpec spec;
    try {
        const json j = json::parse(text);
        spec.in_channels = j.at("in_channels").get<std::size_t>();
        spec.channels = j.at("channels").get<std::size_t>();
        spec.blocks = j.at("blocks").get<std::size_t>();
        spec.num_classes = j.at("num_classes").get<std::size_t>();
        const json& b = j.at("block");
        spec.block.k = b.at("k").get<std::size_t>();
        spec.block.variant = parse_enum<Variant>(b.at("variant").get<std::string>(),
                                                 {{"c", Variant::correlation_only},
                                                  {"r", Variant::regular_attention},
                                                  {"full", Variant::full},
                                                  {"star", Variant::star}});
        spec.block.sampling = parse_enum<Sampling>(b.at("sampling").get<std::string>(),
                                                   {{"regular", Sampling::regular}, {"deformable", Sampling::deformable}});
        spec.block.offset_source = parse_enum<OffsetSource>(b.at("offset_source").get<std::string>(),
                                                            {{"next", OffsetSource::next_frame},
                                                             {"tdiff", OffsetSource::temporal_difference},
                                                             {"msm", OffsetSource::motion_saliency}});
        spec.block.norm = parse_enum<attn::NormMode>(b.at("norm").get<std::string>(),
                                                     {{"raw", attn::NormMode::raw}, {"softmax", attn::NormMode::softmax}});
        spec.block.value_projection = b.at("value_projection").get<bool>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("config.json: ") + e.what());
    }
    spec.block.validate();
    return spec;
}

template <typename T>
void save_net(const DemoNet<T>& net, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream manifest(dir / "manifest.tsv");
    if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.tsv").string());
    for (const auto& [np, tensor] : named_parameters(net)) {
        const std::string file = np.name + ".sifa";
        write_tensor(dir / file, *tensor);
        manifest << np.name << '\t' << np.role << '\t' << shape_field(tensor->shape()) << '\t' << file << '\n';
    }
    std::ofstream(dir / "config.json") << config_json(net.spec);
}

template <typename T>
DemoNet<T> load_net(const fs::path& dir) {
    std::ifstream cfg(dir / "config.json");
    if (!cfg) throw std::runtime_error("cannot read " + (dir / "config.json").string());
    std::stringstream text;
    text << cfg.rdbuf();
    DemoNet<T> net = DemoNet<T>::init(parse_config_json(text.str()), 0);

    std::map<std::string, std::pair<std::string, std::string>> entries;  // name -> (shape, file)
    std::ifstream manifest(dir / "manifest.tsv");
    if (!manifest) throw std::runtime_error("cannot read " + (dir / "manifest.tsv").string());
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, '\t');) f.push_back(cell);
        if (f.size() != 4) throw FormatError("manifest line needs 4 tab-separated fields: " + line);
        entries[f[0]] = {f[2], f[3]};
    }
    for (auto& [np, tensor] : named_parameters(net)) {
        const auto it = entries.find(np.name);
        if (it == entries.end()) throw FormatError("manifest lacks parameter " + np.name);
        BasicTensor<T> loaded = read_tensor_as<T>(dir / it->second.second);
        if (loaded.shape() != tensor->shape() || shape_field(loaded.shape()) != it->second.first) {
            throw FormatError("parameter " + np.name + " has shape " + shape_str(loaded.shape()) + ", expected " +
                              shape_str(tensor->shape()));
        }
        *tensor = std::move(loaded);
    }
    return net;
}

// ---- attention export -------------------------------------------------------

void write_pgm(const fs::path& path, const std::vector<double>& values, std::size_t height, std::size_t width) {
    if (values.size() != height * width) throw ShapeError("write_pgm: value count != height * width");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = values.empty() ? 0.0 : *hi - *lo;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    for (double v : values) {
        const double s = range > 0 ? (v - *lo) / range : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
    }
}

template <typename T>
AttentionExport export_attention(const DemoNet<T>& net, const Tensor& clip, std::size_t t, std::size_t row,
                                 std::size_t col, const fs::path& out_dir) {
    net.validate();
    if (clip.rank() != 4 || t >= clip.extent(1) || row >= clip.extent(2) || col >= clip.extent(3)) {
        throw std::out_of_range("export_attention: query (t=" + std::to_string(t) + ", row=" + std::to_string(row) +
                                ", col=" + std::to_string(col) + ") outside clip " + shape_str(clip.shape()));
    }
    fs::create_directories(out_dir);
    ad::Tape<T> tape(false);
    const NetIds ids = register_net(tape, net);
    NetTrace trace;
    trace.blocks.resize(ids.blocks.size());
    for (auto& b : trace.blocks) {
        b.probe_frame = t;
        b.probe_row = row;
        b.probe_col = col;
    }
    demo_net_logits(tape, tape.leaf(clip.template cast<T>()), net, ids, &trace);

    const SifaConfig& cfg = net.spec.block;
    const std::size_t kk = cfg.k * cfg.k;
    const auto grid = deform::regular_grid(cfg.k);
    const std::size_t frames = clip.extent(1), h = clip.extent(2), w = clip.extent(3);
    AttentionExport result;
    for (std::size_t b = 0; b < trace.blocks.size(); ++b) {
        const std::string stem = "block" + std::to_string(b);
        const auto& probe = trace.blocks[b].attention;
        result.probes.push_back(probe);

        if (cfg.variant != Variant::correlation_only) {
            const fs::path csv = out_dir / (stem + "_attention.csv");
            std::ofstream os(csv);
            os << "grid_index,source,offset_row,offset_col,sampled_row,sampled_col,weight\n";
            const std::size_t sources = probe.weights.size() / kk;
            for (std::size_t j = 0; j < probe.weights.size(); ++j) {
                const auto [a, bb] = grid[j % kk];
                const auto& p = probe.coords[j];
                char line[200];
                std::snprintf(line, sizeof line, "%zu,%s,%.6f,%.6f,%.6f,%.6f,%.8f\n", j % kk, j < kk ? "next" : "prev",
                              p.row - static_cast<double>(row) - a, p.col - static_cast<double>(col) - bb, p.row,
                              p.col, probe.weights[j]);
                os << line;
            }
            result.files.push_back(csv);

            // k rows by k * sources columns, each weight drawn as a 16 x 16 cell.
            constexpr std::size_t cell = 16;
            const std::size_t ph = cfg.k * cell, pw = cfg.k * sources * cell;
            std::vector<double> img(ph * pw);
            for (std::size_t y = 0; y < ph; ++y) {
                for (std::size_t x = 0; x < pw; ++x) {
                    const std::size_t s = x / (cfg.k * cell);
                    const std::size_t g = (y / cell) * cfg.k + (x / cell) % cfg.k;
                    img[y * pw + x] = probe.weights[s * kk + g];
                }
            }
            const fs::path pgm = out_dir / (stem + "_weights.pgm");
            write_pgm(pgm, img, ph, pw);
            result.files.push_back(pgm);
        }

        // Saliency of (t, t+1) on the block input; the last frame pairs with itself.
        const auto& input = tape.value(trace.block_inputs[b]);
        const std::size_t channels = input.extent(0), plane = h * w;
        BasicTensor<T> cur({channels, h, w}), next({channels, h, w});
        const std::size_t tn = t + 1 < frames ? t + 1 : t;
        for (std::size_t c = 0; c < channels; ++c) {
            std::copy_n(input.ptr() + (c * frames + t) * plane, plane, cur.ptr() + c * plane);
            std::copy_n(input.ptr() + (c * frames + tn) * plane, plane, next.ptr() + c * plane);
        }
        const auto msm = deform::motion_saliency(deform::temporal_difference(cur, next), next);
        std::vector<double> mean(plane, 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t i = 0; i < plane; ++i) mean[i] += msm.values[c * plane + i] / static_cast<double>(channels);
        }
        const fs::path msm_pgm = out_dir / (stem + "_msm.pgm");
        write_pgm(msm_pgm, mean, h, w);
        const fs::path msm_file = out_dir / (stem + "_msm.sifa");
        write_tensor(msm_file, msm.values);
        result.files.push_back(msm_pgm);
        result.files.push_back(msm_file);
        if (cfg.sampling == Sampling::deformable) {
            const fs::path off = out_dir / (stem + "_offsets.sifa");
            write_tensor(off, tape.value(trace.blocks[b].offsets[t]));
            result.files.push_back(off);
        }
    }
    return result;
}

#define SIFA_INSTANTIATE(T)                                                                                     \
    template EvalResult evaluate<T>(const DemoNet<T>&, const std::vector<Sample>&, std::size_t);                \
    template double batch_gradients<T>(const DemoNet<T>&, const std::vector<const Sample*>&,                    \
                                       std::vector<BasicTensor<T>>&, std::size_t);                              \
    template TrainResult train<T>(DemoNet<T>&, const TrainConfig&, const std::vector<Sample>&,                  \
                                  const std::vector<Sample>&, const EpochCallback&);                            \
    template void save_net<T>(const DemoNet<T>&, const fs::path&);                                              \
    template DemoNet<T> load_net<T>(const fs::path&);                                                           \
    template AttentionExport export_attention<T>(const DemoNet<T>&, const Tensor&, std::size_t, std::size_t,    \
                                                 std::size_t, const fs::path&);

SIFA_INSTANTIATE(float)
SIFA_INSTANTIATE(double)

#undef SIFA_INSTANTIATE

}  // namespace sifa::harness
