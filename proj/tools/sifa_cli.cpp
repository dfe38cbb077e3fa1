// sifa: command-line front end for data generation, training, checks and export.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "sifa/blocks.hpp"
#include "sifa/checks.hpp"
#include "sifa/harness.hpp"
#include "sifa/oracle.hpp"
#include "sifa/tensor_io.hpp"

namespace {

using namespace sifa;
namespace fs = std::filesystem;

struct Globals {
    std::uint64_t seed = 0;
    std::string precision = "f32";
    std::size_t k = 3;
    std::string sampling;  // empty: follow the variant
    std::string offset_source = "msm";
    std::string norm = "softmax";
    std::string variant = "full";
    bool value_projection = false;
    std::size_t threads = 1;
};

// Thrown for argument combinations CLI11 cannot reject on its own.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

SifaConfig make_config(const Globals& g) {
    static const std::map<std::string, Variant> variants{{"c", Variant::correlation_only},
                                                         {"r", Variant::regular_attention},
                                                         {"full", Variant::full},
                                                         {"star", Variant::star}};
    static const std::map<std::string, OffsetSource> sources{{"next", OffsetSource::next_frame},
                                                             {"tdiff", OffsetSource::temporal_difference},
                                                             {"msm", OffsetSource::motion_saliency}};
    SifaConfig cfg = SifaConfig::for_variant(variants.at(g.variant), g.k);
    if (!g.sampling.empty()) cfg.sampling = g.sampling == "regular" ? Sampling::regular : Sampling::deformable;
    cfg.offset_source = sources.at(g.offset_source);
    cfg.norm = g.norm == "raw" ? attn::NormMode::raw : attn::NormMode::softmax;
    cfg.value_projection = g.value_projection;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Accepts either a dataset root (uses test/) or a split directory.
fs::path split_dir(const fs::path& dir, const char* split) {
    return fs::exists(dir / "labels.csv") ? dir : dir / split;
}

int cmd_gen_data(const Globals& g, const harness::DatasetSpec& spec, std::size_t n_train, std::size_t n_test,
                 const fs::path& out) {
    harness::gen_dataset(spec, n_train, n_test, g.seed, out);
    std::cout << "wrote " << n_train << " train / " << n_test << " test clips to " << out.string() << "\n";
    return 0;
}

template <typename T>
int cmd_train(const Globals& g, harness::TrainConfig tc, DemoSpec spec, const fs::path& data, const fs::path& out,
              const fs::path& log_path) {
    spec.block = make_config(g);
    tc.seed = g.seed;
    tc.threads = g.threads;
    const auto train_set = harness::read_split(split_dir(data, "train"));
    const auto test_set = fs::exists(data / "test") ? harness::read_split(data / "test") : std::vector<harness::Sample>{};
    if (!train_set.empty()) {
        const auto& s = train_set.front().clip.shape();
        spec.in_channels = s[0];
    }
    DemoNet<T> net = DemoNet<T>::init(spec, g.seed);
    const auto result = harness::train(net, tc, train_set, test_set, [](const harness::EpochMetrics& m) {
        std::fprintf(stderr, "epoch %zu  loss %.4f  test_acc %.4f  lr %.4g\n", m.epoch, m.train_loss, m.test_acc,
                     m.lr);
    });
    write_text(log_path.empty() ? out / "metrics.csv" : log_path, result.log);
    harness::save_net(net, out);
    const auto& last = result.history.back();
    std::cout << "final test_acc " << last.test_acc << " train_loss " << last.train_loss << "\n";
    return 0;
}

template <typename T>
int cmd_eval(const Globals& g, const fs::path& model, const fs::path& data) {
    const DemoNet<T> net = harness::load_net<T>(model);
    const auto samples = harness::read_split(split_dir(data, "test"));
    const auto r = harness::evaluate(net, samples, g.threads);
    std::cout << "clips " << samples.size() << " loss " << r.loss << " accuracy " << r.accuracy << "\n";
    return 0;
}

int cmd_gradcheck(const Globals& g, const ad::FiniteDiffOptions& fd, const fs::path& csv) {
    if (g.precision != "f64") std::cerr << "note: gradient checks always run in double precision\n";
    const SifaConfig cfg = make_config(g);
    auto reports = checks::primitive_gradchecks(cfg.k, g.seed, fd);
    for (auto& r : checks::demo_net_gradcheck(cfg, g.seed, fd)) reports.push_back(std::move(r));
    std::cout << ad::render_table(reports);
    if (!csv.empty()) write_text(csv, ad::render_csv(reports));
    bool ok = true;
    for (const auto& r : reports) ok = ok && r.pass;
    std::cout << (ok ? "all gradients match\n" : "gradient mismatch\n");
    return ok ? 0 : 1;
}

int cmd_oracle(const Globals& g, std::size_t fixtures, const checks::FixtureShape& shape) {
    const SifaConfig cfg = make_config(g);
    bool ok = true;
    for (std::size_t i = 0; i < fixtures; ++i) {
        const auto r = checks::run_oracle_fixture(cfg, shape, g.seed + i);
        std::printf("%s  f32 %.3e  f64 %.3e  %s\n", r.label.c_str(), r.diff_f32, r.diff_f64, r.pass ? "ok" : "FAIL");
        ok = ok && r.pass;
    }
    // The instrumented oracle must reproduce the closed-form MAC count.
    oracle::OpCounter counter;
    const TensorD clip({shape.channels, shape.frames, shape.height, shape.width});
    oracle::oracle_forward(clip, cfg, checks::random_block_params(cfg, shape.channels, g.seed), &counter);
    const auto analytic = flop_count(cfg, shape.channels, shape.frames, shape.height, shape.width);
    std::printf("macs: counted %llu, closed form %llu  %s\n", static_cast<unsigned long long>(counter.macs),
                static_cast<unsigned long long>(analytic), counter.macs == analytic ? "ok" : "FAIL");
    ok = ok && counter.macs == analytic;
    return ok ? 0 : 1;
}

int cmd_flops(const Globals& g, const checks::FixtureShape& shape) {
    const SifaConfig cfg = make_config(g);
    std::cout << flop_count(cfg, shape.channels, shape.frames, shape.height, shape.width) << "\n";
    return 0;
}

template <typename T>
int cmd_export(const fs::path& model, const fs::path& clip_path, std::size_t t, std::size_t row, std::size_t col,
               const fs::path& out) {
    const DemoNet<T> net = harness::load_net<T>(model);
    const Tensor clip = read_tensor_as<float>(clip_path);
    const auto r = harness::export_attention(net, clip, t, row, col, out);
    for (const auto& f : r.files) std::cout << f.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inter-frame attention toolkit: data, training, checks and export"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--precision", g.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    app.add_option("--k", g.k, "Local region size (odd)")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--sampling", g.sampling, "Neighbor sampling (default follows the variant)")
        ->check(CLI::IsMember({"regular", "deformable"}));
    app.add_option("--offset-source", g.offset_source, "Offset estimator input")
        ->check(CLI::IsMember({"next", "tdiff", "msm"}))
        ->capture_default_str();
    app.add_option("--norm", g.norm, "Attention weight normalization")
        ->check(CLI::IsMember({"raw", "softmax"}))
        ->capture_default_str();
    app.add_option("--variant", g.variant, "Block variant")
        ->check(CLI::IsMember({"c", "r", "full", "star"}))
        ->capture_default_str();
    app.add_flag("--value-projection", g.value_projection, "Add a 1x1 projection on aggregated features");
    app.add_option("--threads", g.threads, "Worker threads for batch gradients")->check(CLI::PositiveNumber);

    harness::DatasetSpec ds;
    std::size_t n_train = 2000, n_test = 400;
    fs::path data_out = "data";
    bool no_bars = false;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic moving-object dataset");
    gen->add_option("--out", data_out, "Output directory")->capture_default_str();
    gen->add_option("--train", n_train, "Training clips")->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--test", n_test, "Test clips")->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--grid", ds.grid, "Grid height and width")->capture_default_str();
    gen->add_option("--frames", ds.frames, "Frames per clip")->capture_default_str();
    gen->add_option("--speed", ds.speed, "Pixels per frame")->capture_default_str();
    gen->add_option("--jitter", ds.jitter, "Per-frame scale jitter fraction")->capture_default_str();
    gen->add_option("--noise", ds.noise, "Additive noise amplitude")->capture_default_str();
    gen->add_option("--min-size", ds.min_size, "Smallest object side")->capture_default_str();
    gen->add_option("--max-size", ds.max_size, "Largest object side")->capture_default_str();
    gen->add_flag("--no-bars", no_bars, "Squares only");

    harness::TrainConfig tc;
    DemoSpec spec;
    fs::path data_dir = "data", model_dir = "model", log_path;
    auto* train = app.add_subcommand("train", "Train the demo network");
    train->add_option("--data", data_dir, "Dataset root (train/ and test/)")->capture_default_str();
    train->add_option("--out", model_dir, "Model output directory")->capture_default_str();
    train->add_option("--log", log_path, "Metrics CSV (default <out>/metrics.csv)");
    train->add_option("--epochs", tc.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--batch", tc.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--lr", tc.lr, "Initial learning rate")->capture_default_str();
    train->add_option("--momentum", tc.momentum, "Momentum")->capture_default_str();
    train->add_option("--weight-decay", tc.weight_decay, "Weight decay")->capture_default_str();
    train->add_option("--patience", tc.patience, "Epochs without improvement before halving lr")
        ->capture_default_str();
    train->add_option("--channels", spec.channels, "Feature channels")->capture_default_str();
    train->add_option("--blocks", spec.blocks, "Attention blocks")->capture_default_str();
    train->add_flag("--wall-clock", tc.wall_clock, "Record per-epoch wall time (breaks byte-identical logs)");

    auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
    eval->add_option("--model", model_dir, "Model directory")->required();
    eval->add_option("--data", data_dir, "Dataset root or split directory")->required();

    ad::FiniteDiffOptions fd;
    fs::path grad_csv;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    grad->add_option("--step", fd.step, "Central difference step")->capture_default_str();
    grad->add_option("--tolerance", fd.tolerance, "Max relative error")->capture_default_str();
    grad->add_option("--max-coords", fd.max_coords, "Coordinates sampled per parameter")->capture_default_str();
    grad->add_option("--csv", grad_csv, "Also write the report as CSV");

    checks::FixtureShape shape;
    std::size_t fixtures = 5;
    auto add_shape = [&shape](CLI::App* sub) {
        sub->add_option("--channels", shape.channels, "C")->capture_default_str();
        sub->add_option("--frames", shape.frames, "L")->capture_default_str();
        sub->add_option("--height", shape.height, "H")->capture_default_str();
        sub->add_option("--width", shape.width, "W")->capture_default_str();
    };
    auto* orc = app.add_subcommand("oracle", "Compare the optimized forward pass with the naive oracle");
    orc->add_option("--fixtures", fixtures, "Random fixtures")->capture_default_str();
    add_shape(orc);
    auto* flops = app.add_subcommand("flops", "Closed-form multiply-accumulate count of one block");
    add_shape(flops);

    fs::path clip_path, export_dir = "attention";
    std::size_t qt = 0, qrow = 0, qcol = 0;
    auto* exp = app.add_subcommand("export-attn", "Export attention weights and saliency for one query");
    exp->add_option("--model", model_dir, "Model directory")->required();
    exp->add_option("--clip", clip_path, "Clip tensor file")->required();
    exp->add_option("--t", qt, "Frame")->capture_default_str();
    exp->add_option("--row", qrow, "Query row")->capture_default_str();
    exp->add_option("--col", qcol, "Query column")->capture_default_str();
    exp->add_option("--out", export_dir, "Output directory")->capture_default_str();

    if (argc <= 1) {
        std::cerr << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const bool f64 = g.precision == "f64";
    try {
        if (*gen) {
            ds.bars = !no_bars;
            return cmd_gen_data(g, ds, n_train, n_test, data_out);
        }
        if (*train) {
            return f64 ? cmd_train<double>(g, tc, spec, data_dir, model_dir, log_path)
                       : cmd_train<float>(g, tc, spec, data_dir, model_dir, log_path);
        }
        if (*eval) return f64 ? cmd_eval<double>(g, model_dir, data_dir) : cmd_eval<float>(g, model_dir, data_dir);
        if (*grad) return cmd_gradcheck(g, fd, grad_csv);
        if (*orc) return cmd_oracle(g, fixtures, shape);
        if (*flops) return cmd_flops(g, shape);
        if (*exp) {
            return f64 ? cmd_export<double>(model_dir, clip_path, qt, qrow, qcol, export_dir)
                       : cmd_export<float>(model_dir, clip_path, qt, qrow, qcol, export_dir);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
