// Python module _sifa: numpy in, numpy out. Float64 arrays run in double,
// everything else in single precision.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sifa/blocks.hpp"
#include "sifa/checks.hpp"
#include "sifa/deform.hpp"
#include "sifa/harness.hpp"
#include "sifa/tensor_io.hpp"

namespace py = pybind11;
using namespace sifa;

namespace {

template <typename T>
BasicTensor<T> to_tensor(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return BasicTensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const BasicTensor<T>& t) {
    py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

bool is_f64(const py::array& a) { return a.dtype().is(py::dtype::of<double>()); }

// Dispatches on the array dtype.
template <typename F>
py::array by_dtype(const py::array& a, F&& f) {
    if (is_f64(a)) return f(to_tensor<double>(a));
    return f(to_tensor<float>(a));
}

template <typename T>
BlockParams<T> block_params(const SifaConfig& cfg, std::size_t channels, std::uint64_t seed, bool random) {
    if (random) return checks::random_block_params(cfg, channels, seed).cast<T>();
    return BlockParams<T>::init(cfg, channels, seed);
}

}  // namespace

PYBIND11_MODULE(_sifa, m) {
    m.doc() = "Inter-frame attention blocks, deformable sampling and the demo harness";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    py::enum_<Variant>(m, "Variant")
        .value("correlation_only", Variant::correlation_only)
        .value("regular_attention", Variant::regular_attention)
        .value("full", Variant::full)
        .value("star", Variant::star);
    py::enum_<Sampling>(m, "Sampling").value("regular", Sampling::regular).value("deformable", Sampling::deformable);
    py::enum_<OffsetSource>(m, "OffsetSource")
        .value("next_frame", OffsetSource::next_frame)
        .value("temporal_difference", OffsetSource::temporal_difference)
        .value("motion_saliency", OffsetSource::motion_saliency);
    py::enum_<attn::NormMode>(m, "NormMode").value("raw", attn::NormMode::raw).value("softmax", attn::NormMode::softmax);

    py::class_<SifaConfig>(m, "SifaConfig")
        .def(py::init([](Variant v, std::size_t k) { return SifaConfig::for_variant(v, k); }), py::arg("variant") = Variant::full,
             py::arg("k") = 3)
        .def_readwrite("k", &SifaConfig::k)
        .def_readwrite("sampling", &SifaConfig::sampling)
        .def_readwrite("offset_source", &SifaConfig::offset_source)
        .def_readwrite("norm", &SifaConfig::norm)
        .def_readwrite("variant", &SifaConfig::variant)
        .def_readwrite("value_projection", &SifaConfig::value_projection)
        .def("validate", &SifaConfig::validate)
        .def("pool_size", &SifaConfig::pool_size)
        .def("__repr__", &SifaConfig::describe);

    m.def(
        "block_forward",
        [](const py::array& clip, const SifaConfig& cfg, std::uint64_t seed, bool random_params) {
            return by_dtype(clip, [&](auto t) -> py::array {
                using T = typename decltype(t)::value_type;
                if (t.rank() != 4) throw ShapeError("clip must be C x L x H x W");
                return to_array(sifa_block_forward(t, cfg, block_params<T>(cfg, t.extent(0), seed, random_params)));
            });
        },
        py::arg("clip"), py::arg("config"), py::arg("seed") = 0, py::arg("random_params") = false,
        "One block over a C x L x H x W clip; parameters are the zero-offset init unless random_params.");

    m.def("flop_count", &flop_count, py::arg("config"), py::arg("channels"), py::arg("frames"), py::arg("height"),
          py::arg("width"));

    m.def(
        "temporal_difference",
        [](const py::array& a, const py::array& b) {
            if (is_f64(a)) return py::array(to_array(deform::temporal_difference(to_tensor<double>(a), to_tensor<double>(b))));
            return py::array(to_array(deform::temporal_difference(to_tensor<float>(a), to_tensor<float>(b))));
        },
        py::arg("frame"), py::arg("next_frame"));
    m.def(
        "motion_saliency",
        [](const py::array& a, const py::array& b) {
            const auto fa = to_tensor<double>(a), fb = to_tensor<double>(b);
            return to_array(deform::motion_saliency(deform::temporal_difference(fa, fb), fb).values);
        },
        py::arg("frame"), py::arg("next_frame"), "Saliency of the next frame, in double precision.");
    m.def(
        "bilinear_sample",
        [](const py::array& frame, double row, double col) {
            return deform::bilinear_sample(to_tensor<double>(frame), {row, col});
        },
        py::arg("frame"), py::arg("row"), py::arg("col"));

    m.def(
        "render_clip",
        [](const std::string& direction, double size, double row, double col, std::size_t grid, std::size_t frames,
           double speed, std::uint64_t seed) {
            harness::SyntheticClipSpec s;
            bool found = false;
            for (std::size_t d = 0; d < harness::kDirections; ++d) {
                if (direction == harness::to_string(static_cast<harness::Direction>(d))) {
                    s.direction = static_cast<harness::Direction>(d);
                    found = true;
                }
            }
            if (!found) throw py::value_error("unknown direction '" + direction + "'");
            s.size = size;
            s.row = row;
            s.col = col;
            s.grid = grid;
            s.frames = frames;
            s.speed = speed;
            return to_array(harness::render_clip(s, seed));
        },
        py::arg("direction"), py::arg("size"), py::arg("row"), py::arg("col"), py::arg("grid") = 16,
        py::arg("frames") = 8, py::arg("speed") = 1.0, py::arg("seed") = 0);

    m.def(
        "gen_dataset",
        [](const std::filesystem::path& out, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
            harness::gen_dataset(harness::DatasetSpec{}, n_train, n_test, seed, out);
        },
        py::arg("out"), py::arg("n_train") = 2000, py::arg("n_test") = 400, py::arg("seed") = 0);

    m.def(
        "demo_logits",
        [](const std::filesystem::path& model, const py::array& clips) {
            const auto net = harness::load_net<float>(model);
            const auto batch = to_tensor<float>(clips);
            if (batch.rank() != 4 && batch.rank() != 3) throw ShapeError("clips must be N x L x H x W");
            std::vector<Tensor> list;
            const std::size_t n = batch.extent(0), per = batch.size() / n;
            Shape one(batch.shape().begin() + 1, batch.shape().end());
            one.insert(one.begin(), 1);  // single input channel
            for (std::size_t i = 0; i < n; ++i) {
                list.emplace_back(one, std::vector<float>(batch.ptr() + i * per, batch.ptr() + (i + 1) * per));
            }
            return to_array(demo_net_forward<float>(list, net));
        },
        py::arg("model_dir"), py::arg("clips"), "Logits of a saved model for an N x L x H x W batch.");

    m.def(
        "read_tensor",
        [](const std::filesystem::path& p) {
            return std::visit([](const auto& t) { return py::array(to_array(t)); }, read_tensor(p));
        },
        py::arg("path"));
    m.def(
        "write_tensor",
        [](const std::filesystem::path& p, const py::array& a) {
            if (is_f64(a)) {
                write_tensor(p, to_tensor<double>(a));
            } else {
                write_tensor(p, to_tensor<float>(a));
            }
        },
        py::arg("path"), py::arg("array"));

    m.def(
        "oracle_fixtures",
        [](std::size_t count, std::uint64_t seed) {
            py::list out;
            for (const auto& r : checks::random_oracle_fixtures(count, seed)) {
                out.append(py::dict(py::arg("label") = r.label, py::arg("diff_f32") = r.diff_f32,
                                    py::arg("diff_f64") = r.diff_f64, py::arg("pass") = r.pass));
            }
            return out;
        },
        py::arg("count") = 50, py::arg("seed") = 0);

    m.def(
        "gradcheck",
        [](const SifaConfig& cfg, std::uint64_t seed) {
            auto reports = checks::primitive_gradchecks(cfg.k, seed);
            for (auto& r : checks::demo_net_gradcheck(cfg, seed)) reports.push_back(std::move(r));
            py::list out;
            for (const auto& r : reports) {
                out.append(py::dict(py::arg("parameter") = r.parameter, py::arg("max_rel_err") = r.max_rel_err,
                                    py::arg("excluded") = r.excluded, py::arg("pass") = r.pass));
            }
            return out;
        },
        py::arg("config"), py::arg("seed") = 0);
}
