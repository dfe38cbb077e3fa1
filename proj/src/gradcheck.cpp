#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "sifa/autodiff.hpp"

namespace sifa::ad {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n <= limit) return idx;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < limit; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Probe evaluate(const std::function<Probe()>& fn, const std::string& name, std::size_t coord) {
    const Probe p = fn();
    if (!std::isfinite(p.value)) {
        throw NumericError("finite_diff_check: objective not finite while perturbing " + name + "[" +
                           std::to_string(coord) + "]");
    }
    return p;
}

}  // namespace

std::vector<GradReport> finite_diff_check(const std::function<Probe()>& fn, std::span<const CheckedParam> params,
                                          const FiniteDiffOptions& options) {
    std::vector<GradReport> reports;
    std::uint64_t stream = options.seed;
    for (const auto& param : params) {
        if (!param.value || !param.analytic || param.value->shape() != param.analytic->shape()) {
            throw ShapeError("finite_diff_check: parameter '" + param.name + "' lacks a matching analytic gradient");
        }
        GradReport rep;
        rep.parameter = param.name;
        rep.analytic = *param.analytic;
        rep.numeric = TensorD(param.value->shape());
        TensorD& theta = *param.value;
        for (std::size_t i : pick_coords(theta.size(), options.max_coords, stream++)) {
            const double orig = theta[i];
            theta[i] = orig + options.step;
            const Probe plus = evaluate(fn, param.name, i);
            theta[i] = orig - options.step;
            const Probe minus = evaluate(fn, param.name, i);
            theta[i] = orig;
            if (plus.branch != minus.branch) {
                ++rep.excluded;
                continue;
            }
            const double numeric = (plus.value - minus.value) / (2.0 * options.step);
            rep.numeric[i] = numeric;
            rep.checked.push_back(i);
            rep.max_rel_err = std::max(rep.max_rel_err, relative_error(rep.analytic[i], numeric));
        }
        rep.pass = !rep.checked.empty() && rep.max_rel_err < options.tolerance;
        reports.push_back(std::move(rep));
    }
    return reports;
}

std::string render_table(std::span<const GradReport> reports) {
    std::size_t width = 9;
    for (const auto& r : reports) width = std::max(width, r.parameter.size());
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s %8s %8s %12s  %s\n", static_cast<int>(width), "parameter", "checked",
                  "excluded", "max_rel_err", "result");
    os << line;
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%-*s %8zu %8zu %12.3e  %s\n", static_cast<int>(width), r.parameter.c_str(),
                      r.checked.size(), r.excluded, r.max_rel_err, r.pass ? "PASS" : "FAIL");
        os << line;
    }
    return os.str();
}

std::string render_csv(std::span<const GradReport> reports) {
    std::ostringstream os;
    os << "parameter,max_rel_err,pass\n";
    for (const auto& r : reports) {
        char err[32];
        std::snprintf(err, sizeof err, "%.6e", r.max_rel_err);
        os << r.parameter << ',' << err << ',' << (r.pass ? "true" : "false") << '\n';
    }
    return os.str();
}

}  // namespace sifa::ad
