#include "sifa/oracle.hpp"

#include <cmath>
#include <vector>

namespace sifa::oracle {

namespace {

struct Clip {
    std::size_t C, L, H, W;
    std::vector<double> v;
    double at(std::size_t c, std::size_t t, long i, long j) const {
        if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W)) return 0.0;
        return v[((c * L + t) * H + i) * W + j];
    }
};

struct Plane {
    std::size_t C, H, W;
    std::vector<double> v;
    double at(std::size_t c, long i, long j) const {
        if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W)) return 0.0;
        return v[(c * H + i) * W + j];
    }
};

void tick(OpCounter* counter, std::uint64_t n = 1) {
    if (counter) counter->macs += n;
}

template <typename T>
std::vector<double> widen(const BasicTensor<T>& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

// Offsets for the pair (frame t, neighbor frame u) under one estimator.
template <typename T>
Plane offsets_for(const Clip& x, std::size_t t, std::size_t u, OffsetSource source, const BasicConv2dParams<T>& est,
                  OpCounter* counter) {
    Plane in{x.C, x.H, x.W, std::vector<double>(x.C * x.H * x.W)};
    for (std::size_t c = 0; c < x.C; ++c) {
        for (std::size_t i = 0; i < x.H; ++i) {
            for (std::size_t j = 0; j < x.W; ++j) {
                const double cur = x.at(c, t, i, j);
                const double nb = x.at(c, u, i, j);
                double e = nb;
                if (source == OffsetSource::temporal_difference) e = nb - cur;
                if (source == OffsetSource::motion_saliency) e = nb / (1.0 + std::exp(-(nb - cur)));
                in.v[(c * x.H + i) * x.W + j] = e;
            }
        }
    }
    const std::size_t outs = est.weight.extent(0);
    const std::vector<double> w = widen(est.weight);
    Plane off{outs, x.H, x.W, std::vector<double>(outs * x.H * x.W)};
    for (std::size_t o = 0; o < outs; ++o) {
        for (std::size_t i = 0; i < x.H; ++i) {
            for (std::size_t j = 0; j < x.W; ++j) {
                double s = est.bias[o];
                for (std::size_t c = 0; c < x.C; ++c) {
                    for (long di = -1; di <= 1; ++di) {
                        for (long dj = -1; dj <= 1; ++dj) {
                            s += w[((o * x.C + c) * 3 + (di + 1)) * 3 + (dj + 1)] *
                                 in.at(c, static_cast<long>(i) + di, static_cast<long>(j) + dj);
                            tick(counter);
                        }
                    }
                }
                off.v[(o * x.H + i) * x.W + j] = s;
            }
        }
    }
    return off;
}

double tent(double d) { return std::max(0.0, 1.0 - std::abs(d)); }

}  // namespace

template <typename T>
BasicTensor<T> oracle_forward(const BasicTensor<T>& clip, const SifaConfig& cfg, const BlockParams<T>& params,
                              OpCounter* counter) {
    params.validate(cfg, clip.extent(0));
    const Clip x{clip.extent(0), clip.extent(1), clip.extent(2), clip.extent(3), widen(clip)};
    const std::size_t C = x.C, L = x.L, H = x.H, W = x.W;
    const long half = static_cast<long>(cfg.k / 2);
    const std::size_t kk = cfg.k * cfg.k;
    const bool deform = cfg.sampling == Sampling::deformable;
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));
    BasicTensor<T> out(clip.shape());

    for (std::size_t t = 0; t < L; ++t) {
        const std::size_t next = t + 1 < L ? t + 1 : t;
        const std::size_t prev = t > 0 ? t - 1 : t;
        std::vector<std::size_t> dirs{next};
        if (cfg.variant == Variant::star) dirs.push_back(prev);

        std::vector<Plane> offs;
        if (deform) {
            offs.push_back(offsets_for(x, t, next, cfg.offset_source, *params.offset_estimator, counter));
            if (cfg.variant == Variant::star) {
                offs.push_back(offsets_for(x, t, prev, cfg.offset_source, *params.backward_estimator, counter));
            }
        }

        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) {
                // Sampled neighbor features, all directions concatenated.
                std::vector<std::vector<double>> s;
                for (std::size_t d = 0; d < dirs.size(); ++d) {
                    for (long a = -half; a <= half; ++a) {
                        for (long b = -half; b <= half; ++b) {
                            std::vector<double> v(C, 0.0);
                            const long gi = static_cast<long>(i) + a;
                            const long gj = static_cast<long>(j) + b;
                            if (!deform) {
                                for (std::size_t c = 0; c < C; ++c) v[c] = x.at(c, dirs[d], gi, gj);
                            } else {
                                const std::size_t g = static_cast<std::size_t>((a + half) * static_cast<long>(cfg.k) +
                                                                               (b + half));
                                const double pr = gi + offs[d].at(2 * g, i, j);
                                const double pc = gj + offs[d].at(2 * g + 1, i, j);
                                const long r0 = static_cast<long>(std::floor(pr));
                                const long c0 = static_cast<long>(std::floor(pc));
                                for (std::size_t c = 0; c < C; ++c) {
                                    for (long rr = r0; rr <= r0 + 1; ++rr) {
                                        for (long cc = c0; cc <= c0 + 1; ++cc) {
                                            v[c] += tent(pr - rr) * tent(pc - cc) * x.at(c, dirs[d], rr, cc);
                                            tick(counter);
                                        }
                                    }
                                }
                            }
                            s.push_back(v);
                        }
                    }
                }

                std::vector<double> z(s.size(), 0.0);
                for (std::size_t n = 0; n < s.size(); ++n) {
                    for (std::size_t c = 0; c < C; ++c) {
                        z[n] += x.at(c, t, i, j) * s[n][c];
                        tick(counter);
                    }
                }
                if (cfg.norm == attn::NormMode::softmax) {
                    double m = z[0] * scale;
                    for (double e : z) m = std::max(m, e * scale);
                    double tot = 0.0;
                    for (double& e : z) {
                        e = std::exp(e * scale - m);
                        tot += e;
                    }
                    for (double& e : z) e /= tot;
                }

                std::vector<double> y(C);
                if (cfg.variant == Variant::correlation_only) {
                    const auto& p = *params.correlation_projection;
                    for (std::size_t o = 0; o < C; ++o) {
                        double acc = p.bias[o];
                        for (std::size_t g = 0; g < kk; ++g) {
                            acc += static_cast<double>(p.weight[o * kk + g]) * z[g];
                            tick(counter);
                        }
                        y[o] = acc;
                    }
                } else {
                    for (std::size_t c = 0; c < C; ++c) {
                        double acc = 0.0;
                        for (std::size_t n = 0; n < s.size(); ++n) {
                            acc += z[n] * s[n][c];
                            tick(counter);
                        }
                        y[c] = acc;
                    }
                    if (params.value_projection) {
                        const auto& p = *params.value_projection;
                        std::vector<double> proj(C);
                        for (std::size_t o = 0; o < C; ++o) {
                            double acc = p.bias[o];
                            for (std::size_t c = 0; c < C; ++c) {
                                acc += static_cast<double>(p.weight[o * C + c]) * y[c];
                                tick(counter);
                            }
                            proj[o] = acc;
                        }
                        y = proj;
                    }
                }
                for (std::size_t c = 0; c < C; ++c) {
                    out[((c * L + t) * H + i) * W + j] = static_cast<T>(x.at(c, t, i, j) + y[c]);
                }
            }
        }
    }
    return out;
}

template BasicTensor<float> oracle_forward<float>(const BasicTensor<float>&, const SifaConfig&,
                                                  const BlockParams<float>&, OpCounter*);
template BasicTensor<double> oracle_forward<double>(const BasicTensor<double>&, const SifaConfig&,
                                                    const BlockParams<double>&, OpCounter*);

}  // namespace sifa::oracle
