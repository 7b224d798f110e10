#include "jdl/soft_quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "jdl/error.hpp"

namespace jdl {

namespace {

// Indices whose exponent exceeds the best level's by more than this carry
// relative weight below e^-60 ~ 1e-26, far under double resolution of any sum.
constexpr double kNegligibleGap = 60.0;

struct Window {
    int lo = 0;
    int hi = 0;
    int center = 0;
};

int clamp_index(double v, int levels) {
    return static_cast<int>(std::clamp(v, -static_cast<double>(levels), static_cast<double>(levels)));
}

Window support_window(double r, double hardness, int levels, Support support) {
    Window w;
    w.center = clamp_index(round_half_away(r), levels);
    if (support == Support::Masked) {
        w.lo = std::max(w.center - kMaskedWidth / 2, -levels);
        w.hi = std::min(w.center + kMaskedWidth / 2, levels);
        return w;
    }
    const double d = r - w.center;
    const double reach = std::sqrt(kNegligibleGap / hardness + d * d);
    if (!std::isfinite(reach)) {
        w.lo = -levels;
        w.hi = levels;
        return w;
    }
    w.lo = clamp_index(std::floor(r - reach), levels);
    w.hi = clamp_index(std::ceil(r + reach), levels);
    return w;
}

// Unnormalised weights exp(-hardness ((r - i)^2 - (r - center)^2)) over the window.
template <typename Fn>
void for_each_weight(double r, double hardness, const Window& w, Fn&& fn) {
    const double d0 = r - w.center;
    const double base = hardness * d0 * d0;
    for (int i = w.lo; i <= w.hi; ++i) {
        const double d = r - i;
        fn(i, std::exp(-(hardness * d * d - base)));
    }
}

void require_finite(double z) {
    if (!std::isfinite(z)) {
        throw ArgumentError("quantizer input is not finite");
    }
}

// Index-space moments: mean, variance and third central moment of i under the CPMF.
struct IndexMoments {
    double mean = 0.0;
    double var = 0.0;
    double m3 = 0.0;
};

IndexMoments index_moments(double r, double hardness, const Window& w) {
    // Weights are evaluated once and reused by the centred second pass.
    thread_local std::vector<double> weights;
    weights.clear();
    double total = 0.0;
    double first = 0.0;
    for_each_weight(r, hardness, w, [&](int i, double wt) {
        weights.push_back(wt);
        total += wt;
        first += wt * i;
    });
    IndexMoments m;
    m.mean = first / total;
    double second = 0.0;
    double third = 0.0;
    for (int i = w.lo; i <= w.hi; ++i) {
        const double wt = weights[static_cast<std::size_t>(i - w.lo)];
        const double k = i - m.mean;
        second += wt * k * k;
        third += wt * k * k * k;
    }
    m.var = second / total;
    m.m3 = third / total;
    return m;
}

}  // namespace

void QuantizerParams::validate() const {
    if (!(q > 0.0) || !std::isfinite(q)) {
        throw ArgumentError("quantizer step q must be positive and finite");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ArgumentError("quantizer alpha must be positive and finite");
    }
    if (levels < 1) {
        throw ArgumentError("quantizer alphabet half-width L must be >= 1");
    }
}

double Cpmf::probability(int index) const {
    if (index < first_index || index > last_index()) {
        return 0.0;
    }
    return probabilities[static_cast<std::size_t>(index - first_index)];
}

double round_half_away(double x) { return std::round(x); }

Cpmf cpmf(double z, const QuantizerParams& p, Support support) {
    p.validate();
    require_finite(z);
    const double r = z / p.q;
    const double h = p.hardness();
    const Window w = support_window(r, h, p.levels, support);
    Cpmf out;
    out.support = support;
    out.center_index = w.center;
    // Full support is reported over the whole alphabet; entries outside the
    // window are exact zeros.
    const Window span = support == Support::Full ? Window{-p.levels, p.levels, w.center} : w;
    out.first_index = span.lo;
    out.probabilities.assign(static_cast<std::size_t>(span.hi - span.lo + 1), 0.0);
    double total = 0.0;
    for_each_weight(r, h, w, [&](int i, double wt) {
        out.probabilities[static_cast<std::size_t>(i - span.lo)] = wt;
        total += wt;
    });
    for (double& v : out.probabilities) {
        v /= total;
    }
    return out;
}

SoftStats soft_stats(double z, const QuantizerParams& p, Support support) {
    p.validate();
    require_finite(z);
    const double r = z / p.q;
    const double h = p.hardness();
    const IndexMoments m = index_moments(r, h, support_window(r, h, p.levels, support));
    return {p.q * m.mean, p.q * p.q * m.var, p.q * p.q * p.q * m.m3};
}

double quantize_soft(double z, const QuantizerParams& p, Support support) {
    return soft_stats(z, p, support).mean;
}

double quantize_uniform(double z, const QuantizerParams& p) {
    p.validate();
    return clamp_index(round_half_away(z / p.q), p.levels) * p.q;
}

double quantize_stochastic(double z, const QuantizerParams& p, std::mt19937_64& rng, Support support) {
    p.validate();
    require_finite(z);
    const double r = z / p.q;
    const double h = p.hardness();
    const Window w = support_window(r, h, p.levels, support);
    double total = 0.0;
    for_each_weight(r, h, w, [&](int, double wt) { total += wt; });
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    int chosen = w.hi;
    bool done = false;
    for_each_weight(r, h, w, [&](int i, double wt) {
        if (done) {
            return;
        }
        acc += wt;
        if (u < acc) {
            chosen = i;
            done = true;
        }
    });
    return chosen * p.q;
}

SoftResult quantize_soft_with_grad(double z, const QuantizerParams& p, Support support) {
    p.validate();
    require_finite(z);
    const double r = z / p.q;
    const double h = p.hardness();
    const IndexMoments m = index_moments(r, h, support_window(r, h, p.levels, support));
    // With v = q i: Skew_u = mu3 + 2 E{v} Var, which turns the published
    // partials into these index-space forms.
    SoftResult out;
    out.value = p.q * m.mean;
    out.grad.d_z = 2.0 * h * m.var;
    out.grad.d_q = m.mean + 2.0 * h * ((r - 2.0 * m.mean) * m.var - m.m3);
    out.grad.d_alpha = p.q * p.q * p.q * (2.0 * (r - m.mean) * m.var - m.m3);
    return out;
}

QuantGrad quantize_grad(double z, const QuantizerParams& p, Support support) {
    return quantize_soft_with_grad(z, p, support).grad;
}

VariantOutput quantize_variant_forward_backward(double z, const QuantizerParams& p, QuantizerVariant variant,
                                                std::mt19937_64& rng, double upstream, bool training,
                                                Support support) {
    p.validate();
    require_finite(z);
    const double r = z / p.q;
    const double L = p.levels;
    VariantOutput out;
    auto uniform = [&] {
        const double idx = std::clamp(round_half_away(r), -L, L);
        out.value = idx * p.q;
        out.grad = {0.0, idx, 0.0};
    };
    switch (variant) {
        case QuantizerVariant::Soft: {
            const SoftResult s = quantize_soft_with_grad(z, p, support);
            out.value = s.value;
            out.grad = s.grad;
            break;
        }
        case QuantizerVariant::Uniform:
            uniform();
            break;
        case QuantizerVariant::StraightThrough: {
            const double idx = std::clamp(round_half_away(r), -L, L);
            out.value = idx * p.q;
            if (r < -L) {
                out.grad = {0.0, -L, 0.0};
            } else if (r > L) {
                out.grad = {0.0, L, 0.0};
            } else {
                out.grad = {1.0, idx - r, 0.0};
            }
            break;
        }
        case QuantizerVariant::AdditiveNoise:
            if (training) {
                const double u = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
                out.value = z + p.q * u;
                out.grad = {1.0, u, 0.0};
            } else {
                uniform();
            }
            break;
        case QuantizerVariant::PolynomialRounding: {
            const double idx = round_half_away(r);
            const double res = r - idx;
            out.value = p.q * (idx + res * res * res);
            out.grad = {3.0 * res * res, idx + res * res * res - 3.0 * r * res * res, 0.0};
            break;
        }
        default:
            throw ArgumentError("unknown quantizer variant");
    }
    out.grad.d_z *= upstream;
    out.grad.d_q *= upstream;
    out.grad.d_alpha *= upstream;
    return out;
}

const char* to_string(QuantizerVariant variant) {
    switch (variant) {
        case QuantizerVariant::Soft: return "soft";
        case QuantizerVariant::Uniform: return "uniform";
        case QuantizerVariant::StraightThrough: return "ste";
        case QuantizerVariant::AdditiveNoise: return "noise";
        case QuantizerVariant::PolynomialRounding: return "poly";
    }
    return "unknown";
}

QuantizerVariant parse_variant(const std::string& name) {
    for (auto v : {QuantizerVariant::Soft, QuantizerVariant::Uniform, QuantizerVariant::StraightThrough,
                   QuantizerVariant::AdditiveNoise, QuantizerVariant::PolynomialRounding}) {
        if (name == to_string(v)) {
            return v;
        }
    }
    throw ArgumentError("unknown quantizer variant '" + name + "'");
}

}  // namespace jdl
