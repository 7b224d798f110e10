#include "jdl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "jdl/classifier.hpp"
#include "jdl/error.hpp"
#include "jdl/layer.hpp"
#include "jdl/qtable.hpp"

namespace jdl {

namespace {

template <typename F>
double central_diff(F&& f, double x, double h) {
    return (8.0 * (f(x + h) - f(x - h)) - (f(x + 2 * h) - f(x - 2 * h))) / (12.0 * h);
}

void record(PartialCheck& c, double analytic, double numeric, double rel_tol, double abs_tol,
            const std::string& where) {
    ++c.checked;
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (std::abs(analytic - numeric) > abs_tol + rel_tol * scale) {
        ++c.failures;
    }
    const double rel = std::abs(analytic - numeric) / std::max(scale, abs_tol / rel_tol);
    if (rel > c.max_rel || c.worst.empty()) {
        c.max_rel = std::max(c.max_rel, rel);
        std::ostringstream s;
        s.precision(17);
        s << where << " analytic=" << analytic << " numeric=" << numeric;
        c.worst = s.str();
    }
}

double cross_entropy(const ImageTensor& x, int label, const QuantTables& t, const ClassifierParams& p) {
    return classifier_sample_backward(jpeg_layer_apply(x, t, LayerConfig{}), label, p).loss;
}

}  // namespace

QuantizerCheck check_quantizer_gradients(int samples, std::uint64_t seed, const std::vector<int>& levels,
                                         Support support, double rel_tol, double abs_tol) {
    if (samples < 1) {
        throw ArgumentError("gradient check needs at least one sample");
    }
    if (levels.empty()) {
        throw ArgumentError("gradient check needs at least one alphabet size");
    }
    for (int L : levels) {
        if (L < 1) {
            throw ArgumentError("alphabet half-width must be >= 1");
        }
    }
    constexpr double h = 1e-4;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    QuantizerCheck out;
    for (int t = 0; t < samples; ++t) {
        const int L = levels[static_cast<std::size_t>(t) % levels.size()];
        const double q = 0.1 + 9.9 * u01(rng);
        const double alpha = 0.5 + 19.5 * u01(rng);
        double z = (2 * u01(rng) - 1) * L * q;
        if (support == Support::Masked) {
            // Stay clear of the half-integer points where the 5-point window jumps.
            const double r = z / q;
            const double centre = std::round(r);
            z = (centre + std::clamp(r - centre, -0.4, 0.4)) * q;
        }
        const QuantizerParams p{q, alpha, L};
        const QuantGrad g = quantize_grad(z, p, support);
        // r = z/q moves by |r| hq / q; keep that well inside the softmax
        // transition width ~1 / (2 hardness) without shrinking the step (and
        // amplifying roundoff) where the CPMF is already smooth.
        const double r = std::abs(z) / q;
        const double hq = std::min(h, 1e-2 * q / (std::max(r, 1e-12) * std::max(1.0, 2.0 * p.hardness())));
        const double fz = central_diff([&](double v) { return quantize_soft(v, {q, alpha, L}, support); }, z, h);
        const double fq = central_diff([&](double v) { return quantize_soft(z, {v, alpha, L}, support); }, q, hq);
        const double fa = central_diff([&](double v) { return quantize_soft(z, {q, v, L}, support); }, alpha, h);
        std::ostringstream where;
        where.precision(17);
        where << "z=" << z << " q=" << q << " alpha=" << alpha << " L=" << L;
        record(out.d_z, g.d_z, fz, rel_tol, abs_tol, where.str());
        record(out.d_q, g.d_q, fq, rel_tol, abs_tol, where.str());
        record(out.d_alpha, g.d_alpha, fa, rel_tol, abs_tol, where.str());
    }
    return out;
}

LayerCheck check_layer_gradients(int configs, std::uint64_t seed, double rel_tol, double abs_tol) {
    if (configs < 1) {
        throw ArgumentError("layer gradient check needs at least one configuration");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    LayerCheck out;
    for (int c = 0; c < configs; ++c) {
        ImageTensor x(3, 8, 8);
        for (double& v : x.data) {
            v = 255.0 * u01(rng);
        }
        QuantTables t = init_ones(8);
        for (int m = 0; m < kBlockArea; ++m) {
            t.q_y[m] = 1.0 + 19.0 * u01(rng);
            t.q_c[m] = 1.0 + 19.0 * u01(rng);
            t.alpha_y[m] = (0.3 + 2.7 * u01(rng)) / (t.q_y[m] * t.q_y[m]);
            t.alpha_c[m] = (0.3 + 2.7 * u01(rng)) / (t.q_c[m] * t.q_c[m]);
        }
        ClassifierParams p = ClassifierParams::create(Architecture::Linear, static_cast<int>(x.size()), 3);
        for (double& w : p.values) {
            w = 0.3 * normal(rng);
        }
        const int label = static_cast<int>(rng() % 3);

        const LayerOutput fwd = jpeg_layer_forward(x, t, LayerConfig{});
        const SampleGrad sg = classifier_sample_backward(fwd.reconstruction, label, p);
        const JpegGrad g = jpeg_layer_backward(sg.d_input, fwd.context);

        for (int group = 0; group < 2; ++group) {
            for (int m = 0; m < kBlockArea; ++m) {
                Table& table = group == 0 ? t.q_y : t.q_c;
                const double q0 = table[m];
                const double numeric = central_diff(
                    [&](double v) {
                        table[m] = v;
                        const double loss = cross_entropy(x, label, t, p);
                        table[m] = q0;
                        return loss;
                    },
                    q0, 1e-4 * q0);
                const double analytic = group == 0 ? g.d_q_y[m] : g.d_q_c[m];
                record(out.d_q, analytic, numeric, rel_tol, abs_tol,
                       "config " + std::to_string(c) + (group == 0 ? " q_y[" : " q_c[") + std::to_string(m) + "]");
            }
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double x0 = x.data[i];
            const double numeric = central_diff(
                [&](double v) {
                    x.data[i] = v;
                    const double loss = cross_entropy(x, label, t, p);
                    x.data[i] = x0;
                    return loss;
                },
                x0, 1e-3);
            record(out.d_pixel, g.d_pixels.data[i], numeric, rel_tol, abs_tol,
                   "config " + std::to_string(c) + " pixel " + std::to_string(i));
        }
    }
    return out;
}

}  // namespace jdl
