#include "jdl/layer.hpp"

#include <random>
#include <string>

#include "jdl/error.hpp"

namespace jdl {

namespace {

DctCoefficients quantize_all(const DctCoefficients& z, const QuantTables& tables, const LayerConfig& config,
                             LayerContext* ctx) {
    if (config.rounds < 1) {
        throw ArgumentError("quantizer rounds must be >= 1");
    }
    const bool stochastic = config.variant == QuantizerVariant::AdditiveNoise && config.training;
    DctCoefficients current = z;
    std::uint64_t linear_index = 0;
    for (int round = 0; round < config.rounds; ++round) {
        DctCoefficients next = current.zeros_like();
        DctCoefficients dz, dq, da;
        if (ctx != nullptr) {
            dz = current.zeros_like();
            dq = current.zeros_like();
            da = current.zeros_like();
        }
        std::mt19937_64 rng;
        for (std::size_t l = 0; l < current.channels.size(); ++l) {
            const CoefficientPlane& in = current.channels[l];
            const int blocks = in.block_count();
            for (int m = 0; m < kBlockArea; ++m) {
                const QuantizerParams p = tables.params(static_cast<int>(l), m);
                for (int n = 0; n < blocks; ++n, ++linear_index) {
                    if (stochastic) {
                        rng.seed(coefficient_seed(config.seed, linear_index));
                    }
                    const VariantOutput o = quantize_variant_forward_backward(
                        in.at(m, n), p, config.variant, rng, 1.0, config.training, config.support);
                    next.channels[l].at(m, n) = o.value;
                    if (ctx != nullptr) {
                        dz.channels[l].at(m, n) = o.grad.d_z;
                        dq.channels[l].at(m, n) = o.grad.d_q;
                        da.channels[l].at(m, n) = o.grad.d_alpha;
                    }
                }
            }
        }
        if (ctx != nullptr) {
            ctx->d_z.push_back(std::move(dz));
            ctx->d_q.push_back(std::move(dq));
            ctx->d_alpha.push_back(std::move(da));
        }
        current = std::move(next);
    }
    return current;
}

LayerOutput run(const ImageTensor& x, const QuantTables& tables, const LayerConfig& config, bool record) {
    if (x.channels != 3) {
        throw ArgumentError("JPEG layer expects an RGB image");
    }
    LayerOutput out;
    out.context.analysis = {config.mode, x.height, x.width};
    const DctCoefficients z = analyze(x, config.mode);
    const DctCoefficients zhat = quantize_all(z, tables, config, record ? &out.context : nullptr);
    out.reconstruction = synthesize(zhat, config.mode);
    return out;
}

}  // namespace

LayerOutput jpeg_layer_forward(const ImageTensor& x, const QuantTables& tables, const LayerConfig& config) {
    return run(x, tables, config, true);
}

ImageTensor jpeg_layer_apply(const ImageTensor& x, const QuantTables& tables, const LayerConfig& config) {
    return run(x, tables, config, false).reconstruction;
}

JpegGrad jpeg_layer_backward(const ImageTensor& upstream, const LayerContext& context) {
    if (context.d_z.empty()) {
        throw ArgumentError("jpeg_layer_backward: context holds no recorded forward pass");
    }
    if (upstream.channels != 3 || upstream.height != context.analysis.height ||
        upstream.width != context.analysis.width) {
        throw ArgumentError("jpeg_layer_backward: upstream gradient does not match the forward context");
    }
    JpegGrad out;
    DctCoefficients grad = synthesis_backward(upstream, context.analysis.mode);
    if (!grad.same_shape(context.d_z.back())) {
        throw ArgumentError("jpeg_layer_backward: context mismatch");
    }
    for (std::size_t round = context.d_z.size(); round-- > 0;) {
        const DctCoefficients& dz = context.d_z[round];
        const DctCoefficients& dq = context.d_q[round];
        const DctCoefficients& da = context.d_alpha[round];
        for (std::size_t l = 0; l < grad.channels.size(); ++l) {
            Table& q_acc = l == 0 ? out.d_q_y : out.d_q_c;
            Table& a_acc = l == 0 ? out.d_alpha_y : out.d_alpha_c;
            CoefficientPlane& g = grad.channels[l];
            const int blocks = g.block_count();
            for (int m = 0; m < kBlockArea; ++m) {
                double sq = 0.0;
                double sa = 0.0;
                for (int n = 0; n < blocks; ++n) {
                    const double up = g.at(m, n);
                    sq += up * dq.channels[l].at(m, n);
                    sa += up * da.channels[l].at(m, n);
                    g.at(m, n) = up * dz.channels[l].at(m, n);
                }
                q_acc[m] += sq;
                a_acc[m] += sa;
            }
        }
    }
    out.d_pixels = pipeline_backward(grad, context.analysis);
    return out;
}

}  // namespace jdl
