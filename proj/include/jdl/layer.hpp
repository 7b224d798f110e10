#pragma once

#include <cstdint>
#include <vector>

#include "jdl/pipeline.hpp"
#include "jdl/qtable.hpp"
#include "jdl/soft_quantizer.hpp"
#include "jdl/tensor.hpp"

namespace jdl {

struct LayerConfig {
    QuantizerVariant variant = QuantizerVariant::Soft;
    SubsamplingMode mode = SubsamplingMode::S444;
    Support support = Support::Full;
    // AdditiveNoise switches to the uniform quantizer when false.
    bool training = true;
    // Number of sequential quantizer applications per coefficient.
    int rounds = 1;
    // Base seed for stochastic variants; coefficient streams derive from it.
    std::uint64_t seed = 0;
};

// Per-round local partials of every quantized coefficient, plus the analysis shape.
struct LayerContext {
    AnalysisContext analysis;
    std::vector<DctCoefficients> d_z;
    std::vector<DctCoefficients> d_q;
    std::vector<DctCoefficients> d_alpha;
};

struct LayerOutput {
    ImageTensor reconstruction;
    LayerContext context;
};

// RGB -> YCbCr -> subsample -> DCT -> quantize -> IDCT -> upsample -> RGB.
LayerOutput jpeg_layer_forward(const ImageTensor& x, const QuantTables& tables, const LayerConfig& config);

// Forward without recording partials.
ImageTensor jpeg_layer_apply(const ImageTensor& x, const QuantTables& tables, const LayerConfig& config);

struct JpegGrad {
    ImageTensor d_pixels;
    Table d_q_y{};
    Table d_q_c{};
    Table d_alpha_y{};
    Table d_alpha_c{};
};

// Table gradients are sums over blocks (and over Cb and Cr for chroma).
JpegGrad jpeg_layer_backward(const ImageTensor& upstream, const LayerContext& context);

}  // namespace jdl
