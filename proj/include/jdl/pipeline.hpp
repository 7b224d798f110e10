#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "jdl/tensor.hpp"

namespace jdl {

inline constexpr int kBlockSize = 8;
inline constexpr int kBlockArea = 64;
inline constexpr double kLevelShift = 128.0;

// kZigzag[m] is the raster index (row * 8 + col) of zigzag slot m.
extern const std::array<int, kBlockArea> kZigzag;

enum class SubsamplingMode { S444, S422, S420 };

// One image plane; chroma planes may be smaller than luma after subsampling.
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Plane() = default;
    Plane(int height, int width, double fill = 0.0)
        : height(height), width(width), data(static_cast<std::size_t>(height) * width, fill) {}

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

using Planes = std::vector<Plane>;

// Coefficients of one channel, stored frequency-major: values[m * block_count() + n].
struct CoefficientPlane {
    int blocks_y = 0;
    int blocks_x = 0;
    std::vector<double> values;

    CoefficientPlane() = default;
    CoefficientPlane(int blocks_y, int blocks_x)
        : blocks_y(blocks_y), blocks_x(blocks_x), values(static_cast<std::size_t>(blocks_y) * blocks_x * kBlockArea) {}

    int block_count() const { return blocks_y * blocks_x; }
    double& at(int m, int n) { return values[static_cast<std::size_t>(m) * block_count() + n]; }
    double at(int m, int n) const { return values[static_cast<std::size_t>(m) * block_count() + n]; }
};

// z[l][m][n]: channel l (Y, Cb, Cr), zigzag frequency m, raster block n.
struct DctCoefficients {
    std::vector<CoefficientPlane> channels;

    bool same_shape(const DctCoefficients& other) const;
    // All-zero coefficients shaped like *this.
    DctCoefficients zeros_like() const;
};

// Full-range BT.601; no clamping.
ImageTensor rgb_to_ycbcr(const ImageTensor& rgb);
ImageTensor ycbcr_to_rgb(const ImageTensor& ycc);
// Transposes of the linear parts of the two conversions.
ImageTensor rgb_to_ycbcr_backward(const ImageTensor& grad_ycc);
ImageTensor ycbcr_to_rgb_backward(const ImageTensor& grad_rgb);

// Chroma mean pooling (2x2 for S420, 1x2 for S422); luma untouched.
Planes subsample(const ImageTensor& ycc, SubsamplingMode mode);
// Nearest-neighbour replication back to luma resolution.
ImageTensor upsample(const Planes& planes, SubsamplingMode mode);
ImageTensor subsample_backward(const Planes& grad, SubsamplingMode mode);
Planes upsample_backward(const ImageTensor& grad, SubsamplingMode mode);

Planes image_to_planes(const ImageTensor& image);

// Level shift, 8x8 raster blocking, orthonormal DCT-II, zigzag flattening.
DctCoefficients forward_dct(const Planes& planes);
DctCoefficients forward_dct(const ImageTensor& image);
// Inverse zigzag, orthonormal IDCT, block merge, level shift.
Planes inverse_dct(const DctCoefficients& coeffs);
// Adjoints of the linear parts (no level shift).
Planes forward_dct_backward(const DctCoefficients& grad_z);
DctCoefficients inverse_dct_backward(const Planes& grad_planes);

// Single-block helpers on raster-ordered 8x8 data, exposed for tests.
std::array<double, kBlockArea> dct_block(const std::array<double, kBlockArea>& pixels);
std::array<double, kBlockArea> idct_block(const std::array<double, kBlockArea>& coeffs);

struct AnalysisContext {
    SubsamplingMode mode = SubsamplingMode::S444;
    int height = 0;
    int width = 0;
};

// RGB -> YCbCr -> subsample -> DCT.
DctCoefficients analyze(const ImageTensor& rgb, SubsamplingMode mode);
// IDCT -> upsample -> YCbCr -> RGB.
ImageTensor synthesize(const DctCoefficients& coeffs, SubsamplingMode mode);

// Gradient w.r.t. input RGB pixels given a gradient w.r.t. analyze()'s output.
ImageTensor pipeline_backward(const DctCoefficients& grad_z, const AnalysisContext& context);
// Gradient w.r.t. coefficients given a gradient w.r.t. synthesize()'s output.
DctCoefficients synthesis_backward(const ImageTensor& grad_rgb, SubsamplingMode mode);

}  // namespace jdl
