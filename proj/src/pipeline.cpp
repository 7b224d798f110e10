#include "jdl/pipeline.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "jdl/error.hpp"

namespace jdl {

const std::array<int, kBlockArea> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
    41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
    30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
};

namespace {

using Matrix3 = std::array<std::array<double, 3>, 3>;

constexpr Matrix3 kRgbToYcc = {{
    {0.299, 0.587, 0.114},
    {-0.168736, -0.331264, 0.5},
    {0.5, -0.418688, -0.081312},
}};
constexpr std::array<double, 3> kYccOffset = {0.0, 128.0, 128.0};

// Exact inverse of kRgbToYcc; its entries round to the familiar
// 1.402 / -0.344136 / -0.714136 / 1.772, which alone miss 1e-4 round trips.
Matrix3 invert(const Matrix3& a) {
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    Matrix3 inv{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            const int r1 = (c + 1) % 3, r2 = (c + 2) % 3, c1 = (r + 1) % 3, c2 = (r + 2) % 3;
            inv[r][c] = (a[r1][c1] * a[r2][c2] - a[r1][c2] * a[r2][c1]) / det;
        }
    }
    return inv;
}

const Matrix3 kYccToRgb = invert(kRgbToYcc);

// basis[k][i] = c(k) cos((2i + 1) k pi / 16), orthonormal rows.
std::array<std::array<double, kBlockSize>, kBlockSize> make_basis() {
    std::array<std::array<double, kBlockSize>, kBlockSize> b{};
    for (int k = 0; k < kBlockSize; ++k) {
        const double scale = k == 0 ? std::sqrt(1.0 / kBlockSize) : std::sqrt(2.0 / kBlockSize);
        for (int i = 0; i < kBlockSize; ++i) {
            b[k][i] = scale * std::cos((2 * i + 1) * k * std::numbers::pi / (2.0 * kBlockSize));
        }
    }
    return b;
}

const auto kBasis = make_basis();

void require_three_channels(const ImageTensor& t, const char* op) {
    if (t.channels != 3) {
        throw ArgumentError(std::string(op) + ": expected 3 channels, got " + std::to_string(t.channels));
    }
}

ImageTensor apply_color(const ImageTensor& in, const Matrix3& m, const std::array<double, 3>& pre,
                        const std::array<double, 3>& post, bool transpose) {
    ImageTensor out(3, in.height, in.width);
    const std::size_t n = in.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
        const double a[3] = {in.data[i] - pre[0], in.data[n + i] - pre[1], in.data[2 * n + i] - pre[2]};
        for (int r = 0; r < 3; ++r) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c) {
                acc += (transpose ? m[c][r] : m[r][c]) * a[c];
            }
            out.data[r * n + i] = acc + post[r];
        }
    }
    return out;
}

std::pair<int, int> chroma_factors(SubsamplingMode mode) {
    switch (mode) {
        case SubsamplingMode::S444: return {1, 1};
        case SubsamplingMode::S422: return {1, 2};
        case SubsamplingMode::S420: return {2, 2};
    }
    throw ArgumentError("unknown subsampling mode");
}

Plane channel_plane(const ImageTensor& t, int c) {
    Plane p(t.height, t.width);
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(c * t.plane_size()), t.plane_size(), p.data.begin());
    return p;
}

void require_block_aligned(const Plane& p) {
    if (p.height % kBlockSize != 0 || p.width % kBlockSize != 0 || p.height == 0 || p.width == 0) {
        throw ArgumentError("plane " + std::to_string(p.height) + "x" + std::to_string(p.width) +
                            " is not a positive multiple of 8");
    }
}

DctCoefficients blocks_forward(const Planes& planes, double shift) {
    DctCoefficients out;
    out.channels.reserve(planes.size());
    for (const auto& p : planes) {
        require_block_aligned(p);
        CoefficientPlane cp(p.height / kBlockSize, p.width / kBlockSize);
        std::array<double, kBlockArea> block{};
        for (int by = 0; by < cp.blocks_y; ++by) {
            for (int bx = 0; bx < cp.blocks_x; ++bx) {
                for (int y = 0; y < kBlockSize; ++y) {
                    for (int x = 0; x < kBlockSize; ++x) {
                        block[y * kBlockSize + x] = p.at(by * kBlockSize + y, bx * kBlockSize + x) - shift;
                    }
                }
                const auto z = dct_block(block);
                const int n = by * cp.blocks_x + bx;
                for (int m = 0; m < kBlockArea; ++m) {
                    cp.at(m, n) = z[kZigzag[m]];
                }
            }
        }
        out.channels.push_back(std::move(cp));
    }
    return out;
}

Planes blocks_inverse(const DctCoefficients& coeffs, double shift) {
    Planes out;
    out.reserve(coeffs.channels.size());
    for (const auto& cp : coeffs.channels) {
        Plane p(cp.blocks_y * kBlockSize, cp.blocks_x * kBlockSize);
        std::array<double, kBlockArea> z{};
        for (int by = 0; by < cp.blocks_y; ++by) {
            for (int bx = 0; bx < cp.blocks_x; ++bx) {
                const int n = by * cp.blocks_x + bx;
                for (int m = 0; m < kBlockArea; ++m) {
                    z[kZigzag[m]] = cp.at(m, n);
                }
                const auto block = idct_block(z);
                for (int y = 0; y < kBlockSize; ++y) {
                    for (int x = 0; x < kBlockSize; ++x) {
                        p.at(by * kBlockSize + y, bx * kBlockSize + x) = block[y * kBlockSize + x] + shift;
                    }
                }
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

bool DctCoefficients::same_shape(const DctCoefficients& other) const {
    if (channels.size() != other.channels.size()) {
        return false;
    }
    for (std::size_t l = 0; l < channels.size(); ++l) {
        if (channels[l].blocks_y != other.channels[l].blocks_y || channels[l].blocks_x != other.channels[l].blocks_x) {
            return false;
        }
    }
    return true;
}

DctCoefficients DctCoefficients::zeros_like() const {
    DctCoefficients out;
    for (const auto& cp : channels) {
        out.channels.emplace_back(cp.blocks_y, cp.blocks_x);
    }
    return out;
}

ImageTensor rgb_to_ycbcr(const ImageTensor& rgb) {
    require_three_channels(rgb, "rgb_to_ycbcr");
    return apply_color(rgb, kRgbToYcc, {0, 0, 0}, kYccOffset, false);
}

ImageTensor ycbcr_to_rgb(const ImageTensor& ycc) {
    require_three_channels(ycc, "ycbcr_to_rgb");
    return apply_color(ycc, kYccToRgb, kYccOffset, {0, 0, 0}, false);
}

ImageTensor rgb_to_ycbcr_backward(const ImageTensor& grad_ycc) {
    require_three_channels(grad_ycc, "rgb_to_ycbcr_backward");
    return apply_color(grad_ycc, kRgbToYcc, {0, 0, 0}, {0, 0, 0}, true);
}

ImageTensor ycbcr_to_rgb_backward(const ImageTensor& grad_rgb) {
    require_three_channels(grad_rgb, "ycbcr_to_rgb_backward");
    return apply_color(grad_rgb, kYccToRgb, {0, 0, 0}, {0, 0, 0}, true);
}

Planes image_to_planes(const ImageTensor& image) {
    Planes out;
    for (int c = 0; c < image.channels; ++c) {
        out.push_back(channel_plane(image, c));
    }
    return out;
}

Planes subsample(const ImageTensor& ycc, SubsamplingMode mode) {
    require_three_channels(ycc, "subsample");
    const auto [fy, fx] = chroma_factors(mode);
    if (ycc.height % fy != 0 || ycc.width % fx != 0) {
        throw ArgumentError("subsample: " + std::to_string(ycc.height) + "x" + std::to_string(ycc.width) +
                            " not divisible by the subsampling factor");
    }
    Planes out;
    out.push_back(channel_plane(ycc, 0));
    const double inv = 1.0 / (fy * fx);
    for (int c = 1; c < 3; ++c) {
        Plane p(ycc.height / fy, ycc.width / fx);
        for (int y = 0; y < p.height; ++y) {
            for (int x = 0; x < p.width; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < fy; ++dy) {
                    for (int dx = 0; dx < fx; ++dx) {
                        acc += ycc.at(c, y * fy + dy, x * fx + dx);
                    }
                }
                p.at(y, x) = fy * fx == 1 ? acc : acc * inv;
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

ImageTensor upsample(const Planes& planes, SubsamplingMode mode) {
    if (planes.size() != 3) {
        throw ArgumentError("upsample: expected 3 planes");
    }
    const auto [fy, fx] = chroma_factors(mode);
    const Plane& luma = planes[0];
    ImageTensor out(3, luma.height, luma.width);
    std::copy(luma.data.begin(), luma.data.end(), out.data.begin());
    for (int c = 1; c < 3; ++c) {
        const Plane& p = planes[c];
        if (p.height * fy != luma.height || p.width * fx != luma.width) {
            throw ArgumentError("upsample: chroma plane size does not match the subsampling mode");
        }
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                out.at(c, y, x) = p.at(y / fy, x / fx);
            }
        }
    }
    return out;
}

ImageTensor subsample_backward(const Planes& grad, SubsamplingMode mode) {
    if (grad.size() != 3) {
        throw ArgumentError("subsample_backward: expected 3 planes");
    }
    const auto [fy, fx] = chroma_factors(mode);
    const double inv = 1.0 / (fy * fx);
    const Plane& luma = grad[0];
    ImageTensor out(3, luma.height, luma.width);
    std::copy(luma.data.begin(), luma.data.end(), out.data.begin());
    for (int c = 1; c < 3; ++c) {
        const Plane& g = grad[c];
        if (g.height * fy != luma.height || g.width * fx != luma.width) {
            throw ArgumentError("subsample_backward: chroma gradient size mismatch");
        }
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                out.at(c, y, x) = fy * fx == 1 ? g.at(y, x) : g.at(y / fy, x / fx) * inv;
            }
        }
    }
    return out;
}

Planes upsample_backward(const ImageTensor& grad, SubsamplingMode mode) {
    require_three_channels(grad, "upsample_backward");
    const auto [fy, fx] = chroma_factors(mode);
    if (grad.height % fy != 0 || grad.width % fx != 0) {
        throw ArgumentError("upsample_backward: dimensions not divisible by the subsampling factor");
    }
    Planes out;
    out.push_back(channel_plane(grad, 0));
    for (int c = 1; c < 3; ++c) {
        Plane p(grad.height / fy, grad.width / fx);
        for (int y = 0; y < p.height; ++y) {
            for (int x = 0; x < p.width; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < fy; ++dy) {
                    for (int dx = 0; dx < fx; ++dx) {
                        acc += grad.at(c, y * fy + dy, x * fx + dx);
                    }
                }
                p.at(y, x) = acc;
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::array<double, kBlockArea> dct_block(const std::array<double, kBlockArea>& pixels) {
    // Rows first (tmp = X B^T), then columns (Z = B tmp), fixed summation order.
    std::array<double, kBlockArea> tmp{};
    for (int y = 0; y < kBlockSize; ++y) {
        for (int v = 0; v < kBlockSize; ++v) {
            double acc = 0.0;
            for (int x = 0; x < kBlockSize; ++x) {
                acc += pixels[y * kBlockSize + x] * kBasis[v][x];
            }
            tmp[y * kBlockSize + v] = acc;
        }
    }
    std::array<double, kBlockArea> out{};
    for (int u = 0; u < kBlockSize; ++u) {
        for (int v = 0; v < kBlockSize; ++v) {
            double acc = 0.0;
            for (int y = 0; y < kBlockSize; ++y) {
                acc += kBasis[u][y] * tmp[y * kBlockSize + v];
            }
            out[u * kBlockSize + v] = acc;
        }
    }
    return out;
}

std::array<double, kBlockArea> idct_block(const std::array<double, kBlockArea>& coeffs) {
    std::array<double, kBlockArea> tmp{};
    for (int u = 0; u < kBlockSize; ++u) {
        for (int x = 0; x < kBlockSize; ++x) {
            double acc = 0.0;
            for (int v = 0; v < kBlockSize; ++v) {
                acc += coeffs[u * kBlockSize + v] * kBasis[v][x];
            }
            tmp[u * kBlockSize + x] = acc;
        }
    }
    std::array<double, kBlockArea> out{};
    for (int y = 0; y < kBlockSize; ++y) {
        for (int x = 0; x < kBlockSize; ++x) {
            double acc = 0.0;
            for (int u = 0; u < kBlockSize; ++u) {
                acc += kBasis[u][y] * tmp[u * kBlockSize + x];
            }
            out[y * kBlockSize + x] = acc;
        }
    }
    return out;
}

DctCoefficients forward_dct(const Planes& planes) { return blocks_forward(planes, kLevelShift); }

DctCoefficients forward_dct(const ImageTensor& image) { return forward_dct(image_to_planes(image)); }

Planes inverse_dct(const DctCoefficients& coeffs) { return blocks_inverse(coeffs, kLevelShift); }

Planes forward_dct_backward(const DctCoefficients& grad_z) { return blocks_inverse(grad_z, 0.0); }

DctCoefficients inverse_dct_backward(const Planes& grad_planes) { return blocks_forward(grad_planes, 0.0); }

DctCoefficients analyze(const ImageTensor& rgb, SubsamplingMode mode) {
    return forward_dct(subsample(rgb_to_ycbcr(rgb), mode));
}

ImageTensor synthesize(const DctCoefficients& coeffs, SubsamplingMode mode) {
    return ycbcr_to_rgb(upsample(inverse_dct(coeffs), mode));
}

ImageTensor pipeline_backward(const DctCoefficients& grad_z, const AnalysisContext& context) {
    if (grad_z.channels.size() != 3 || grad_z.channels[0].blocks_y * kBlockSize != context.height ||
        grad_z.channels[0].blocks_x * kBlockSize != context.width) {
        throw ArgumentError("pipeline_backward: gradient shape does not match the forward context");
    }
    return rgb_to_ycbcr_backward(subsample_backward(forward_dct_backward(grad_z), context.mode));
}

DctCoefficients synthesis_backward(const ImageTensor& grad_rgb, SubsamplingMode mode) {
    return inverse_dct_backward(upsample_backward(ycbcr_to_rgb_backward(grad_rgb), mode));
}

}  // namespace jdl
