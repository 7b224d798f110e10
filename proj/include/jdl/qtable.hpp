#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "jdl/pipeline.hpp"
#include "jdl/soft_quantizer.hpp"
#include "jdl/tensor.hpp"

namespace jdl {

inline constexpr double kQMin = 1e-4;
inline constexpr double kDefaultAlpha = 5.0;
inline constexpr int kDefaultBits = 8;

using Table = std::array<double, kBlockArea>;

// L = 2^(b-1).
int levels_for_bits(int bits);

// Trainable JPEG-layer parameters. Tables are zigzag-indexed; Cb and Cr share
// the chroma tables.
struct QuantTables {
    Table q_y{};
    Table q_c{};
    Table alpha_y{};
    Table alpha_c{};
    int bits = kDefaultBits;
    int levels = 128;
    std::optional<double> hbar;

    // Throws ValidationError if any q < kQMin, any alpha <= 0, or levels < 1.
    void validate() const;
    // Floors every q entry at kQMin.
    void clamp_q();

    // Channel 0 is luma; 1 and 2 use the chroma tables.
    QuantizerParams params(int channel, int m) const {
        return channel == 0 ? QuantizerParams{q_y[m], alpha_y[m], levels}
                            : QuantizerParams{q_c[m], alpha_c[m], levels};
    }

    friend bool operator==(const QuantTables&, const QuantTables&) = default;
};

enum class MagnitudeDenominator {
    HalfRange,  // sqrt(2^(b-1))
    FullRange,  // sqrt(2^b - 1)
};

// Luma: q_m = 2 sum|z_Y| / (N B d); chroma: q_m = sum over Cb,Cr of |z| / (N B d)
// with d the chosen denominator. Floored at kQMin; alpha filled with `alpha`.
QuantTables init_magnitude(const LabeledDataset& dataset, int bits, SubsamplingMode mode = SubsamplingMode::S444,
                           MagnitudeDenominator denominator = MagnitudeDenominator::HalfRange,
                           double alpha = kDefaultAlpha);

QuantTables init_ones(int bits = kDefaultBits, double alpha = kDefaultAlpha);

// Mean |dL/dz| per zigzag frequency for each channel group.
struct Sensitivity {
    Table luma{};
    Table chroma{};
};

// q_m = c / s_m per group, with c set so the median of c / s over the
// positive-sensitivity entries equals the median of the magnitude table.
// Entries with s_m = 0 keep the magnitude value.
QuantTables init_from_sensitivity(const Sensitivity& sensitivity, const QuantTables& magnitude);

// alpha_m = hbar / q_m^2 for every entry. Throws ArgumentError without hbar.
QuantTables apply_gradient_scaling(const QuantTables& tables);

std::string tables_to_json(const QuantTables& tables);
// Errors name the offending field and its line.
QuantTables tables_from_json(const std::string& text);
void save_tables(const QuantTables& tables, const std::filesystem::path& path);
QuantTables load_tables(const std::filesystem::path& path);

}  // namespace jdl
