#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace jdl {

// Step size q, softness alpha and alphabet half-width L; the reconstruction
// alphabet is q * {-L, ..., L}.
struct QuantizerParams {
    double q = 1.0;
    double alpha = 5.0;
    int levels = 128;

    // Throws ArgumentError unless q > 0, alpha > 0 (both finite) and levels >= 1.
    void validate() const;
    // alpha * q^2, the quantity the CPMF actually depends on in index space.
    double hardness() const { return alpha * q * q; }
};

enum class Support { Full, Masked };

// Number of reconstruction levels kept by the masked CPMF.
inline constexpr int kMaskedWidth = 5;

// P_alpha(i q | z) over the contiguous index range
// [first_index, first_index + probabilities.size()).
struct Cpmf {
    Support support = Support::Full;
    int first_index = 0;
    // round(z / q) clamped to the alphabet; the masked window is centred here.
    int center_index = 0;
    std::vector<double> probabilities;

    int last_index() const { return first_index + static_cast<int>(probabilities.size()) - 1; }
    double probability(int index) const;
};

// Partial derivatives of the soft quantizer output at one coefficient.
struct QuantGrad {
    double d_z = 0.0;
    double d_q = 0.0;
    double d_alpha = 0.0;
};

// Moments of the probabilistic quantizer output Q_p(z) under the CPMF.
struct SoftStats {
    double mean = 0.0;           // E{Q_p} = Q_d(z)
    double variance = 0.0;       // Var{Q_p}
    double third_central = 0.0;  // E{(Q_p - E Q_p)^3}
};

double round_half_away(double x);

// Stable softmax of -alpha (z - i q)^2. Full support is the whole alphabet;
// masked support is the 5 indices around round(z / q), clipped to [-L, L].
Cpmf cpmf(double z, const QuantizerParams& p, Support support = Support::Full);

SoftStats soft_stats(double z, const QuantizerParams& p, Support support = Support::Full);

// Q_d(z) = sum_i P(i q | z) i q.
double quantize_soft(double z, const QuantizerParams& p, Support support = Support::Full);

// round(z / q) q, ties away from zero, clamped to [-L q, L q].
double quantize_uniform(double z, const QuantizerParams& p);

// Draws one level from the CPMF.
double quantize_stochastic(double z, const QuantizerParams& p, std::mt19937_64& rng,
                           Support support = Support::Full);

// d_z = 2 alpha Var, d_q = (E + 2 alpha z Var - 2 alpha Skew_u) / q,
// d_alpha = -Cov(Q_p, (z - Q_p)^2), all over the same support as the forward.
QuantGrad quantize_grad(double z, const QuantizerParams& p, Support support = Support::Full);

// Q_d together with its partials, sharing one pass over the CPMF.
struct SoftResult {
    double value = 0.0;
    QuantGrad grad;
};
SoftResult quantize_soft_with_grad(double z, const QuantizerParams& p, Support support = Support::Full);

enum class QuantizerVariant { Soft, Uniform, StraightThrough, AdditiveNoise, PolynomialRounding };

struct VariantOutput {
    double value = 0.0;
    // Local partials multiplied by the upstream gradient.
    QuantGrad grad;
};

// Forward value and upstream-scaled partials for one coefficient.
//   Soft:               Q_d with analytic partials.
//   Uniform:            Q_u; d_z = 0, d_q = clamped round(z/q).
//   StraightThrough:    Q_u forward; d_z = 1 inside the alphabet range, else 0;
//                       d_q = round(z/q) - z/q inside, +-L when clamped.
//   AdditiveNoise:      training: z + q u, u ~ U(-0.5, 0.5), d_z = 1, d_q = u;
//                       otherwise behaves as Uniform.
//   PolynomialRounding: q (round(r) + (r - round(r))^3) with r = z / q.
VariantOutput quantize_variant_forward_backward(double z, const QuantizerParams& p, QuantizerVariant variant,
                                                std::mt19937_64& rng, double upstream = 1.0,
                                                bool training = true, Support support = Support::Full);

// Seed of the per-coefficient stream for stochastic quantizers.
inline std::uint64_t coefficient_seed(std::uint64_t base_seed, std::uint64_t linear_index) {
    return base_seed ^ linear_index;
}

const char* to_string(QuantizerVariant variant);
QuantizerVariant parse_variant(const std::string& name);

}  // namespace jdl
