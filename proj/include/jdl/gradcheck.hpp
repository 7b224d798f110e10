#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jdl/soft_quantizer.hpp"

namespace jdl {

// Worst agreement seen for one partial derivative.
struct PartialCheck {
    double max_rel = 0.0;
    long checked = 0;
    long failures = 0;
    std::string worst;  // configuration that produced max_rel
};

struct QuantizerCheck {
    PartialCheck d_z;
    PartialCheck d_q;
    PartialCheck d_alpha;
    bool passed() const { return d_z.failures + d_q.failures + d_alpha.failures == 0; }
};

// Analytic partials of Q_d against 4th-order central differences (h = 1e-4)
// at random z in [-Lq, Lq], q in [0.1, 10], alpha in [0.5, 20], L cycling
// through `levels`. A partial passes when |a - f| <= abs_tol + rel_tol max(|a|, |f|).
// The q step is capped so z / q moves at most 0.01 / max(1, 2 alpha q^2).
// Masked support keeps z / q away from window switches.
QuantizerCheck check_quantizer_gradients(int samples, std::uint64_t seed, const std::vector<int>& levels,
                                         Support support = Support::Full, double rel_tol = 1e-4,
                                         double abs_tol = 1e-8);

struct LayerCheck {
    PartialCheck d_q;
    PartialCheck d_pixel;
    bool passed() const { return d_q.failures + d_pixel.failures == 0; }
};

// End-to-end check of cross-entropy(Linear(J(x))) on random 3x8x8 images:
// dL/dq_m for all 128 table entries (step 1e-4 q_m) and dL/dpixel for all
// 192 pixels (step 1e-3), each against 4th-order central differences.
LayerCheck check_layer_gradients(int configs, std::uint64_t seed, double rel_tol = 1e-3, double abs_tol = 1e-9);

}  // namespace jdl
