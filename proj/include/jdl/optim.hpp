#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace jdl {

struct SgdConfig {
    double lr = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

// p -= lr * buf, buf = momentum * buf + (g + weight_decay * p).
class Sgd {
public:
    Sgd(SgdConfig config, std::size_t size);
    void step(std::span<double> params, std::span<const double> grads);
    const SgdConfig& config() const { return config_; }

private:
    SgdConfig config_;
    std::vector<double> buffer_;
};

struct AdamConfig {
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam.
class Adam {
public:
    Adam(AdamConfig config, std::size_t size);
    void step(std::span<double> params, std::span<const double> grads);
    long steps() const { return t_; }

private:
    AdamConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    long t_ = 0;
};

}  // namespace jdl
