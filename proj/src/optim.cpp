#include "jdl/optim.hpp"

#include <cmath>

#include "jdl/error.hpp"

namespace jdl {

namespace {

void check_sizes(std::size_t state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != state || grads.size() != state) {
        throw ArgumentError("optimizer: parameter/gradient size mismatch");
    }
}

}  // namespace

Sgd::Sgd(SgdConfig config, std::size_t size) : config_(config), buffer_(size, 0.0) {
    if (config.lr < 0.0 || config.momentum < 0.0 || config.weight_decay < 0.0) {
        throw ArgumentError("SGD hyperparameters must be non-negative");
    }
}

void Sgd::step(std::span<double> params, std::span<const double> grads) {
    check_sizes(buffer_.size(), params, grads);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + config_.weight_decay * params[i];
        buffer_[i] = config_.momentum * buffer_[i] + g;
        params[i] -= config_.lr * buffer_[i];
    }
}

Adam::Adam(AdamConfig config, std::size_t size) : config_(config), m_(size, 0.0), v_(size, 0.0) {
    if (config.lr < 0.0 || config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 || config.beta2 >= 1.0 ||
        config.eps <= 0.0) {
        throw ArgumentError("invalid Adam hyperparameters");
    }
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    check_sizes(m_.size(), params, grads);
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i] * grads[i];
        const double m_hat = m_[i] / c1;
        const double v_hat = v_[i] / c2;
        params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
}

}  // namespace jdl
