#include "jdl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "jdl/error.hpp"
#include "jdl/parallel.hpp"

namespace jdl {

namespace {

// Floor for alpha entries when alpha is trained directly.
constexpr double kAlphaMin = 1e-8;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(base ^ splitmix64(a)) ^ b);
}

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

void add_into(Table& acc, const Table& t) {
    for (int m = 0; m < kBlockArea; ++m) {
        acc[m] += t[m];
    }
}

// Order-independent mean of a set of terms.
double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    return std::accumulate(terms.begin(), terms.end(), 0.0);
}

class JpegStepper {
public:
    JpegStepper(const JpegOptimizerConfig& cfg, std::size_t size) : kind_(cfg.kind) {
        if (!(cfg.lr >= 0.0)) {
            throw ArgumentError("JPEG learning rate must be >= 0");
        }
        if (kind_ == JpegOptimizerConfig::Kind::Adam) {
            adam_.emplace(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps}, size);
        } else {
            sgd_.emplace(SgdConfig{cfg.lr, 0.0, 0.0}, size);
        }
    }

    void step(std::span<double> params, std::span<const double> grads) {
        if (adam_) {
            adam_->step(params, grads);
        } else {
            sgd_->step(params, grads);
        }
    }

private:
    JpegOptimizerConfig::Kind kind_;
    std::optional<Adam> adam_;
    std::optional<Sgd> sgd_;
};

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) {
        throw ArgumentError("epochs must be >= 0");
    }
    if (batch_size < 1) {
        throw ArgumentError("batch_size must be >= 1");
    }
    if (!(model_optimizer.lr > 0.0)) {
        throw ArgumentError("model learning rate must be > 0");
    }
    if (!(jpeg_optimizer.lr >= 0.0)) {
        throw ArgumentError("JPEG learning rate must be >= 0");
    }
    if (gradient_scaling && !(*gradient_scaling > 0.0)) {
        throw ArgumentError("gradient scaling constant must be > 0");
    }
    if (quant_rounds < 1) {
        throw ArgumentError("quant_rounds must be >= 1");
    }
}

LayerConfig TrainConfig::layer_config(bool training) const {
    LayerConfig l;
    l.variant = variant;
    l.mode = mode;
    l.support = (!training && masked_inference) ? Support::Masked : Support::Full;
    l.training = training;
    l.rounds = quant_rounds;
    l.seed = seed;
    return l;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    out << "step,epoch,loss,train_acc,val_acc\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%ld,%d,%.17g,%.17g,", r.step, r.epoch, r.loss, r.train_acc);
        out << buf;
        if (r.val_acc) {
            std::snprintf(buf, sizeof(buf), "%.17g", *r.val_acc);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

GradBundle unified_forward_backward(std::span<const ImageTensor> images, std::span<const int> labels,
                                    const QuantTables& tables, const ClassifierParams& params,
                                    const LayerConfig& layer, bool use_jpeg_layer) {
    if (images.empty() || images.size() != labels.size()) {
        throw ArgumentError("batch needs equally many (non-zero) images and labels");
    }
    const std::size_t count = images.size();
    const double inv = 1.0 / static_cast<double>(count);

    struct Slot {
        SampleGrad sample;
        JpegGrad jpeg;
    };
    std::vector<Slot> slots(count);
    parallel_for(count, [&](std::size_t i) {
        Slot& s = slots[i];
        if (use_jpeg_layer) {
            LayerConfig cfg = layer;
            cfg.seed = derive_seed(layer.seed, i, 0);
            LayerOutput fwd = jpeg_layer_forward(images[i], tables, cfg);
            s.sample = classifier_sample_backward(fwd.reconstruction, labels[i], params);
            for (double& v : s.sample.d_input.data) {
                v *= inv;
            }
            s.jpeg = jpeg_layer_backward(s.sample.d_input, fwd.context);
        } else {
            s.sample = classifier_sample_backward(images[i], labels[i], params);
            for (double& v : s.sample.d_input.data) {
                v *= inv;
            }
            s.jpeg.d_pixels = s.sample.d_input;
        }
    });

    GradBundle out;
    out.d_theta.assign(params.values.size(), 0.0);
    for (auto& s : slots) {
        out.loss += s.sample.loss;
        for (std::size_t j = 0; j < out.d_theta.size(); ++j) {
            out.d_theta[j] += s.sample.d_theta[j];
        }
        add_into(out.d_q_y, s.jpeg.d_q_y);
        add_into(out.d_q_c, s.jpeg.d_q_c);
        add_into(out.d_alpha_y, s.jpeg.d_alpha_y);
        add_into(out.d_alpha_c, s.jpeg.d_alpha_c);
        out.logits.push_back(std::move(s.sample.logits));
        out.d_pixels.push_back(std::move(s.jpeg.d_pixels));
    }
    out.loss *= inv;
    for (double& v : out.d_theta) {
        v *= inv;
    }
    return out;
}

TrainResult train(const LabeledDataset& dataset, QuantTables tables, ClassifierParams params,
                  const TrainConfig& config, const LabeledDataset* validation, const StepObserver& observer) {
    config.validate();
    params.validate();
    tables.validate();
    if (dataset.images.empty()) {
        throw ArgumentError("train: empty dataset");
    }
    if (config.gradient_scaling) {
        tables.hbar = config.gradient_scaling;
        tables = apply_gradient_scaling(tables);
    }
    const bool alpha_trainable = config.train_alpha && !config.gradient_scaling;
    const std::size_t jpeg_size = alpha_trainable ? 4 * kBlockArea : 2 * kBlockArea;

    Sgd model_opt(config.model_optimizer, params.values.size());
    JpegStepper jpeg_opt(config.jpeg_optimizer, jpeg_size);
    std::mt19937_64 shuffle_rng(config.seed);

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    long step = 0;
    std::vector<double> flat(jpeg_size);
    std::vector<double> flat_grad(jpeg_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        long batches = 0;
        long correct = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<ImageTensor> xs;
            std::vector<int> ys;
            for (std::size_t k = start; k < stop; ++k) {
                xs.push_back(dataset.images[order[k]]);
                ys.push_back(dataset.labels[order[k]]);
            }
            if (config.gradient_scaling) {
                tables = apply_gradient_scaling(tables);
            }
            LayerConfig layer = config.layer_config(true);
            layer.seed = derive_seed(config.seed, static_cast<std::uint64_t>(step), 1);
            const GradBundle g = unified_forward_backward(xs, ys, tables, params, layer, config.use_jpeg_layer);

            model_opt.step(params.values, g.d_theta);
            if (config.use_jpeg_layer) {
                std::copy(tables.q_y.begin(), tables.q_y.end(), flat.begin());
                std::copy(tables.q_c.begin(), tables.q_c.end(), flat.begin() + kBlockArea);
                std::copy(g.d_q_y.begin(), g.d_q_y.end(), flat_grad.begin());
                std::copy(g.d_q_c.begin(), g.d_q_c.end(), flat_grad.begin() + kBlockArea);
                if (alpha_trainable) {
                    std::copy(tables.alpha_y.begin(), tables.alpha_y.end(), flat.begin() + 2 * kBlockArea);
                    std::copy(tables.alpha_c.begin(), tables.alpha_c.end(), flat.begin() + 3 * kBlockArea);
                    std::copy(g.d_alpha_y.begin(), g.d_alpha_y.end(), flat_grad.begin() + 2 * kBlockArea);
                    std::copy(g.d_alpha_c.begin(), g.d_alpha_c.end(), flat_grad.begin() + 3 * kBlockArea);
                }
                jpeg_opt.step(flat, flat_grad);
                std::copy_n(flat.begin(), kBlockArea, tables.q_y.begin());
                std::copy_n(flat.begin() + kBlockArea, kBlockArea, tables.q_c.begin());
                if (alpha_trainable) {
                    for (int m = 0; m < kBlockArea; ++m) {
                        tables.alpha_y[m] = std::max(flat[2 * kBlockArea + m], kAlphaMin);
                        tables.alpha_c[m] = std::max(flat[3 * kBlockArea + m], kAlphaMin);
                    }
                }
                tables.clamp_q();
                if (config.gradient_scaling) {
                    tables = apply_gradient_scaling(tables);
                }
            }
            ++step;
            if (observer) {
                observer(step, tables);
            }
            loss_sum += g.loss;
            ++batches;
            for (std::size_t k = 0; k < ys.size(); ++k) {
                correct += argmax(g.logits[k]) == ys[k] ? 1 : 0;
            }
        }
        MetricsRow row;
        row.step = step;
        row.epoch = epoch;
        row.loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
        row.train_acc = static_cast<double>(correct) / static_cast<double>(dataset.size());
        if (validation != nullptr) {
            row.val_acc = evaluate(*validation, tables, params, config.layer_config(false), config.use_jpeg_layer);
        }
        result.log.push_back(row);
    }
    result.tables = std::move(tables);
    result.params = std::move(params);
    return result;
}

double evaluate(const LabeledDataset& dataset, const QuantTables& tables, const ClassifierParams& params,
                const LayerConfig& layer, bool use_jpeg_layer) {
    if (dataset.images.empty()) {
        return 0.0;
    }
    std::vector<int> hits(dataset.size(), 0);
    parallel_for(dataset.size(), [&](std::size_t i) {
        const ImageTensor& x = dataset.images[i];
        const int pred = use_jpeg_layer ? predict(jpeg_layer_apply(x, tables, layer), params) : predict(x, params);
        hits[i] = pred == dataset.labels[i] ? 1 : 0;
    });
    const long correct = std::accumulate(hits.begin(), hits.end(), 0L);
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

void AttackConfig::validate() const {
    if (steps < 1) {
        throw ArgumentError("attack steps must be >= 1");
    }
    for (double e : epsilons) {
        if (!(e >= 0.0)) {
            throw ArgumentError("attack epsilon must be >= 0");
        }
    }
    if (step_size && !(*step_size >= 0.0)) {
        throw ArgumentError("attack step size must be >= 0");
    }
}

ImageTensor attack_sample(const ImageTensor& x, int label, const QuantTables& tables, const ClassifierParams& params,
                          const AttackConfig& attack, double epsilon, const LayerConfig& layer) {
    LayerConfig grad_layer = layer;
    grad_layer.support = Support::Full;
    const std::array<int, 1> y{label};
    auto input_grad = [&](const ImageTensor& cur) {
        return unified_forward_backward(std::span<const ImageTensor>(&cur, 1), y, tables, params, grad_layer)
            .d_pixels.front();
    };
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };

    ImageTensor adv = x;
    const int iterations = attack.method == AttackMethod::Fgsm ? 1 : attack.steps;
    const double step = attack.method == AttackMethod::Fgsm ? epsilon : attack.step_for(epsilon);
    for (int it = 0; it < iterations; ++it) {
        const ImageTensor g = input_grad(adv);
        for (std::size_t i = 0; i < adv.data.size(); ++i) {
            const double moved = adv.data[i] + step * sign(g.data[i]);
            const double projected = std::clamp(moved, x.data[i] - epsilon, x.data[i] + epsilon);
            adv.data[i] = std::clamp(projected, 0.0, 255.0);
        }
    }
    return adv;
}

std::vector<double> adversarial_eval(const LabeledDataset& dataset, const QuantTables& tables,
                                     const ClassifierParams& params, const AttackConfig& attack,
                                     const LayerConfig& layer) {
    attack.validate();
    std::vector<double> out;
    for (double eps : attack.epsilons) {
        std::vector<int> hits(dataset.size(), 0);
        parallel_for(dataset.size(), [&](std::size_t i) {
            const ImageTensor adv =
                attack_sample(dataset.images[i], dataset.labels[i], tables, params, attack, eps, layer);
            hits[i] = predict(jpeg_layer_apply(adv, tables, layer), params) == dataset.labels[i] ? 1 : 0;
        });
        out.push_back(static_cast<double>(std::accumulate(hits.begin(), hits.end(), 0L)) /
                      static_cast<double>(dataset.size()));
    }
    return out;
}

Sensitivity estimate_sensitivity(const ClassifierParams& params, const LabeledDataset& dataset,
                                 SubsamplingMode mode) {
    if (dataset.images.empty()) {
        throw ArgumentError("estimate_sensitivity: empty dataset");
    }
    struct Slot {
        Table luma{};
        Table chroma{};
        int luma_blocks = 0;
        int chroma_blocks = 0;
    };
    std::vector<Slot> slots(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        const DctCoefficients z = analyze(dataset.images[i], mode);
        const ImageTensor xhat = synthesize(z, mode);
        const SampleGrad g = classifier_sample_backward(xhat, dataset.labels[i], params);
        const DctCoefficients dz = synthesis_backward(g.d_input, mode);
        Slot& s = slots[i];
        s.luma_blocks = dz.channels[0].block_count();
        s.chroma_blocks = dz.channels[1].block_count();
        for (int m = 0; m < kBlockArea; ++m) {
            for (int n = 0; n < s.luma_blocks; ++n) {
                s.luma[m] += std::abs(dz.channels[0].at(m, n));
            }
            for (int l = 1; l < 3; ++l) {
                for (int n = 0; n < s.chroma_blocks; ++n) {
                    s.chroma[m] += std::abs(dz.channels[l].at(m, n));
                }
            }
        }
    });
    Sensitivity out;
    const double n = static_cast<double>(dataset.size());
    for (int m = 0; m < kBlockArea; ++m) {
        std::vector<double> ly, lc;
        for (const auto& s : slots) {
            ly.push_back(s.luma[m]);
            lc.push_back(s.chroma[m]);
        }
        out.luma[m] = sorted_sum(ly) / (n * slots.front().luma_blocks);
        out.chroma[m] = sorted_sum(lc) / (n * 2.0 * slots.front().chroma_blocks);
    }
    return out;
}

QuantTables init_sensitivity(const ClassifierParams& params, const LabeledDataset& dataset, int bits,
                             SubsamplingMode mode) {
    params.validate();
    const QuantTables magnitude = init_magnitude(dataset, bits, mode);
    return init_from_sensitivity(estimate_sensitivity(params, dataset, mode), magnitude);
}

}  // namespace jdl
