#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jdl/classifier.hpp"
#include "jdl/layer.hpp"
#include "jdl/optim.hpp"
#include "jdl/qtable.hpp"
#include "jdl/tensor.hpp"

namespace jdl {

struct JpegOptimizerConfig {
    enum class Kind { Adam, Sgd };
    Kind kind = Kind::Adam;
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 1;
    int batch_size = 16;
    std::uint64_t seed = 0;
    SgdConfig model_optimizer{0.1, 0.9, 0.0};
    JpegOptimizerConfig jpeg_optimizer;
    bool train_alpha = false;
    // When set, alpha = hbar / q^2 is re-derived before every gradient computation.
    std::optional<double> gradient_scaling;
    QuantizerVariant variant = QuantizerVariant::Soft;
    SubsamplingMode mode = SubsamplingMode::S444;
    // Validation uses the 5-point CPMF.
    bool masked_inference = false;
    int quant_rounds = 1;
    // false trains the classifier on the raw images (no JPEG layer at all).
    bool use_jpeg_layer = true;

    void validate() const;
    LayerConfig layer_config(bool training) const;
};

struct MetricsRow {
    long step = 0;
    int epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    std::optional<double> val_acc;
};

// "step,epoch,loss,train_acc,val_acc" header plus one line per row; an absent
// val_acc is an empty field.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

// Everything one backward pass of the unified model produces for a batch.
struct GradBundle {
    double loss = 0.0;
    std::vector<std::vector<double>> logits;
    std::vector<ImageTensor> d_pixels;
    Table d_q_y{};
    Table d_q_c{};
    Table d_alpha_y{};
    Table d_alpha_c{};
    std::vector<double> d_theta;
};

// Mean cross-entropy of f_theta(J(x)) over the batch and all its gradients.
// Samples run in parallel and are reduced in index order.
GradBundle unified_forward_backward(std::span<const ImageTensor> images, std::span<const int> labels,
                                    const QuantTables& tables, const ClassifierParams& params,
                                    const LayerConfig& layer, bool use_jpeg_layer = true);

struct TrainResult {
    QuantTables tables;
    ClassifierParams params;
    std::vector<MetricsRow> log;
};

// Called after every optimizer step with the global step count and current tables.
using StepObserver = std::function<void(long step, const QuantTables& tables)>;

TrainResult train(const LabeledDataset& dataset, QuantTables tables, ClassifierParams params,
                  const TrainConfig& config, const LabeledDataset* validation = nullptr,
                  const StepObserver& observer = {});

// Top-1 accuracy of f_theta(J(x)).
double evaluate(const LabeledDataset& dataset, const QuantTables& tables, const ClassifierParams& params,
                const LayerConfig& layer, bool use_jpeg_layer = true);

enum class AttackMethod { Fgsm, Pgd };

struct AttackConfig {
    AttackMethod method = AttackMethod::Fgsm;
    // Budgets on the 0-255 pixel scale (1 means 1/255 after normalisation).
    std::vector<double> epsilons{1.0, 2.0, 3.0, 4.0};
    int steps = 5;
    // Overrides the default PGD step of 2.5 * eps / steps.
    std::optional<double> step_size;

    void validate() const;
    double step_for(double epsilon) const { return step_size ? *step_size : 2.5 * epsilon / steps; }
};

// Adversarial example for one sample; gradients flow through the JPEG layer
// using the full-support CPMF.
ImageTensor attack_sample(const ImageTensor& x, int label, const QuantTables& tables, const ClassifierParams& params,
                          const AttackConfig& attack, double epsilon, const LayerConfig& layer);

// Robust accuracy for each epsilon in attack.epsilons.
std::vector<double> adversarial_eval(const LabeledDataset& dataset, const QuantTables& tables,
                                     const ClassifierParams& params, const AttackConfig& attack,
                                     const LayerConfig& layer);

// Mean |dL/dz| per frequency and channel group with quantization bypassed.
Sensitivity estimate_sensitivity(const ClassifierParams& params, const LabeledDataset& dataset,
                                 SubsamplingMode mode = SubsamplingMode::S444);

// Magnitude init re-shaped by the reciprocal sensitivity of a trained classifier.
QuantTables init_sensitivity(const ClassifierParams& params, const LabeledDataset& dataset, int bits,
                             SubsamplingMode mode = SubsamplingMode::S444);

}  // namespace jdl
