#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "jdl/tensor.hpp"

namespace jdl {

enum class Architecture { Linear, OneHiddenRelu };

// Flat parameter vector. Linear: W[K x D], b[K].
// OneHiddenRelu: W1[H x D], b1[H], W2[K x H], b2[K].
struct ClassifierParams {
    Architecture architecture = Architecture::Linear;
    int input_dim = 0;
    int hidden = 0;
    int num_classes = 0;
    std::vector<double> values;

    // Zero-initialised Linear weights; OneHiddenRelu gets seeded uniform
    // fan-in scaled weights (zero weights would leave the hidden layer dead).
    static ClassifierParams create(Architecture architecture, int input_dim, int num_classes, int hidden = 0,
                                   std::uint64_t seed = 0);

    std::size_t expected_size() const;
    void validate() const;

    friend bool operator==(const ClassifierParams&, const ClassifierParams&) = default;
};

// Logits for one image; pixels are divided by 255 first.
std::vector<double> classifier_logits(const ImageTensor& x, const ClassifierParams& params);
int predict(const ImageTensor& x, const ClassifierParams& params);

// Softmax cross-entropy of one sample with unreduced gradients.
struct SampleGrad {
    double loss = 0.0;
    std::vector<double> logits;
    ImageTensor d_input;
    std::vector<double> d_theta;
};
SampleGrad classifier_sample_backward(const ImageTensor& x, int label, const ClassifierParams& params);

struct ClassifierBatchResult {
    double loss = 0.0;  // mean over the batch
    std::vector<std::vector<double>> logits;
    std::vector<ImageTensor> d_inputs;  // gradients of the mean loss
    std::vector<double> d_theta;
};
ClassifierBatchResult classifier_forward_backward(std::span<const ImageTensor> inputs, std::span<const int> labels,
                                                  const ClassifierParams& params);

std::string architecture_name(Architecture a);
Architecture parse_architecture(const std::string& name);

std::string classifier_to_json(const ClassifierParams& params);
ClassifierParams classifier_from_json(const std::string& text);
void save_classifier(const ClassifierParams& params, const std::filesystem::path& path);
ClassifierParams load_classifier(const std::filesystem::path& path);

}  // namespace jdl
