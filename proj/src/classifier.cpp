#include "jdl/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "jdl/error.hpp"

namespace jdl {

namespace {

constexpr double kPixelScale = 1.0 / 255.0;

struct Forward {
    std::vector<double> input;   // normalised pixels
    std::vector<double> hidden;  // post-ReLU activations (OneHiddenRelu only)
    std::vector<double> logits;
};

Forward run_forward(const ImageTensor& x, const ClassifierParams& p) {
    if (static_cast<int>(x.size()) != p.input_dim) {
        throw ArgumentError("classifier input has " + std::to_string(x.size()) + " values, expected " +
                            std::to_string(p.input_dim));
    }
    Forward f;
    f.input.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        f.input[i] = x.data[i] * kPixelScale;
    }
    const int D = p.input_dim;
    const int K = p.num_classes;
    const double* w = p.values.data();
    auto affine = [](const double* W, const double* b, const std::vector<double>& in, int rows) {
        std::vector<double> out(static_cast<std::size_t>(rows));
        const std::size_t cols = in.size();
        for (int r = 0; r < rows; ++r) {
            double acc = b[r];
            const double* row = W + static_cast<std::size_t>(r) * cols;
            for (std::size_t c = 0; c < cols; ++c) {
                acc += row[c] * in[c];
            }
            out[r] = acc;
        }
        return out;
    };
    if (p.architecture == Architecture::Linear) {
        f.logits = affine(w, w + static_cast<std::size_t>(K) * D, f.input, K);
    } else {
        const int H = p.hidden;
        const double* w1 = w;
        const double* b1 = w1 + static_cast<std::size_t>(H) * D;
        const double* w2 = b1 + H;
        const double* b2 = w2 + static_cast<std::size_t>(K) * H;
        f.hidden = affine(w1, b1, f.input, H);
        for (double& h : f.hidden) {
            h = std::max(h, 0.0);
        }
        f.logits = affine(w2, b2, f.hidden, K);
    }
    return f;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - mx);
        total += p[k];
    }
    for (double& v : p) {
        v /= total;
    }
    return p;
}

std::string number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

ClassifierParams ClassifierParams::create(Architecture architecture, int input_dim, int num_classes, int hidden,
                                          std::uint64_t seed) {
    ClassifierParams p;
    p.architecture = architecture;
    p.input_dim = input_dim;
    p.num_classes = num_classes;
    p.hidden = architecture == Architecture::OneHiddenRelu ? hidden : 0;
    if (input_dim < 1 || num_classes < 2 || (architecture == Architecture::OneHiddenRelu && hidden < 1)) {
        throw ArgumentError("classifier needs input_dim >= 1, num_classes >= 2 and hidden >= 1 when used");
    }
    p.values.assign(p.expected_size(), 0.0);
    if (architecture == Architecture::OneHiddenRelu) {
        std::mt19937_64 rng(seed);
        const std::size_t H = static_cast<std::size_t>(p.hidden);
        const std::size_t D = static_cast<std::size_t>(input_dim);
        const std::size_t K = static_cast<std::size_t>(num_classes);
        std::uniform_real_distribution<double> w1(-1.0 / std::sqrt(double(D)), 1.0 / std::sqrt(double(D)));
        std::uniform_real_distribution<double> w2(-1.0 / std::sqrt(double(H)), 1.0 / std::sqrt(double(H)));
        for (std::size_t i = 0; i < H * D; ++i) {
            p.values[i] = w1(rng);
        }
        const std::size_t w2_off = H * D + H;
        for (std::size_t i = 0; i < K * H; ++i) {
            p.values[w2_off + i] = w2(rng);
        }
    }
    return p;
}

std::size_t ClassifierParams::expected_size() const {
    const std::size_t D = static_cast<std::size_t>(input_dim);
    const std::size_t K = static_cast<std::size_t>(num_classes);
    if (architecture == Architecture::Linear) {
        return K * D + K;
    }
    const std::size_t H = static_cast<std::size_t>(hidden);
    return H * D + H + K * H + K;
}

void ClassifierParams::validate() const {
    if (input_dim < 1 || num_classes < 2 || (architecture == Architecture::OneHiddenRelu && hidden < 1)) {
        throw ValidationError("classifier shape is inconsistent");
    }
    if (values.size() != expected_size()) {
        throw ValidationError("classifier has " + std::to_string(values.size()) + " parameters, expected " +
                              std::to_string(expected_size()));
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw ValidationError("classifier parameter is not finite");
        }
    }
}

std::vector<double> classifier_logits(const ImageTensor& x, const ClassifierParams& params) {
    return run_forward(x, params).logits;
}

int predict(const ImageTensor& x, const ClassifierParams& params) {
    const auto logits = classifier_logits(x, params);
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

SampleGrad classifier_sample_backward(const ImageTensor& x, int label, const ClassifierParams& p) {
    if (label < 0 || label >= p.num_classes) {
        throw ArgumentError("label " + std::to_string(label) + " outside [0, " + std::to_string(p.num_classes) + ")");
    }
    const Forward f = run_forward(x, p);
    const auto prob = softmax(f.logits);
    SampleGrad g;
    g.logits = f.logits;
    {
        // log-sum-exp stays finite when prob[label] underflows
        const double mx = *std::max_element(f.logits.begin(), f.logits.end());
        double total = 0.0;
        for (double l : f.logits) {
            total += std::exp(l - mx);
        }
        g.loss = mx + std::log(total) - f.logits[label];
    }
    std::vector<double> d_logits = prob;
    d_logits[label] -= 1.0;

    const std::size_t D = static_cast<std::size_t>(p.input_dim);
    const std::size_t K = static_cast<std::size_t>(p.num_classes);
    g.d_theta.assign(p.values.size(), 0.0);
    std::vector<double> d_in(D, 0.0);
    if (p.architecture == Architecture::Linear) {
        for (std::size_t k = 0; k < K; ++k) {
            const double dk = d_logits[k];
            double* gw = g.d_theta.data() + k * D;
            const double* w = p.values.data() + k * D;
            for (std::size_t i = 0; i < D; ++i) {
                gw[i] = dk * f.input[i];
                d_in[i] += dk * w[i];
            }
            g.d_theta[K * D + k] = dk;
        }
    } else {
        const std::size_t H = static_cast<std::size_t>(p.hidden);
        const std::size_t b1 = H * D;
        const std::size_t w2 = b1 + H;
        const std::size_t b2 = w2 + K * H;
        std::vector<double> d_hidden(H, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            const double dk = d_logits[k];
            for (std::size_t h = 0; h < H; ++h) {
                g.d_theta[w2 + k * H + h] = dk * f.hidden[h];
                d_hidden[h] += dk * p.values[w2 + k * H + h];
            }
            g.d_theta[b2 + k] = dk;
        }
        for (std::size_t h = 0; h < H; ++h) {
            const double dh = f.hidden[h] > 0.0 ? d_hidden[h] : 0.0;
            if (dh == 0.0) {
                continue;
            }
            const double* w = p.values.data() + h * D;
            double* gw = g.d_theta.data() + h * D;
            for (std::size_t i = 0; i < D; ++i) {
                gw[i] = dh * f.input[i];
                d_in[i] += dh * w[i];
            }
            g.d_theta[b1 + h] = dh;
        }
    }
    g.d_input = ImageTensor(x.channels, x.height, x.width);
    for (std::size_t i = 0; i < D; ++i) {
        g.d_input.data[i] = d_in[i] * kPixelScale;
    }
    return g;
}

ClassifierBatchResult classifier_forward_backward(std::span<const ImageTensor> inputs, std::span<const int> labels,
                                                  const ClassifierParams& params) {
    if (inputs.size() != labels.size() || inputs.empty()) {
        throw ArgumentError("classifier batch: inputs and labels must be non-empty and equally long");
    }
    const double inv = 1.0 / static_cast<double>(inputs.size());
    ClassifierBatchResult out;
    out.d_theta.assign(params.values.size(), 0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        SampleGrad g = classifier_sample_backward(inputs[i], labels[i], params);
        out.loss += g.loss;
        for (std::size_t j = 0; j < g.d_theta.size(); ++j) {
            out.d_theta[j] += g.d_theta[j];
        }
        for (double& v : g.d_input.data) {
            v *= inv;
        }
        out.logits.push_back(std::move(g.logits));
        out.d_inputs.push_back(std::move(g.d_input));
    }
    out.loss *= inv;
    for (double& v : out.d_theta) {
        v *= inv;
    }
    return out;
}

std::string architecture_name(Architecture a) { return a == Architecture::Linear ? "linear" : "mlp"; }

Architecture parse_architecture(const std::string& name) {
    if (name == "linear") {
        return Architecture::Linear;
    }
    if (name == "mlp") {
        return Architecture::OneHiddenRelu;
    }
    throw ArgumentError("unknown architecture '" + name + "' (expected linear or mlp)");
}

std::string classifier_to_json(const ClassifierParams& p) {
    std::ostringstream out;
    out << "{\n  \"version\": 1,\n  \"architecture\": \"" << architecture_name(p.architecture) << "\",\n";
    out << "  \"input_dim\": " << p.input_dim << ",\n  \"hidden\": " << p.hidden << ",\n";
    out << "  \"num_classes\": " << p.num_classes << ",\n  \"values\": [";
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        out << (i == 0 ? "" : ", ") << number(p.values[i]);
    }
    out << "]\n}\n";
    return out.str();
}

ClassifierParams classifier_from_json(const std::string& text) {
    ClassifierParams p;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("version").get<int>() != 1) {
            throw FormatError("model: unsupported version");
        }
        p.architecture = parse_architecture(j.at("architecture").get<std::string>());
        p.input_dim = j.at("input_dim").get<int>();
        p.hidden = j.at("hidden").get<int>();
        p.num_classes = j.at("num_classes").get<int>();
        p.values = j.at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model: ") + e.what());
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("model: ") + e.what());
    }
    p.validate();
    return p;
}

void save_classifier(const ClassifierParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << classifier_to_json(params);
}

ClassifierParams load_classifier(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return classifier_from_json(buf.str());
}

}  // namespace jdl
