// jdl: command-line front end for the differentiable JPEG layer.
// Exit codes: 0 success, 1 validation/argument failure, 2 I/O or format error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jdl/classifier.hpp"
#include "jdl/error.hpp"
#include "jdl/gradcheck.hpp"
#include "jdl/qtable.hpp"
#include "jdl/soft_quantizer.hpp"
#include "jdl/tensor.hpp"
#include "jdl/trainer.hpp"

namespace fs = std::filesystem;
using namespace jdl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitIo = 2;

const std::map<std::string, SubsamplingMode> kModes = {
    {"444", SubsamplingMode::S444}, {"422", SubsamplingMode::S422}, {"420", SubsamplingMode::S420}};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string short_fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw FormatError("cannot write " + path.string());
    }
}

// A model argument may name model.json itself or the directory holding it.
fs::path model_file(const fs::path& p) { return fs::is_directory(p) ? p / "model.json" : p; }

struct GradcheckArgs {
    int samples = 1000;
    std::uint64_t seed = 0;
    std::vector<int> levels{3, 8, 128};
    bool masked = false;
    int layer_configs = 5;
};

int run_gradcheck(const GradcheckArgs& a) {
    const QuantizerCheck q =
        check_quantizer_gradients(a.samples, a.seed, a.levels, a.masked ? Support::Masked : Support::Full);
    bool ok = true;
    auto report = [&](const char* name, const PartialCheck& c, double tol) {
        const bool pass = c.failures == 0;
        ok = ok && pass;
        std::cout << name << " max_rel " << (pass ? "< " : ">= ") << short_fmt(tol) << " (observed "
                  << short_fmt(c.max_rel) << ", " << c.checked << " checked)\n";
        if (!pass) {
            std::cout << "  worst: " << c.worst << "\n";
        }
    };
    report("d_z", q.d_z, 1e-4);
    report("d_q", q.d_q, 1e-4);
    report("d_alpha", q.d_alpha, 1e-4);
    if (a.layer_configs > 0) {
        const LayerCheck l = check_layer_gradients(a.layer_configs, a.seed);
        report("layer dL/dq", l.d_q, 1e-3);
        report("layer dL/dpixel", l.d_pixel, 1e-3);
    }
    return ok ? kExitOk : kExitInvalid;
}

struct CurveArgs {
    double q = 1.0;
    double alpha = 5.0;
    int levels = 3;
    std::string range = "-4:4";
    double step = 0.01;
    std::string out;
    bool masked = false;
};

int run_curve(const CurveArgs& a) {
    const auto colon = a.range.find(':');
    if (colon == std::string::npos) {
        throw ArgumentError("--range must look like lo:hi");
    }
    double lo = 0.0, hi = 0.0;
    try {
        std::size_t used = 0;
        lo = std::stod(a.range.substr(0, colon), &used);
        if (used != colon) {
            throw std::invalid_argument("lo");
        }
        const std::string tail = a.range.substr(colon + 1);
        hi = std::stod(tail, &used);
        if (used != tail.size()) {
            throw std::invalid_argument("hi");
        }
    } catch (const std::logic_error&) {
        throw ArgumentError("--range must look like lo:hi with numeric bounds");
    }
    if (!(lo < hi)) {
        throw ArgumentError("--range needs lo < hi");
    }
    if (!(a.step > 0.0)) {
        throw ArgumentError("--step must be > 0");
    }
    const QuantizerParams p{a.q, a.alpha, a.levels};
    p.validate();
    const Support support = a.masked ? Support::Masked : Support::Full;
    std::ostringstream csv;
    csv << "z,Q_u,Q_d,dQd_dz,dQd_dq,dQd_dalpha\n";
    const long count = static_cast<long>(std::floor((hi - lo) / a.step + 1e-9));
    for (long k = 0; k <= count; ++k) {
        const double z = lo + static_cast<double>(k) * a.step;
        const SoftResult r = quantize_soft_with_grad(z, p, support);
        csv << fmt(z) << ',' << fmt(quantize_uniform(z, p)) << ',' << fmt(r.value) << ',' << fmt(r.grad.d_z) << ','
            << fmt(r.grad.d_q) << ',' << fmt(r.grad.d_alpha) << '\n';
    }
    if (a.out.empty() || a.out == "-") {
        std::cout << csv.str();
    } else {
        write_text(a.out, csv.str());
    }
    return kExitOk;
}

struct InitArgs {
    std::string strategy = "magnitude";
    std::string data;
    int bits = kDefaultBits;
    std::string out;
    std::string model;
    double alpha = kDefaultAlpha;
    std::optional<double> hbar;
    std::string mode = "444";
    bool full_range = false;
};

int run_init(const InitArgs& a) {
    QuantTables t;
    const SubsamplingMode mode = kModes.at(a.mode);
    if (a.strategy == "ones") {
        t = init_ones(a.bits, a.alpha);
    } else {
        if (a.data.empty()) {
            throw ArgumentError("--data is required for the " + a.strategy + " strategy");
        }
        const LabeledDataset ds = load_dataset(a.data);
        const auto denom = a.full_range ? MagnitudeDenominator::FullRange : MagnitudeDenominator::HalfRange;
        const QuantTables magnitude = init_magnitude(ds, a.bits, mode, denom, a.alpha);
        if (a.strategy == "magnitude") {
            t = magnitude;
        } else {
            if (a.model.empty()) {
                throw ArgumentError("--model is required for the sensitivity strategy");
            }
            const ClassifierParams params = load_classifier(model_file(a.model));
            t = init_from_sensitivity(estimate_sensitivity(params, ds, mode), magnitude);
        }
    }
    if (a.hbar) {
        t.hbar = a.hbar;
        t = apply_gradient_scaling(t);
    }
    t.validate();
    save_tables(t, a.out);
    std::cout << "wrote " << a.out << " (" << a.strategy << ", b=" << t.bits << ", L=" << t.levels << ")\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data;
    std::string tables;
    std::string out;
    std::string validation;
    std::string init_model;
    int epochs = 10;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double jpeg_lr = 0.003;
    std::string jpeg_opt = "adam";
    bool train_alpha = false;
    std::optional<double> hbar;
    std::string variant = "soft";
    std::string mode = "444";
    bool masked = false;
    int rounds = 1;
    std::string arch = "linear";
    int hidden = 32;
    bool no_jpeg = false;
};

int run_train(const TrainArgs& a) {
    const LabeledDataset ds = load_dataset(a.data);
    if (ds.images.empty()) {
        throw ArgumentError("training set is empty");
    }
    const QuantTables tables = load_tables(a.tables);
    std::optional<LabeledDataset> val;
    if (!a.validation.empty()) {
        val = load_dataset(a.validation);
    }
    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.seed = a.seed;
    cfg.model_optimizer = {a.lr, a.momentum, a.weight_decay};
    cfg.jpeg_optimizer.kind = a.jpeg_opt == "sgd" ? JpegOptimizerConfig::Kind::Sgd : JpegOptimizerConfig::Kind::Adam;
    cfg.jpeg_optimizer.lr = a.jpeg_lr;
    cfg.train_alpha = a.train_alpha;
    cfg.gradient_scaling = a.hbar;
    cfg.variant = parse_variant(a.variant);
    cfg.mode = kModes.at(a.mode);
    cfg.masked_inference = a.masked;
    cfg.quant_rounds = a.rounds;
    cfg.use_jpeg_layer = !a.no_jpeg;

    const ImageTensor& first = ds.images.front();
    ClassifierParams params =
        a.init_model.empty()
            ? ClassifierParams::create(parse_architecture(a.arch), static_cast<int>(first.size()), ds.num_classes,
                                       a.hidden, a.seed)
            : load_classifier(model_file(a.init_model));

    const TrainResult r = train(ds, tables, params, cfg, val ? &*val : nullptr);
    fs::create_directories(a.out);
    save_tables(r.tables, fs::path(a.out) / "tables.json");
    save_classifier(r.params, fs::path(a.out) / "model.json");
    write_text(fs::path(a.out) / "metrics.csv", metrics_csv(r.log));
    if (!r.log.empty()) {
        const MetricsRow& last = r.log.back();
        std::cout << "epochs " << last.epoch << ", steps " << last.step << ", loss " << short_fmt(last.loss)
                  << ", train_acc " << short_fmt(last.train_acc);
        if (last.val_acc) {
            std::cout << ", val_acc " << short_fmt(*last.val_acc);
        }
        std::cout << "\n";
    }
    std::cout << "wrote " << a.out << "/{tables.json,model.json,metrics.csv}\n";
    return kExitOk;
}

struct EvalArgs {
    std::string data;
    std::string model;
    std::string tables;  // defaults to <model dir>/tables.json
    bool masked = false;
    std::string variant = "soft";
    std::string mode = "444";
    bool no_jpeg = false;
    // attack only
    std::string method = "fgsm";
    std::vector<double> eps{1.0, 2.0, 3.0, 4.0};
    int steps = 5;
    std::optional<double> step_size;
};

struct Loaded {
    LabeledDataset data;
    ClassifierParams params;
    QuantTables tables;
    LayerConfig layer;
};

Loaded load_for_eval(const EvalArgs& a) {
    Loaded l;
    l.data = load_dataset(a.data);
    const fs::path model_path = model_file(a.model);
    l.params = load_classifier(model_path);
    const fs::path tables_path = a.tables.empty() ? model_path.parent_path() / "tables.json" : fs::path(a.tables);
    l.tables = load_tables(tables_path);
    l.layer.variant = parse_variant(a.variant);
    l.layer.mode = kModes.at(a.mode);
    l.layer.training = false;
    l.layer.support = a.masked ? Support::Masked : Support::Full;
    return l;
}

int run_eval(const EvalArgs& a) {
    const Loaded l = load_for_eval(a);
    const double acc = evaluate(l.data, l.tables, l.params, l.layer, !a.no_jpeg);
    std::cout << "accuracy " << fmt(acc) << " (" << l.data.size() << " samples, "
              << (a.masked ? "masked" : "full") << " CPMF)\n";
    return kExitOk;
}

int run_attack(const EvalArgs& a) {
    const Loaded l = load_for_eval(a);
    AttackConfig cfg;
    cfg.method = a.method == "pgd" ? AttackMethod::Pgd : AttackMethod::Fgsm;
    cfg.epsilons = a.eps;
    cfg.steps = a.steps;
    cfg.step_size = a.step_size;
    const double clean = evaluate(l.data, l.tables, l.params, l.layer);
    const std::vector<double> robust = adversarial_eval(l.data, l.tables, l.params, cfg, l.layer);
    std::cout << "clean_accuracy " << fmt(clean) << "\n";
    std::cout << "eps,robust_accuracy\n";
    for (std::size_t i = 0; i < robust.size(); ++i) {
        std::cout << fmt(cfg.epsilons[i]) << ',' << fmt(robust[i]) << "\n";
    }
    return kExitOk;
}

struct SynthArgs {
    std::string out;
    int per_class = 32;
    int size = 16;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    save_dataset(make_synthetic_frequency_dataset(a.per_class, a.size, a.seed), a.out);
    std::cout << "wrote " << 2 * a.per_class << " images to " << a.out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable JPEG layer: soft quantizer, gradients and joint training"};
    app.require_subcommand(1);

    GradcheckArgs gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic partials with finite differences");
    gradcheck->add_option("--samples", gc.samples, "random quantizer configurations")->capture_default_str();
    gradcheck->add_option("--seed", gc.seed)->capture_default_str();
    gradcheck->add_option("--levels", gc.levels, "alphabet half-widths L, comma separated")
        ->delimiter(',')
        ->capture_default_str();
    gradcheck->add_flag("--masked", gc.masked, "check the 5-point CPMF");
    gradcheck->add_option("--layer-configs", gc.layer_configs, "full-layer configurations (0 skips)")
        ->capture_default_str();

    CurveArgs cv;
    auto* curve = app.add_subcommand("curve", "Emit Q_u, Q_d and partials over a z range as CSV");
    curve->add_option("--q", cv.q)->capture_default_str();
    curve->add_option("--alpha", cv.alpha)->capture_default_str();
    curve->add_option("--levels", cv.levels)->capture_default_str();
    curve->add_option("--range", cv.range, "lo:hi")->capture_default_str();
    curve->add_option("--step", cv.step)->capture_default_str();
    curve->add_option("--out", cv.out, "CSV path (stdout if omitted)");
    curve->add_flag("--masked", cv.masked);

    InitArgs in;
    auto* init = app.add_subcommand("init", "Initialise quantization tables");
    init->add_option("--strategy", in.strategy)
        ->check(CLI::IsMember({"magnitude", "sensitivity", "ones"}))
        ->capture_default_str();
    init->add_option("--data", in.data, "dataset directory");
    init->add_option("--b", in.bits, "bit depth; L = 2^(b-1)")->capture_default_str();
    init->add_option("--out", in.out)->required();
    init->add_option("--model", in.model, "trained model (sensitivity strategy)");
    init->add_option("--alpha", in.alpha)->capture_default_str();
    init->add_option("--hbar", in.hbar, "gradient scaling constant; sets alpha = hbar / q^2");
    init->add_option("--mode", in.mode)->check(CLI::IsMember({"444", "422", "420"}))->capture_default_str();
    init->add_flag("--full-range", in.full_range, "magnitude denominator sqrt(2^b - 1)");

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "Jointly train tables and a classifier");
    trn->add_option("--data", tr.data)->required();
    trn->add_option("--tables", tr.tables)->required();
    trn->add_option("--out", tr.out, "output directory")->required();
    trn->add_option("--val", tr.validation, "validation dataset directory");
    trn->add_option("--init-model", tr.init_model, "start from this model instead of a fresh one");
    trn->add_option("--epochs", tr.epochs)->capture_default_str();
    trn->add_option("--batch-size", tr.batch_size)->capture_default_str();
    trn->add_option("--seed", tr.seed)->capture_default_str();
    trn->add_option("--lr", tr.lr, "classifier SGD learning rate")->capture_default_str();
    trn->add_option("--momentum", tr.momentum)->capture_default_str();
    trn->add_option("--weight-decay", tr.weight_decay)->capture_default_str();
    trn->add_option("--jpeg-lr", tr.jpeg_lr)->capture_default_str();
    trn->add_option("--jpeg-opt", tr.jpeg_opt)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
    trn->add_flag("--train-alpha", tr.train_alpha);
    trn->add_option("--hbar", tr.hbar, "gradient scaling constant");
    trn->add_option("--variant", tr.variant)
        ->check(CLI::IsMember({"soft", "uniform", "ste", "noise", "poly"}))
        ->capture_default_str();
    trn->add_option("--mode", tr.mode)->check(CLI::IsMember({"444", "422", "420"}))->capture_default_str();
    trn->add_flag("--masked", tr.masked, "validate with the 5-point CPMF");
    trn->add_option("--rounds", tr.rounds, "sequential quantization rounds")->capture_default_str();
    trn->add_option("--arch", tr.arch)->check(CLI::IsMember({"linear", "mlp"}))->capture_default_str();
    trn->add_option("--hidden", tr.hidden)->capture_default_str();
    trn->add_flag("--no-jpeg", tr.no_jpeg, "train the classifier on raw images");

    EvalArgs ev;
    auto add_eval_options = [&](CLI::App* cmd) {
        cmd->add_option("--data", ev.data)->required();
        cmd->add_option("--model", ev.model, "model directory or model.json")->required();
        cmd->add_option("--tables", ev.tables, "tables.json (default: next to the model)");
        cmd->add_flag("--masked", ev.masked);
        cmd->add_option("--variant", ev.variant)
            ->check(CLI::IsMember({"soft", "uniform", "ste", "noise", "poly"}))
            ->capture_default_str();
        cmd->add_option("--mode", ev.mode)->check(CLI::IsMember({"444", "422", "420"}))->capture_default_str();
    };
    auto* eval = app.add_subcommand("eval", "Top-1 accuracy of the unified model");
    add_eval_options(eval);
    eval->add_flag("--no-jpeg", ev.no_jpeg);
    auto* attack = app.add_subcommand("attack", "Robust accuracy under FGSM or PGD");
    add_eval_options(attack);
    attack->add_option("--method", ev.method)->check(CLI::IsMember({"fgsm", "pgd"}))->capture_default_str();
    attack->add_option("--eps", ev.eps, "budgets on the 0-255 scale")->delimiter(',')->capture_default_str();
    attack->add_option("--steps", ev.steps)->capture_default_str();
    attack->add_option("--step-size", ev.step_size, "default 2.5 eps / steps");

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Write the synthetic two-class frequency dataset");
    synth->add_option("--out", sy.out)->required();
    synth->add_option("--n-per-class", sy.per_class)->capture_default_str();
    synth->add_option("--size", sy.size)->capture_default_str();
    synth->add_option("--seed", sy.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    try {
        if (*gradcheck) return run_gradcheck(gc);
        if (*curve) return run_curve(cv);
        if (*init) return run_init(in);
        if (*trn) return run_train(tr);
        if (*eval) return run_eval(ev);
        if (*attack) return run_attack(ev);
        if (*synth) return run_synth(sy);
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitInvalid;
}
