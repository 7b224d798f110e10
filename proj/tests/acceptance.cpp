// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number of failures.
//
//   jdl_acceptance [path/to/jdl]
//
// Without the CLI path the determinism criterion is reported as FAIL.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "jdl/classifier.hpp"
#include "jdl/gradcheck.hpp"
#include "jdl/pipeline.hpp"
#include "jdl/qtable.hpp"
#include "jdl/soft_quantizer.hpp"
#include "jdl/tensor.hpp"
#include "jdl/trainer.hpp"

namespace fs = std::filesystem;
using namespace jdl;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

int failures = 0;

void run(int id, const std::string& name, double budget_s, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0 && secs >= budget_s) {
        v.pass = false;
        v.detail += "; over the " + fmt("%.0f", budget_s) + " s budget";
    }
    failures += v.pass ? 0 : 1;
    std::printf("[%2d] %s  %-28s %s (%.2f s)\n", id, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
    std::fflush(stdout);
}

// Keeps the worst value and a flag.
struct Tracker {
    double worst = 0.0;
    bool ok = true;
    void see(double err, double tol) {
        worst = std::max(worst, err);
        ok = ok && err <= tol;
    }
};

Verdict masked_table() {
    const double z = 0.5;
    Tracker full;
    for (double a : {1.0, 3.0, 5.0, 10.0}) {
        full.see(std::abs(quantize_soft(z, {1.0, a, 1023}) - 0.5), 1e-9);
    }
    auto delta = [&](double a) { return std::abs(quantize_soft(z, {1.0, a, 1023}, Support::Masked) - 0.5); };
    const double d1 = delta(1), d3 = delta(3), d5 = delta(5), d10 = delta(10);
    const bool ok = full.ok && std::abs(d1 - 0.0027) <= 1e-4 && d3 <= 1e-7 && d5 <= 1e-7 && d10 <= 1e-9;
    return {ok, "full |Qd-0.5| " + fmt("%.1e", full.worst) + ", masked delta " + fmt("%.5f", d1) + " / " +
                    fmt("%.1e", d3) + " / " + fmt("%.1e", d5) + " / " + fmt("%.1e", d10)};
}

Verdict gradient_suite() {
    const QuantizerCheck c = check_quantizer_gradients(1000, 2024, {3, 8, 128});
    return {c.passed(), "max rel d_z " + fmt("%.1e", c.d_z.max_rel) + ", d_q " + fmt("%.1e", c.d_q.max_rel) +
                            ", d_alpha " + fmt("%.1e", c.d_alpha.max_rel) + " over " +
                            std::to_string(c.d_z.checked) + " configs"};
}

Verdict distortion_identity() {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tracker t;
    for (int k = 0; k < 10000; ++k) {
        const QuantizerParams p{0.05 + 5 * u(rng), 0.1 + 20 * u(rng), 1 + static_cast<int>(u(rng) * 64)};
        const double z = (2 * u(rng) - 1) * (p.levels + 2) * p.q;
        const Cpmf c = cpmf(z, p);
        double direct = 0.0;
        for (int i = c.first_index; i <= c.last_index(); ++i) {
            const double d = z - i * p.q;
            direct += c.probability(i) * d * d;
        }
        const SoftStats s = soft_stats(z, p);
        t.see(std::abs(direct - ((z - s.mean) * (z - s.mean) + s.variance)), 1e-10);
    }
    return {t.ok, "max |E(z-Qp)^2 - bias^2 - var| " + fmt("%.1e", t.worst) + " over 10000"};
}

Verdict scaling_identity() {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tracker t;
    for (int k = 0; k < 10000; ++k) {
        const QuantizerParams p{0.1 + 5 * u(rng), 0.1 + 10 * u(rng), 32};
        const double z = (2 * u(rng) - 1) * 30 * p.q;
        const double c = std::exp((2 * u(rng) - 1) * std::log(10.0));
        const double lhs = quantize_soft(c * z, {c * p.q, p.alpha / (c * c), p.levels});
        const double rhs = c * quantize_soft(z, p);
        t.see(std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)), 1e-10);
    }
    // Same hbar = alpha q^2 = 2 gives the same peak |dQd/dq| whatever the split; value from the mpmath oracle.
    const double oracle = 18.739783511352927777;
    Tracker g;
    for (auto [q, a] : std::array<std::pair<double, double>, 3>{{{1, 2}, {2, 0.5}, {0.5, 8}}}) {
        double best = 0.0;
        for (int k = 0; k <= 3200; k += 4) {
            best = std::max(best, std::abs(quantize_grad((-32 + k / 50.0) * q, {q, a, 32}).d_q));
        }
        g.see(std::abs(best - oracle) / oracle, 1e-6);
    }
    return {t.ok && g.ok, "max scaled error " + fmt("%.1e", t.worst) + ", hbar=2 peak |d_q| spread " +
                              fmt("%.1e", g.worst)};
}

Verdict hard_limit() {
    const QuantizerParams p{1.0, 1000.0, 128};
    Tracker t;
    int used = 0;
    // 10^4 points on [-100, 100] avoiding the 0.01-neighbourhood of every decision threshold.
    for (int k = 0; used < 10000; ++k) {
        const double z = -100.0 + k * 0.0191;
        const double frac = z - std::floor(z);
        if (std::abs(frac - 0.5) < 0.01) {
            continue;
        }
        ++used;
        t.see(std::abs(quantize_soft(z, p) - quantize_uniform(z, p)), 1e-6);
    }
    return {t.ok, "max |Qd - Qu| " + fmt("%.1e", t.worst) + " over " + std::to_string(used) + " points"};
}

double dot(const ImageTensor& a, const ImageTensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a.data[i] * b.data[i];
    }
    return s;
}

double dot(const DctCoefficients& a, const DctCoefficients& b) {
    double s = 0.0;
    for (std::size_t l = 0; l < a.channels.size(); ++l) {
        for (std::size_t i = 0; i < a.channels[l].values.size(); ++i) {
            s += a.channels[l].values[i] * b.channels[l].values[i];
        }
    }
    return s;
}

Verdict pipeline_exactness() {
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> px(0.0, 255.0);
    std::normal_distribution<double> n(0.0, 1.0);

    Tracker parseval;
    for (int trial = 0; trial < 200; ++trial) {
        std::array<double, kBlockArea> block{};
        double e = 0.0;
        for (double& v : block) {
            v = px(rng) - 128.0;
            e += v * v;
        }
        double ec = 0.0;
        for (double v : dct_block(block)) {
            ec += v * v;
        }
        parseval.see(std::abs(e - ec), 1e-8);
    }

    Tracker trip, adjoint;
    for (auto mode : {SubsamplingMode::S444, SubsamplingMode::S422, SubsamplingMode::S420}) {
        ImageTensor x(3, 32, 32);
        for (double& v : x.data) {
            v = px(rng);
        }
        if (mode == SubsamplingMode::S444) {
            const ImageTensor back = synthesize(analyze(x, mode), mode);
            for (std::size_t i = 0; i < x.size(); ++i) {
                trip.see(std::abs(back.data[i] - x.data[i]), 1e-6);
            }
        }
        // analyze is affine (level shift); test its linear part.
        const DctCoefficients offset = analyze(ImageTensor(3, 32, 32, 0.0), mode);
        DctCoefficients fx = analyze(x, mode);
        DctCoefficients v = fx.zeros_like();
        for (std::size_t l = 0; l < fx.channels.size(); ++l) {
            for (std::size_t i = 0; i < fx.channels[l].values.size(); ++i) {
                fx.channels[l].values[i] -= offset.channels[l].values[i];
                v.channels[l].values[i] = n(rng);
            }
        }
        const double lhs = dot(fx, v);
        const double rhs = dot(x, pipeline_backward(v, {mode, 32, 32}));
        adjoint.see(std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)), 1e-8);
    }

    const LayerCheck layer = check_layer_gradients(20, 7);
    const bool ok = parseval.ok && trip.ok && adjoint.ok && layer.passed();
    return {ok, "Parseval " + fmt("%.1e", parseval.worst) + ", round trip " + fmt("%.1e", trip.worst) +
                    ", adjoint " + fmt("%.1e", adjoint.worst) + ", layer FD rel dq " +
                    fmt("%.1e", layer.d_q.max_rel) + " / dpixel " + fmt("%.1e", layer.d_pixel.max_rel)};
}

Verdict alpha_decay() {
    const int L = levels_for_bits(3);
    double previous = INFINITY;
    bool decreasing = true;
    std::string sups;
    for (double a : {1.0, 2.0, 4.0, 8.0}) {
        double sup = 0.0;
        for (int k = 0; k <= 800; ++k) {
            sup = std::max(sup, std::abs(quantize_grad(-4.0 + k / 100.0, {1.0, a, L}).d_alpha));
        }
        decreasing = decreasing && sup < previous;
        previous = sup;
        sups += (sups.empty() ? "" : " > ") + fmt("%.4f", sup);
    }
    // At alpha=50 the derivative is negligible except in a narrow band around each decision
    // threshold (half-integers), where two levels compete; the band's sup is reported alongside.
    double at50 = 0.0, band = 0.0;
    for (int k = 0; k <= 800; ++k) {
        const double z = -4.0 + k / 100.0;
        const double g = std::abs(quantize_grad(z, {1.0, 50.0, L}).d_alpha);
        double& slot = std::abs(z - std::floor(z) - 0.5) >= 0.2 ? at50 : band;
        slot = std::max(slot, g);
    }
    return {decreasing && at50 < 1e-6, "sup |dQd/dalpha| " + sups + ", at alpha=50 " + fmt("%.1e", at50) +
                                           " (>= 0.2 from thresholds; " + fmt("%.1e", band) + " inside)"};
}

class ScopedEnv {
public:
    ScopedEnv(const char* name, const char* value) : name_(name) {
        if (const char* old = std::getenv(name)) {
            old_ = old;
            had_ = true;
        }
        setenv(name, value, 1);
    }
    ~ScopedEnv() {
        if (had_) {
            setenv(name_, old_.c_str(), 1);
        } else {
            unsetenv(name_);
        }
    }

private:
    const char* name_;
    std::string old_;
    bool had_ = false;
};

Verdict end_to_end() {
    ScopedEnv single("JDL_THREADS", "1");
    const LabeledDataset ds = make_synthetic_frequency_dataset(32, 16, 3);
    const QuantTables init = init_magnitude(ds, 8);
    const ClassifierParams model = ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 500 / (static_cast<int>(ds.size()) / cfg.batch_size);
    cfg.seed = 3;
    cfg.jpeg_optimizer.lr = 0.003;
    const TrainResult r = train(ds, init, model, cfg);
    double moved = 0.0;
    for (std::size_t i = 0; i < init.q_y.size(); ++i) {
        moved = std::max({moved, std::abs(r.tables.q_y[i] - init.q_y[i]), std::abs(r.tables.q_c[i] - init.q_c[i])});
    }
    TrainConfig frozen = cfg;
    frozen.jpeg_optimizer.lr = 0.0;
    const TrainResult control = train(ds, init, model, frozen);
    const bool ok = r.log.back().step == 500 && r.log.back().loss < 0.1 && moved > 1e-3 && control.tables == init;
    return {ok, std::to_string(r.log.back().step) + " steps, final loss " + fmt("%.2e", r.log.back().loss) +
                    ", max table move " + fmt("%.3f", moved) + ", jpeg-lr=0 tables " +
                    (control.tables == init ? "bit-identical" : "CHANGED")};
}

Verdict adversarial() {
    const LabeledDataset train_set = make_synthetic_frequency_dataset(16, 16, 5);
    const LabeledDataset test_set = make_synthetic_frequency_dataset(16, 16, 7);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 8;
    cfg.seed = 9;
    const TrainResult m = train(train_set, init_magnitude(train_set, 8),
                                ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2), cfg);
    const LayerConfig layer;
    const double clean = evaluate(test_set, m.tables, m.params, layer);
    AttackConfig fgsm;
    fgsm.epsilons = {0.0, 1.0, 2.0, 3.0, 4.0};
    const std::vector<double> robust = adversarial_eval(test_set, m.tables, m.params, fgsm, layer);
    bool ok = robust[0] == clean;
    std::string list;
    for (std::size_t i = 0; i < robust.size(); ++i) {
        ok = ok && (i == 0 || robust[i] <= robust[i - 1]);
        list += (i ? " " : "") + fmt("%.3f", robust[i]);
    }
    // Informational. The learned tables are nearly hard on the discriminative coefficients, which
    // masks input gradients; with frozen unit tables the same attack (PGD-10) clearly bites.
    TrainConfig soft = cfg;
    soft.jpeg_optimizer.lr = 0.0;
    const TrainResult c = train(train_set, init_ones(8), ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2),
                                soft);
    AttackConfig pgd;
    pgd.method = AttackMethod::Pgd;
    pgd.steps = 10;
    pgd.epsilons = {32.0};
    const double bite = adversarial_eval(test_set, c.tables, c.params, pgd, layer)[0];
    return {ok, "clean " + fmt("%.3f", clean) + ", FGSM robust@eps{0..4} " + list +
                    "; unit-table control PGD-10 eps=32: " + fmt("%.3f", bite)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict determinism(const std::string& cli) {
    if (cli.empty()) {
        return {false, "no CLI path given"};
    }
    std::random_device rd;
    const fs::path root = fs::temp_directory_path() / ("jdl_accept_" + std::to_string(rd()));
    fs::create_directories(root);
    const std::string q = "\"" + cli + "\"";
    const std::string r = "\"" + root.string();
    auto sh = [](const std::string& cmd) { return std::system((cmd + " > /dev/null").c_str()); };
    int rc = sh(q + " synth --out " + r + "/data\" --n-per-class 16 --size 16 --seed 4");
    rc |= sh(q + " init --strategy magnitude --data " + r + "/data\" --out " + r + "/t.json\"");
    for (const char* run : {"a", "b"}) {
        rc |= sh(q + " train --data " + r + "/data\" --tables " + r + "/t.json\" --out " + r + "/" + run +
                 "\" --epochs 3 --batch-size 8 --seed 11");
    }
    bool same = rc == 0;
    std::string detail = rc == 0 ? "" : "CLI exited non-zero; ";
    for (const char* f : {"metrics.csv", "tables.json", "model.json"}) {
        const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
        const bool eq = !a.empty() && a == b;
        same = same && eq;
        detail += std::string(f) + (eq ? " identical" : " DIFFER") + (std::string(f) == "model.json" ? "" : ", ");
    }
    std::error_code ec;
    fs::remove_all(root, ec);
    return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    run(1, "masked CPMF table", 1, masked_table);
    run(2, "analytic gradients vs FD", 10, gradient_suite);
    run(3, "distortion decomposition", 5, distortion_identity);
    run(4, "scaling identity", 0, scaling_identity);
    run(5, "hard-quantizer limit", 0, hard_limit);
    run(6, "pipeline exactness", 0, pipeline_exactness);
    run(7, "alpha-gradient decay", 0, alpha_decay);
    run(8, "end-to-end smoke", 60, end_to_end);
    run(9, "adversarial protocol", 0, adversarial);
    run(10, "determinism", 0, [&] { return determinism(cli); });
    std::printf("%d of 10 criteria failed\n", failures);
    return failures;
}
