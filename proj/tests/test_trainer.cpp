#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>

#include "jdl/classifier.hpp"
#include "jdl/error.hpp"
#include "jdl/gradcheck.hpp"
#include "jdl/layer.hpp"
#include "jdl/optim.hpp"
#include "jdl/trainer.hpp"
#include "test_util.hpp"

using namespace jdl;

namespace {

// Tables with moderate hardness alpha q^2 in [0.3, 3].
QuantTables soft_tables(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uq(1.0, 20.0), uh(0.3, 3.0);
    QuantTables t = init_ones(8);
    for (int m = 0; m < kBlockArea; ++m) {
        t.q_y[m] = uq(rng);
        t.q_c[m] = uq(rng);
        t.alpha_y[m] = uh(rng) / (t.q_y[m] * t.q_y[m]);
        t.alpha_c[m] = uh(rng) / (t.q_c[m] * t.q_c[m]);
    }
    return t;
}

// <w, J(x)>. A plain pixel sum would only see DC: every other basis function
// sums to zero over its block.
double weighted_sum(const ImageTensor& x, const ImageTensor& w, const QuantTables& t, const LayerConfig& cfg) {
    const ImageTensor y = jpeg_layer_apply(x, t, cfg);
    return std::inner_product(y.data.begin(), y.data.end(), w.data.begin(), 0.0);
}

// Sets JDL_THREADS for the lifetime of the object.
class ThreadsEnv {
public:
    explicit ThreadsEnv(const char* value) {
        if (const char* old = std::getenv("JDL_THREADS")) {
            saved_ = old;
        }
        setenv("JDL_THREADS", value, 1);
    }
    ~ThreadsEnv() {
        if (saved_.empty()) {
            unsetenv("JDL_THREADS");
        } else {
            setenv("JDL_THREADS", saved_.c_str(), 1);
        }
    }

private:
    std::string saved_;
};

TrainResult trained_synthetic(int epochs = 10) {
    const LabeledDataset ds = make_synthetic_frequency_dataset(16, 16, 5);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.seed = 9;
    return train(ds, init_magnitude(ds, 8), ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2), cfg);
}

}  // namespace

TEST_CASE("jpeg layer forward") {
    std::mt19937_64 rng(1);
    SUBCASE("near-identity with fine steps and a wide alphabet") {
        QuantTables t = init_ones(25);
        t.q_y.fill(kQMin);
        t.q_c.fill(kQMin);
        t.alpha_y.fill(1e6);
        t.alpha_c.fill(1e6);
        const ImageTensor x = test::random_image(3, 16, 8, rng);
        const ImageTensor y = jpeg_layer_apply(x, t, LayerConfig{});
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(std::abs(y.data[i] - x.data[i]) < 1e-2);
        }
    }
    SUBCASE("constant 128 is a fixed point") {
        const ImageTensor x(3, 16, 16, 128.0);
        for (auto mode : {SubsamplingMode::S444, SubsamplingMode::S420}) {
            LayerConfig cfg;
            cfg.mode = mode;
            const ImageTensor y = jpeg_layer_apply(x, init_ones(), cfg);
            for (double v : y.data) {
                CHECK(v == doctest::Approx(128.0).epsilon(1e-12));
            }
        }
    }
    SUBCASE("deterministic") {
        const ImageTensor x = test::random_image(3, 16, 16, rng);
        const QuantTables t = soft_tables(rng);
        CHECK(jpeg_layer_apply(x, t, LayerConfig{}) == jpeg_layer_apply(x, t, LayerConfig{}));
        LayerConfig noise;
        noise.variant = QuantizerVariant::AdditiveNoise;
        noise.seed = 4;
        CHECK(jpeg_layer_apply(x, t, noise) == jpeg_layer_apply(x, t, noise));
        LayerConfig other = noise;
        other.seed = 5;
        CHECK_FALSE(jpeg_layer_apply(x, t, noise) == jpeg_layer_apply(x, t, other));
    }
    SUBCASE("coarse hard quantization changes the image") {
        QuantTables t = init_ones();
        t.q_y.fill(40.0);
        t.q_c.fill(40.0);
        t.alpha_y.fill(1e3);
        t.alpha_c.fill(1e3);
        LayerConfig uniform;
        uniform.variant = QuantizerVariant::Uniform;
        const ImageTensor x = test::random_image(3, 8, 8, rng);
        const ImageTensor soft = jpeg_layer_apply(x, t, LayerConfig{});
        const ImageTensor hard = jpeg_layer_apply(x, t, uniform);
        double diff = 0.0, err = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            diff = std::max(diff, std::abs(soft.data[i] - hard.data[i]));
            err = std::max(err, std::abs(hard.data[i] - x.data[i]));
        }
        CHECK(diff < 1e-6);
        CHECK(err > 1.0);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(jpeg_layer_apply(ImageTensor(1, 8, 8), init_ones(), LayerConfig{}), ArgumentError);
        CHECK_THROWS_AS(jpeg_layer_apply(ImageTensor(3, 12, 8), init_ones(), LayerConfig{}), ArgumentError);
    }
}

TEST_CASE("jpeg layer backward") {
    std::mt19937_64 rng(2);
    const ImageTensor x = test::random_image(3, 8, 8, rng);
    const QuantTables t = soft_tables(rng);
    SUBCASE("zero upstream gives a zero bundle") {
        const LayerOutput f = jpeg_layer_forward(x, t, LayerConfig{});
        const JpegGrad g = jpeg_layer_backward(ImageTensor(3, 8, 8), f.context);
        for (int m = 0; m < kBlockArea; ++m) {
            CHECK(g.d_q_y[m] == 0.0);
            CHECK(g.d_q_c[m] == 0.0);
            CHECK(g.d_alpha_y[m] == 0.0);
        }
        for (double v : g.d_pixels.data) {
            CHECK(v == 0.0);
        }
    }
    SUBCASE("d<w, output>/dq matches finite differences for all 128 entries") {
        for (auto mode : {SubsamplingMode::S444, SubsamplingMode::S420}) {
            LayerConfig cfg;
            cfg.mode = mode;
            const ImageTensor img = test::random_image(3, 16, 16, rng);
            const ImageTensor w = test::random_image(3, 16, 16, rng, -1.0, 1.0);
            const LayerOutput f = jpeg_layer_forward(img, t, cfg);
            const JpegGrad g = jpeg_layer_backward(w, f.context);
            double worst = 0.0;
            for (int group = 0; group < 2; ++group) {
                for (int m = 0; m < kBlockArea; ++m) {
                    QuantTables probe = t;
                    Table& table = group == 0 ? probe.q_y : probe.q_c;
                    const double q0 = table[m];
                    const double fd = test::central_diff(
                        [&](double v) {
                            table[m] = v;
                            return weighted_sum(img, w, probe, cfg);
                        },
                        q0, 1e-4 * q0);
                    const double analytic = group == 0 ? g.d_q_y[m] : g.d_q_c[m];
                    CHECK(test::close(analytic, fd, 1e-3, 1e-7));
                    worst = std::max(worst, test::rel_error(analytic, fd, 1e-4));
                }
            }
            MESSAGE("max rel error " << worst);
        }
    }
    SUBCASE("alpha gradients and repeated rounds") {
        LayerConfig cfg;
        cfg.rounds = 2;
        const ImageTensor w = test::random_image(3, 8, 8, rng, -1.0, 1.0);
        const LayerOutput f = jpeg_layer_forward(x, t, cfg);
        const JpegGrad g = jpeg_layer_backward(w, f.context);
        for (int m : {0, 1, 9, 35}) {
            CAPTURE(m);
            QuantTables probe = t;
            const double a0 = probe.alpha_y[m];
            const double fa = test::central_diff(
                [&](double v) {
                    probe.alpha_y[m] = v;
                    return weighted_sum(x, w, probe, cfg);
                },
                a0, 1e-4 * a0);
            CHECK(test::close(g.d_alpha_y[m], fa, 1e-3, 1e-7));
            probe = t;
            const double q0 = probe.q_c[m];
            const double fq = test::central_diff(
                [&](double v) {
                    probe.q_c[m] = v;
                    return weighted_sum(x, w, probe, cfg);
                },
                q0, 1e-4 * q0);
            CHECK(test::close(g.d_q_c[m], fq, 1e-3, 1e-7));
        }
    }
    SUBCASE("identical blocks contribute equally") {
        ImageTensor twice(3, 8, 16);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 8; ++y) {
                for (int xx = 0; xx < 16; ++xx) {
                    twice.at(c, y, xx) = x.at(c, y, xx % 8);
                }
            }
        }
        const JpegGrad one = jpeg_layer_backward(ImageTensor(3, 8, 8, 1.0), jpeg_layer_forward(x, t, {}).context);
        const JpegGrad two =
            jpeg_layer_backward(ImageTensor(3, 8, 16, 1.0), jpeg_layer_forward(twice, t, {}).context);
        for (int m = 0; m < kBlockArea; ++m) {
            CHECK(two.d_q_y[m] == doctest::Approx(2 * one.d_q_y[m]).epsilon(1e-12));
            CHECK(two.d_q_c[m] == doctest::Approx(2 * one.d_q_c[m]).epsilon(1e-12));
        }
    }
    SUBCASE("uniform variant passes no pixel gradient") {
        LayerConfig cfg;
        cfg.variant = QuantizerVariant::Uniform;
        const JpegGrad g = jpeg_layer_backward(ImageTensor(3, 8, 8, 1.0), jpeg_layer_forward(x, t, cfg).context);
        for (double v : g.d_pixels.data) {
            CHECK(v == 0.0);
        }
    }
    SUBCASE("context mismatch") {
        const LayerOutput f = jpeg_layer_forward(x, t, LayerConfig{});
        CHECK_THROWS_AS(jpeg_layer_backward(ImageTensor(3, 16, 8), f.context), ArgumentError);
        CHECK_THROWS_AS(jpeg_layer_backward(ImageTensor(3, 8, 8), LayerContext{}), ArgumentError);
    }
}

TEST_CASE("end-to-end gradient check") {
    const LayerCheck c = check_layer_gradients(4, 17);
    MESSAGE("dq max rel " << c.d_q.max_rel << ", pixel max rel " << c.d_pixel.max_rel);
    CHECK(c.passed());
    CHECK(c.d_q.checked == 4 * 128);
    CHECK(c.d_pixel.checked == 4 * 192);
    CHECK_THROWS_AS(check_layer_gradients(0, 1), ArgumentError);
    const QuantizerCheck q = check_quantizer_gradients(200, 3, {3});
    CHECK(q.passed());
    CHECK_THROWS_AS(check_quantizer_gradients(0, 1, {3}), ArgumentError);
    CHECK_THROWS_AS(check_quantizer_gradients(5, 1, {}), ArgumentError);
}

TEST_CASE("classifier") {
    std::mt19937_64 rng(3);
    SUBCASE("zero weights give ln K") {
        const ClassifierParams p = ClassifierParams::create(Architecture::Linear, 12, 3);
        const ImageTensor x = test::random_image(3, 2, 2, rng);
        CHECK(classifier_sample_backward(x, 1, p).loss == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    }
    SUBCASE("finite differences on a 10-parameter linear model") {
        ClassifierParams p = ClassifierParams::create(Architecture::Linear, 4, 2);
        REQUIRE(p.values.size() == 10);
        std::normal_distribution<double> n(0.0, 2.0);
        for (double& v : p.values) {
            v = n(rng);
        }
        const ImageTensor x = test::random_image(1, 2, 2, rng);
        const SampleGrad g = classifier_sample_backward(x, 0, p);
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            ClassifierParams probe = p;
            const double fd = test::central_diff(
                [&](double v) {
                    probe.values[i] = v;
                    return classifier_sample_backward(x, 0, probe).loss;
                },
                p.values[i], 1e-4);
            CHECK(test::rel_error(g.d_theta[i], fd, 1e-8) < 1e-5);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            ImageTensor probe = x;
            const double fd = test::central_diff(
                [&](double v) {
                    probe.data[i] = v;
                    return classifier_sample_backward(probe, 0, p).loss;
                },
                x.data[i], 1e-3);
            CHECK(test::rel_error(g.d_input.data[i], fd, 1e-8) < 1e-5);
        }
    }
    SUBCASE("finite differences on the hidden-layer model") {
        const ClassifierParams p = ClassifierParams::create(Architecture::OneHiddenRelu, 12, 3, 6, 42);
        const ImageTensor x = test::random_image(3, 2, 2, rng);
        const SampleGrad g = classifier_sample_backward(x, 2, p);
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            ClassifierParams probe = p;
            const double fd = test::central_diff(
                [&](double v) {
                    probe.values[i] = v;
                    return classifier_sample_backward(x, 2, probe).loss;
                },
                p.values[i], 1e-6);
            CHECK(test::close(g.d_theta[i], fd, 1e-5, 1e-9));
        }
    }
    SUBCASE("mean reduction ignores duplication") {
        ClassifierParams p = ClassifierParams::create(Architecture::OneHiddenRelu, 12, 2, 5, 1);
        std::vector<ImageTensor> xs{test::random_image(3, 2, 2, rng), test::random_image(3, 2, 2, rng)};
        std::vector<int> ys{0, 1};
        const ClassifierBatchResult a = classifier_forward_backward(xs, ys, p);
        std::vector<ImageTensor> xs2{xs[0], xs[1], xs[0], xs[1]};
        std::vector<int> ys2{0, 1, 0, 1};
        const ClassifierBatchResult b = classifier_forward_backward(xs2, ys2, p);
        CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
        for (std::size_t i = 0; i < a.d_theta.size(); ++i) {
            CHECK(a.d_theta[i] == doctest::Approx(b.d_theta[i]).epsilon(1e-12));
        }
    }
    SUBCASE("serialization and errors") {
        const ClassifierParams p = ClassifierParams::create(Architecture::OneHiddenRelu, 12, 3, 4, 7);
        CHECK(classifier_from_json(classifier_to_json(p)) == p);
        test::TempDir dir("model");
        save_classifier(p, dir.path() / "m.json");
        CHECK(load_classifier(dir.path() / "m.json") == p);
        CHECK_THROWS_AS(classifier_sample_backward(ImageTensor(3, 2, 2), 3, p), ArgumentError);
        CHECK_THROWS_AS(classifier_logits(ImageTensor(3, 2, 3), p), ArgumentError);
        CHECK_THROWS_AS(classifier_from_json("{}"), FormatError);
        CHECK_THROWS_AS(ClassifierParams::create(Architecture::Linear, 4, 1), ArgumentError);
        CHECK(parse_architecture(architecture_name(Architecture::OneHiddenRelu)) == Architecture::OneHiddenRelu);
    }
}

TEST_CASE("optimizers") {
    SUBCASE("first Adam step is -lr for g = 1") {
        Adam adam(AdamConfig{}, 1);
        std::vector<double> p{0.0};
        const std::vector<double> g{1.0};
        adam.step(p, g);
        CHECK(p[0] == doctest::Approx(-0.003 / (1.0 + 1e-8)).epsilon(1e-15));
        // Second step, hand-computed: m = 0.19, v = 0.001999.
        adam.step(p, g);
        const double m_hat = 0.19 / (1 - 0.81);
        const double v_hat = 0.001999 / (1 - 0.998001);
        CHECK(p[0] == doctest::Approx(-0.003 / (1.0 + 1e-8) - 0.003 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
        CHECK(adam.steps() == 2);
    }
    SUBCASE("SGD with momentum and weight decay") {
        Sgd sgd(SgdConfig{0.1, 0.9, 0.01}, 1);
        std::vector<double> p{1.0};
        const std::vector<double> g{2.0};
        sgd.step(p, g);
        CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 2.01));
        const double buf = 0.9 * 2.01 + (2.0 + 0.01 * p[0]);
        const double expected = p[0] - 0.1 * buf;
        sgd.step(p, g);
        CHECK(p[0] == doctest::Approx(expected));
    }
    SUBCASE("size mismatch") {
        Adam adam(AdamConfig{}, 2);
        std::vector<double> p{0.0};
        CHECK_THROWS_AS(adam.step(p, p), ArgumentError);
    }
}

TEST_CASE("training") {
    const LabeledDataset ds = make_synthetic_frequency_dataset(8, 16, 11);
    const QuantTables tables = init_magnitude(ds, 8);
    const ClassifierParams params = ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.seed = 21;

    SUBCASE("loss falls and tables move") {
        cfg.epochs = 15;
        const TrainResult r = train(ds, tables, params, cfg);
        REQUIRE(r.log.size() == 15);
        CHECK(r.log.back().loss < r.log.front().loss);
        CHECK(r.log.back().step == 15 * 4);
        CHECK_FALSE(r.tables.q_y == tables.q_y);
        CHECK(r.tables.alpha_y == tables.alpha_y);
    }
    SUBCASE("zero JPEG learning rate freezes the tables") {
        cfg.jpeg_optimizer.lr = 0.0;
        const TrainResult r = train(ds, tables, params, cfg);
        CHECK(r.tables == tables);
    }
    SUBCASE("frozen uniform layer equals training on pre-quantized images") {
        cfg.jpeg_optimizer.lr = 0.0;
        cfg.variant = QuantizerVariant::Uniform;
        const TrainResult through = train(ds, tables, params, cfg);
        LabeledDataset pre = ds;
        for (auto& img : pre.images) {
            img = jpeg_layer_apply(img, tables, cfg.layer_config(true));
        }
        TrainConfig raw = cfg;
        raw.use_jpeg_layer = false;
        const TrainResult direct = train(pre, tables, params, raw);
        REQUIRE(through.log.size() == direct.log.size());
        for (std::size_t i = 0; i < through.log.size(); ++i) {
            CHECK(through.log[i].loss == direct.log[i].loss);
        }
        CHECK(through.params == direct.params);
    }
    SUBCASE("deterministic across runs and thread counts") {
        cfg.variant = QuantizerVariant::AdditiveNoise;
        TrainResult a, b;
        {
            ThreadsEnv env("1");
            a = train(ds, tables, params, cfg);
        }
        {
            ThreadsEnv env("3");
            b = train(ds, tables, params, cfg);
        }
        CHECK(a.tables == b.tables);
        CHECK(a.params == b.params);
        CHECK(metrics_csv(a.log) == metrics_csv(b.log));
        TrainConfig other = cfg;
        other.seed = 22;
        CHECK_FALSE(train(ds, tables, params, other).params == a.params);
    }
    SUBCASE("gradient scaling holds at every step") {
        cfg.gradient_scaling = 0.7;
        cfg.jpeg_optimizer.kind = JpegOptimizerConfig::Kind::Sgd;
        cfg.jpeg_optimizer.lr = 0.5;
        long steps = 0;
        const TrainResult r = train(ds, tables, params, cfg, nullptr, [&](long, const QuantTables& t) {
            ++steps;
            REQUIRE(t.hbar.has_value());
            for (int m = 0; m < kBlockArea; ++m) {
                CHECK(t.alpha_y[m] * t.q_y[m] * t.q_y[m] == doctest::Approx(0.7).epsilon(1e-12));
                CHECK(t.alpha_c[m] * t.q_c[m] * t.q_c[m] == doctest::Approx(0.7).epsilon(1e-12));
            }
        });
        CHECK(steps == 16);
        CHECK(*r.tables.hbar == 0.7);
    }
    SUBCASE("alpha is trained only on request") {
        cfg.train_alpha = true;
        const TrainResult r = train(ds, tables, params, cfg);
        CHECK_FALSE(r.tables.alpha_y == tables.alpha_y);
        for (int m = 0; m < kBlockArea; ++m) {
            CHECK(r.tables.alpha_y[m] > 0.0);
        }
    }
    SUBCASE("validation accuracy is logged") {
        const LabeledDataset val = make_synthetic_frequency_dataset(4, 16, 12);
        cfg.masked_inference = true;
        const TrainResult r = train(ds, tables, params, cfg, &val);
        for (const auto& row : r.log) {
            REQUIRE(row.val_acc.has_value());
            CHECK(*row.val_acc >= 0.0);
            CHECK(*row.val_acc <= 1.0);
        }
    }
    SUBCASE("invalid configurations") {
        TrainConfig bad = cfg;
        bad.batch_size = 0;
        CHECK_THROWS_AS(train(ds, tables, params, bad), ArgumentError);
        bad = cfg;
        bad.model_optimizer.lr = 0.0;
        CHECK_THROWS_AS(train(ds, tables, params, bad), ArgumentError);
        bad = cfg;
        bad.gradient_scaling = -1.0;
        CHECK_THROWS_AS(train(ds, tables, params, bad), ArgumentError);
        const ClassifierParams wrong = ClassifierParams::create(Architecture::Linear, 10, 2);
        CHECK_THROWS_AS(train(ds, tables, wrong, cfg), ArgumentError);
    }
}

TEST_CASE("metrics CSV") {
    std::vector<MetricsRow> rows(2);
    rows[0] = {4, 1, 0.5, 0.75, std::nullopt};
    rows[1] = {8, 2, 0.25, 1.0, 0.875};
    CHECK(metrics_csv(rows) == "step,epoch,loss,train_acc,val_acc\n4,1,0.5,0.75,\n8,2,0.25,1,0.875\n");
}

TEST_CASE("evaluation") {
    const TrainResult trained = trained_synthetic();
    const LabeledDataset ds = make_synthetic_frequency_dataset(16, 16, 6);
    SUBCASE("read-only") {
        const QuantTables t = trained.tables;
        const ClassifierParams p = trained.params;
        evaluate(ds, t, p, LayerConfig{});
        CHECK(t == trained.tables);
        CHECK(p == trained.params);
    }
    SUBCASE("masked and full inference predict the same labels") {
        for (const auto& alpha : {3.0, 5.0}) {
            QuantTables t = trained.tables;
            t.alpha_y.fill(alpha);
            t.alpha_c.fill(alpha);
            LayerConfig masked;
            masked.support = Support::Masked;
            for (const auto& x : ds.images) {
                CHECK(predict(jpeg_layer_apply(x, t, LayerConfig{}), trained.params) ==
                      predict(jpeg_layer_apply(x, t, masked), trained.params));
            }
        }
        CHECK(evaluate(ds, trained.tables, trained.params, LayerConfig{}) > 0.9);
    }
    SUBCASE("random classifiers sit at chance") {
        std::mt19937_64 rng(8);
        std::normal_distribution<double> n(0.0, 0.05);
        std::vector<double> accs;
        for (int k = 0; k < 40; ++k) {
            ClassifierParams p = ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2);
            for (double& v : p.values) {
                v = n(rng);
            }
            accs.push_back(evaluate(ds, trained.tables, p, LayerConfig{}));
        }
        const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
        double var = 0.0;
        for (double a : accs) {
            var += (a - mean) * (a - mean);
        }
        var /= accs.size() - 1;
        CHECK(std::abs(mean - 0.5) <= 3 * std::sqrt(var / accs.size()) + 1e-12);
    }
}

TEST_CASE("adversarial evaluation") {
    const TrainResult trained = trained_synthetic();
    const LabeledDataset ds = make_synthetic_frequency_dataset(16, 16, 7);
    const LayerConfig layer;
    const double clean = evaluate(ds, trained.tables, trained.params, layer);
    AttackConfig fgsm;
    fgsm.epsilons = {0.0, 1.0, 2.0, 3.0, 4.0};
    const std::vector<double> robust = adversarial_eval(ds, trained.tables, trained.params, fgsm, layer);
    CHECK(robust[0] == clean);
    for (std::size_t i = 1; i < robust.size(); ++i) {
        CHECK(robust[i] <= robust[i - 1]);
    }
    AttackConfig pgd;
    pgd.method = AttackMethod::Pgd;
    pgd.epsilons = fgsm.epsilons;
    pgd.steps = 1;
    pgd.step_size = std::nullopt;
    for (double eps : {2.0, 4.0}) {
        AttackConfig one = pgd;
        one.epsilons = {eps};
        one.step_size = eps;
        AttackConfig f = fgsm;
        f.epsilons = {eps};
        CHECK(adversarial_eval(ds, trained.tables, trained.params, one, layer)[0] <=
              adversarial_eval(ds, trained.tables, trained.params, f, layer)[0]);
    }
    SUBCASE("perturbations respect the budget and pixel range") {
        AttackConfig multi = pgd;
        multi.steps = 5;
        for (std::size_t i = 0; i < 4; ++i) {
            const ImageTensor adv =
                attack_sample(ds.images[i], ds.labels[i], trained.tables, trained.params, multi, 3.0, layer);
            for (std::size_t k = 0; k < adv.size(); ++k) {
                CHECK(std::abs(adv.data[k] - ds.images[i].data[k]) <= 3.0 + 1e-12);
                CHECK(adv.data[k] >= 0.0);
                CHECK(adv.data[k] <= 255.0);
            }
        }
        CHECK(multi.step_for(3.0) == doctest::Approx(1.5));
    }
    SUBCASE("invalid attacks") {
        AttackConfig bad;
        bad.steps = 0;
        CHECK_THROWS_AS(adversarial_eval(ds, trained.tables, trained.params, bad, layer), ArgumentError);
        bad = AttackConfig{};
        bad.epsilons = {-1.0};
        CHECK_THROWS_AS(adversarial_eval(ds, trained.tables, trained.params, bad, layer), ArgumentError);
    }
}

TEST_CASE("sensitivity") {
    const LabeledDataset ds = make_synthetic_frequency_dataset(6, 16, 13);
    SUBCASE("constant logits give zero sensitivity and the magnitude tables") {
        const ClassifierParams zero = ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2);
        const Sensitivity s = estimate_sensitivity(zero, ds);
        for (int m = 0; m < kBlockArea; ++m) {
            CHECK(s.luma[m] == 0.0);
            CHECK(s.chroma[m] == 0.0);
        }
        const QuantTables t = init_sensitivity(zero, ds, 8);
        const QuantTables mag = init_magnitude(ds, 8);
        CHECK(t.q_y == mag.q_y);
        CHECK(t.q_c == mag.q_c);
    }
    SUBCASE("a model averaging one block is most sensitive to luma DC") {
        ClassifierParams p = ClassifierParams::create(Architecture::Linear, 3 * 16 * 16, 2);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 8; ++y) {
                for (int x = 0; x < 8; ++x) {
                    p.values[static_cast<std::size_t>((c * 16 + y) * 16 + x)] = 1.0;
                }
            }
        }
        const Sensitivity s = estimate_sensitivity(p, ds);
        CHECK(s.luma[0] > 0.0);
        for (int m = 1; m < kBlockArea; ++m) {
            CHECK(s.luma[m] < 1e-9 * s.luma[0]);
        }
        const QuantTables t = init_sensitivity(p, ds, 8);
        for (int m = 0; m < kBlockArea; ++m) {
            CHECK(t.q_y[m] >= kQMin);
        }
    }
    SUBCASE("trained model: invariant to dataset order") {
        const TrainResult trained = trained_synthetic(3);
        LabeledDataset shuffled = ds;
        std::mt19937_64 rng(2);
        std::vector<std::size_t> order(ds.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size(); ++i) {
            shuffled.images[i] = ds.images[order[i]];
            shuffled.labels[i] = ds.labels[order[i]];
        }
        const Sensitivity a = estimate_sensitivity(trained.params, ds);
        const Sensitivity b = estimate_sensitivity(trained.params, shuffled);
        CHECK(a.luma == b.luma);
        CHECK(a.chroma == b.chroma);
        // The synthetic classes live in luma frequency slots 1 and 2.
        const double others = *std::max_element(a.luma.begin() + 3, a.luma.end());
        CHECK(std::max(a.luma[1], a.luma[2]) > others);
    }
}
