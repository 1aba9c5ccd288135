#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "switchtab/grad_check.hpp"
#include "switchtab/losses.hpp"
#include "switchtab/optim.hpp"
#include "switchtab/train.hpp"

using namespace switchtab;

namespace {

Tensor rnd(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.uniform();
    return Tensor::constant({r, c}, std::move(v));
}

ForwardOutputs outputs_equal_to(const Tensor& x1, const Tensor& x2) {
    ForwardOutputs out;
    out.recovered1 = x1;
    out.recovered2 = x2;
    out.switched1 = x1;
    out.switched2 = x2;
    return out;
}

// threshold-separable two-feature matrix, labels decided by the first feature
FeatureMatrix separable_matrix(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    FeatureMatrix m;
    m.n = n;
    m.M = 2;
    m.task = TaskKind::binary;
    m.n_classes = 2;
    std::vector<double> labels;
    for (std::size_t i = 0; i < n; ++i) {
        const bool hi = i % 2 == 1;
        m.values.push_back(hi ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.3));
        m.values.push_back(rng.uniform());
        labels.push_back(hi ? 1.0 : 0.0);
    }
    m.labels = labels;
    m.pools = {{0.1, 0.9}, {0.5}};
    m.column_names = {"a", "b"};
    return m;
}

ModelConfig tiny_config(std::size_t m = 3) {
    ModelConfig cfg;
    cfg.feature_dim = m;
    cfg.d_model = 4;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.d_e = 3;
    cfg.task = TaskKind::binary;
    cfg.n_classes = 2;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("recon_loss is zero when reconstructions equal targets") {
    Tensor x1 = rnd(3, 4, 1), x2 = rnd(3, 4, 2);
    CHECK(recon_loss(x1, x2, outputs_equal_to(x1, x2)).item() == 0.0);
}

TEST_CASE("recon_loss of a single (1,0) residual term is 0.5") {
    Tensor x1 = Tensor::constant({1, 2}, {0.3, 0.7});
    Tensor x2 = Tensor::constant({1, 2}, {0.1, 0.9});
    ForwardOutputs out = outputs_equal_to(x1, x2);
    out.switched1 = Tensor::constant({1, 2}, {0.3 - 1.0, 0.7});  // differs by (1, 0)
    CHECK(recon_loss(x1, x2, out).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("recon_loss equals the sum of four independent MSE terms") {
    Tensor x1 = rnd(4, 5, 3), x2 = rnd(4, 5, 4);
    ForwardOutputs out;
    out.recovered1 = rnd(4, 5, 5);
    out.recovered2 = rnd(4, 5, 6);
    out.switched1 = rnd(4, 5, 7);
    out.switched2 = rnd(4, 5, 8);
    auto hand_mse = [](const Tensor& a, const Tensor& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double d = a.values()[i] - b.values()[i];
            s += d * d;
        }
        return s / static_cast<double>(a.numel());
    };
    const double expected = hand_mse(x1, out.switched1) + hand_mse(x2, out.switched2) +
                            hand_mse(x1, out.recovered1) + hand_mse(x2, out.recovered2);
    CHECK(recon_loss(x1, x2, out).item() == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("recon_loss without switching keeps only the recovered terms") {
    Tensor x1 = rnd(2, 3, 9), x2 = rnd(2, 3, 10);
    ForwardOutputs out;
    out.recovered1 = rnd(2, 3, 11);
    out.recovered2 = rnd(2, 3, 12);
    // no switched reconstructions at all
    ReconLossParts parts = recon_loss_parts(x1, x2, out, false);
    CHECK(parts.total.item() == doctest::Approx(parts.recovered.item()));
    CHECK_FALSE(parts.switched.valid());
}

TEST_CASE("loss targets are the originals, not the corrupted inputs") {
    // reconstructions equal the originals => zero loss no matter what the
    // encoder saw
    Tensor x1 = rnd(2, 4, 13), x2 = rnd(2, 4, 14);
    CHECK(recon_loss(x1, x2, outputs_equal_to(x1, x2)).item() == 0.0);
}

TEST_CASE("cls_loss hand values") {
    Tensor sure = Tensor::constant({1, 2}, {50.0, -50.0});
    CHECK(cls_loss(sure, sure, {0}, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));
    Tensor uniform = Tensor::constant({1, 2}, {0.0, 0.0});
    CHECK(cls_loss(uniform, uniform, {0}, {1}).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
    Tensor pred = Tensor::constant({2, 1}, {0.25, 0.75});
    CHECK(cls_loss_regression(pred, pred, {0.25, 0.75}, {0.25, 0.75}).item() == 0.0);
}

TEST_CASE("total_loss arithmetic") {
    Tensor recon = Tensor::scalar(0.5);
    Tensor cls = Tensor::scalar(0.7);
    CHECK(total_loss(recon, cls, 1.0).item() == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(total_loss(recon, cls, 0.0).item() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(total_loss(recon, cls, 2.0).item() == doctest::Approx(1.9).epsilon(1e-15));
    CHECK(total_loss(recon, std::nullopt, 1.0).item() == doctest::Approx(0.5));
    CHECK_THROWS_AS((void)total_loss(recon, cls, -1.0), DataError);
}

TEST_CASE("total_loss is monotone in alpha") {
    Tensor recon = Tensor::scalar(0.3);
    Tensor cls = Tensor::scalar(0.4);
    double prev = 0.0;
    for (double alpha : {0.0, 0.5, 1.0, 2.0, 5.0}) {
        const double v = total_loss(recon, cls, alpha).item();
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("rmsprop: zero gradient leaves parameters unchanged") {
    Tensor w = Tensor::parameter({2}, {1.0, -2.0}, "w");
    std::vector<Tensor> params{w};
    RmsProp opt(params);
    opt.step(params, 0.1);
    CHECK(w.values() == std::vector<double>{1.0, -2.0});
}

TEST_CASE("rmsprop first step matches the closed form") {
    Tensor w = Tensor::parameter({1}, {0.0}, "w");
    std::vector<Tensor> params{w};
    RmsProp opt(params);
    w.mutable_grad()[0] = 1.0;
    opt.step(params, 0.1);
    const double expected = -0.1 / (std::sqrt(0.1) + 1e-8);
    CHECK(w.values()[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(w.values()[0] + 0.31623) < 1e-5);
    CHECK(w.grad()[0] == 0.0);  // gradients zeroed after the step
}

TEST_CASE("rmsprop two consecutive unit-gradient steps match a hand trace") {
    Tensor w = Tensor::parameter({1}, {0.0}, "w");
    std::vector<Tensor> params{w};
    RmsProp opt(params);
    // hand trace: acc1 = 0.1, acc2 = 0.9*0.1 + 0.1 = 0.19
    double theta = 0.0, acc = 0.0;
    for (int s = 0; s < 2; ++s) {
        acc = 0.9 * acc + 0.1 * 1.0;
        theta -= 0.05 / (std::sqrt(acc) + 1e-8);
    }
    for (int s = 0; s < 2; ++s) {
        w.mutable_grad()[0] = 1.0;
        opt.step(params, 0.05);
    }
    CHECK(w.values()[0] == doctest::Approx(theta).epsilon(1e-14));
}

TEST_CASE("adam: zero gradients keep parameters fixed, first step is ~lr") {
    Tensor w = Tensor::parameter({2}, {0.5, -0.5}, "w");
    std::vector<Tensor> params{w};
    {
        Adam opt(params);
        opt.step(params, 0.01);
        CHECK(w.values() == std::vector<double>{0.5, -0.5});
    }
    Adam opt(params);
    w.mutable_grad() = {0.003, -42.0};
    opt.step(params, 0.01);
    CHECK(std::abs(std::abs(w.values()[0] - 0.5) - 0.01) < 1e-5);
    CHECK(std::abs(std::abs(w.values()[1] + 0.5) - 0.01) < 1e-5);
}

TEST_CASE("adam three-step trace on gradients (1, 1, -1) matches the oracle") {
    Tensor w = Tensor::parameter({1}, {0.0}, "w");
    std::vector<Tensor> params{w};
    Adam opt(params);
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double theta = 0.0, m = 0.0, v = 0.0;
    const double gs[3] = {1.0, 1.0, -1.0};
    for (int t = 1; t <= 3; ++t) {
        const double g = gs[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
        w.mutable_grad()[0] = g;
        opt.step(params, lr);
    }
    CHECK(w.values()[0] == doctest::Approx(theta).epsilon(1e-14));
}

TEST_CASE("a step with zero learning rate changes no parameter") {
    Tensor w1 = Tensor::parameter({3}, {1.0, 2.0, 3.0}, "w1");
    Tensor w2 = Tensor::parameter({3}, {1.0, 2.0, 3.0}, "w2");
    std::vector<Tensor> p1{w1}, p2{w2};
    RmsProp rms(p1);
    Adam adam(p2);
    w1.mutable_grad() = {0.5, -1.5, 2.5};
    w2.mutable_grad() = {0.5, -1.5, 2.5};
    rms.step(p1, 0.0);
    adam.step(p2, 0.0);
    CHECK(w1.values() == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(w2.values() == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("optimizers reject non-finite gradients without touching parameters") {
    Tensor w = Tensor::parameter({2}, {1.0, 2.0}, "w");
    std::vector<Tensor> params{w};
    RmsProp opt(params);
    w.mutable_grad() = {1.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(opt.step(params, 0.1), NumericError);
    CHECK(w.values() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("full pretraining loss passes grad_check on a tiny model") {
    ModelConfig mcfg = tiny_config();
    auto model = SwitchTabModel::init(mcfg);
    Tensor x1 = rnd(2, 3, 21), x2 = rnd(2, 3, 22);
    Tensor c1 = rnd(2, 3, 23), c2 = rnd(2, 3, 24);  // stand-ins for corrupted inputs
    const std::vector<int> y1{0, 1}, y2{1, 0};
    auto make_loss = [&](const std::vector<Tensor>&) {
        ForwardOutputs out = model.forward_pair(c1, c2);
        Tensor recon = recon_loss(x1, x2, out);
        Tensor cls = cls_loss(model.predict(out.z1, Head::pretrain),
                              model.predict(out.z2, Head::pretrain), y1, y2);
        return total_loss(recon, cls, 1.0);
    };
    GradReport report = grad_check(make_loss, model.pretrain_parameters(true));
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("pretrain with zero epochs returns the initialized model") {
    FeatureMatrix m = separable_matrix(8, 2);
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    TrainConfig tcfg;
    tcfg.pretrain_epochs = 0;
    tcfg.batch_size = 4;
    auto result = pretrain(m, tcfg, mcfg);
    auto fresh = SwitchTabModel::init(mcfg);
    auto a = result.model.parameters(), b = fresh.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values() == b[i].values());
    CHECK(result.log.epochs.empty());
}

TEST_CASE("pretrain is bit-deterministic given the seed") {
    FeatureMatrix m = separable_matrix(12, 3);
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    TrainConfig tcfg;
    tcfg.pretrain_epochs = 5;
    tcfg.batch_size = 4;
    tcfg.label_assisted = true;
    tcfg.seed = 11;
    auto r1 = pretrain(m, tcfg, mcfg);
    auto r2 = pretrain(m, tcfg, mcfg);
    auto a = r1.model.parameters(), b = r2.model.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values() == b[i].values());
    REQUIRE(r1.log.epochs.size() == r2.log.epochs.size());
    for (std::size_t e = 0; e < r1.log.epochs.size(); ++e)
        CHECK(r1.log.epochs[e].total == r2.log.epochs[e].total);
}

TEST_CASE("pretraining reduces the reconstruction loss") {
    FeatureMatrix m = separable_matrix(24, 4);
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    mcfg.seed = 5;
    TrainConfig tcfg;
    tcfg.pretrain_epochs = 40;
    tcfg.batch_size = 8;
    tcfg.pretrain_lr = 0.003;
    auto result = pretrain(m, tcfg, mcfg);
    const auto& log = result.log.epochs;
    const double first = log.front().recon_recovered + log.front().recon_switched;
    const double last = log.back().recon_recovered + log.back().recon_switched;
    CHECK(last < first);
}

TEST_CASE("no-switch pretraining logs no switched term") {
    FeatureMatrix m = separable_matrix(12, 5);
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    TrainConfig tcfg;
    tcfg.pretrain_epochs = 2;
    tcfg.batch_size = 4;
    tcfg.switching = false;
    auto result = pretrain(m, tcfg, mcfg);
    CHECK_FALSE(result.log.switching);
    for (const auto& r : result.log.epochs) CHECK(r.recon_switched == 0.0);
    const std::string csv = result.log.to_csv();
    CHECK(csv.find("recon_switched") == std::string::npos);
}

TEST_CASE("finetune reaches high accuracy on separable data") {
    FeatureMatrix m = separable_matrix(80, 6);
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    auto base = SwitchTabModel::init(mcfg);
    TrainConfig tcfg;
    tcfg.finetune_epochs = 200;
    tcfg.batch_size = 16;
    tcfg.seed = 7;
    auto result = finetune(base, m, tcfg);
    CHECK(result.best_val_metric >= 0.95);
    CHECK(result.log.epochs.size() >= 1);
}

TEST_CASE("finetune returns the best-validation model, not the last") {
    FeatureMatrix m = separable_matrix(40, 8);
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    auto base = SwitchTabModel::init(mcfg);
    TrainConfig tcfg;
    tcfg.finetune_epochs = 30;
    tcfg.batch_size = 8;
    tcfg.patience = 5;
    auto result = finetune(base, m, tcfg);
    double best_seen = -1.0;
    for (const auto& r : result.log.epochs) best_seen = std::max(best_seen, *r.val_metric);
    CHECK(result.best_val_metric == doctest::Approx(best_seen));
    // the returned model reproduces the best metric
    Rng rng(tcfg.seed);
    auto split = rng.permutation(m.n);
    std::vector<std::size_t> val(split.begin() + 32, split.end());
    const double replay = detail::validation_metric(result.model, m, val, true);
    CHECK(replay == doctest::Approx(result.best_val_metric));
}

TEST_CASE("finetune with zero epochs is an error") {
    FeatureMatrix m = separable_matrix(10, 9);
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    auto base = SwitchTabModel::init(mcfg);
    TrainConfig tcfg;
    tcfg.finetune_epochs = 0;
    CHECK_THROWS_WITH_AS(finetune(base, m, tcfg), "finetune: nothing to train (0 epochs)",
                         DataError);
}

TEST_CASE("finetune without labels is an error") {
    FeatureMatrix m = separable_matrix(10, 10);
    m.labels.reset();
    ModelConfig mcfg = tiny_config(2);
    mcfg.d_e = 2;
    auto base = SwitchTabModel::init(mcfg);
    TrainConfig tcfg;
    CHECK_THROWS_AS(finetune(base, m, tcfg), DataError);
}

TEST_CASE("every pretrain parameter receives gradient on some seed") {
    // no dead parameters in the Eq.1 + Eq.2 objective
    std::vector<bool> touched;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ModelConfig mcfg = tiny_config();
        mcfg.seed = seed;
        auto model = SwitchTabModel::init(mcfg);
        Tensor c1 = rnd(2, 3, seed * 31), c2 = rnd(2, 3, seed * 37);
        Tensor x1 = rnd(2, 3, seed * 41), x2 = rnd(2, 3, seed * 43);
        ForwardOutputs out = model.forward_pair(c1, c2);
        Tensor recon = recon_loss(x1, x2, out);
        Tensor cls = cls_loss(model.predict(out.z1, Head::pretrain),
                              model.predict(out.z2, Head::pretrain), {0, 1}, {1, 0});
        backward(total_loss(recon, cls, 1.0));
        auto params = model.pretrain_parameters(true);
        if (touched.empty()) touched.assign(params.size(), false);
        for (std::size_t i = 0; i < params.size(); ++i)
            for (double g : params[i].grad())
                if (g != 0.0) touched[i] = true;
    }
    for (std::size_t i = 0; i < touched.size(); ++i) CHECK_MESSAGE(touched[i], "param ", i);
}
