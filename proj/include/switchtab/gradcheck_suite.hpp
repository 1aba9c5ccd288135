#pragma once

// The finite-difference verification suite: every op kind on randomized
// shapes and seeds, plus the full pre-training loss on a tiny model.

#include <cmath>
#include <string>
#include <vector>

#include "switchtab/grad_check.hpp"
#include "switchtab/losses.hpp"
#include "switchtab/model.hpp"
#include "switchtab/rng.hpp"
#include "switchtab/train.hpp"

namespace switchtab {

struct OpCheck {
    std::string name;
    double max_rel_error = 0.0;
    bool passed = false;
};

namespace detail {

inline Tensor random_check_param(std::vector<std::size_t> shape, Rng& rng,
                                 const std::string& name, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::parameter(std::move(shape), std::move(v), name);
}

}  // namespace detail

// Every op kind, `seeds` random instances each, reporting the worst case.
inline std::vector<OpCheck> run_op_grad_checks(std::size_t seeds, double tolerance = 1e-4) {
    GradCheckConfig cfg;
    cfg.tolerance = tolerance;
    std::vector<OpCheck> results;
    auto run = [&](const std::string& name,
                   const std::function<double(Rng&)>& one_seed) {
        OpCheck check{name, 0.0, true};
        for (std::uint64_t s = 1; s <= seeds; ++s) {
            Rng rng(s * 7919);
            check.max_rel_error = std::max(check.max_rel_error, one_seed(rng));
        }
        check.passed = check.max_rel_error < tolerance;
        results.push_back(check);
    };
    using detail::random_check_param;

    run("matmul", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 2 + rng.below(4)}, rng, "a");
        auto b = random_check_param({a.cols(), 2 + rng.below(4)}, rng, "b");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(matmul(p[0], p[1])));
               }, {a, b}, cfg).max_rel_error;
    });
    run("add", [&](Rng& rng) {
        const std::size_t n = 2 + rng.below(3), m = 2 + rng.below(4);
        auto a = random_check_param({n, m}, rng, "a");
        auto b = random_check_param({n, m}, rng, "b");
        auto bias = random_check_param({m}, rng, "bias");
        auto s = random_check_param({1}, rng, "s");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(add(add(add(p[0], p[1]), p[2]), p[3])));
               }, {a, b, bias, s}, cfg).max_rel_error;
    });
    run("subtract", [&](Rng& rng) {
        const std::size_t n = 2 + rng.below(3), m = 2 + rng.below(4);
        auto a = random_check_param({n, m}, rng, "a");
        auto b = random_check_param({n, m}, rng, "b");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(subtract(p[0], p[1])));
               }, {a, b}, cfg).max_rel_error;
    });
    run("multiply", [&](Rng& rng) {
        const std::size_t n = 2 + rng.below(3), m = 2 + rng.below(4);
        auto a = random_check_param({n, m}, rng, "a");
        auto b = random_check_param({n, m}, rng, "b");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(multiply(p[0], p[1])));
               }, {a, b}, cfg).max_rel_error;
    });
    run("scale", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 3}, rng, "a");
        const double factor = rng.uniform(-3.0, 3.0);
        return grad_check([factor](const std::vector<Tensor>& p) {
                   return mean_all(square(scale(p[0], factor)));
               }, {a}, cfg).max_rel_error;
    });
    run("sigmoid", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 4}, rng, "a", -3, 3);
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(sigmoid(p[0])));
               }, {a}, cfg).max_rel_error;
    });
    run("softmax", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 2 + rng.below(4)}, rng, "a", -2, 2);
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(softmax(p[0])));
               }, {a}, cfg).max_rel_error;
    });
    run("mean", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(4), 2 + rng.below(4)}, rng, "a");
        const double e0 = grad_check([](const std::vector<Tensor>& p) {
                              return square(mean_all(p[0]));
                          }, {a}, cfg).max_rel_error;
        const double e1 = grad_check([](const std::vector<Tensor>& p) {
                              return mean_all(square(mean_axis(p[0], 0)));
                          }, {a}, cfg).max_rel_error;
        const double e2 = grad_check([](const std::vector<Tensor>& p) {
                              return mean_all(square(mean_axis(p[0], 1)));
                          }, {a}, cfg).max_rel_error;
        return std::max({e0, e1, e2});
    });
    run("square", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 3}, rng, "a");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(p[0]));
               }, {a}, cfg).max_rel_error;
    });
    run("concat", [&](Rng& rng) {
        const std::size_t n = 2 + rng.below(3);
        auto a = random_check_param({n, 1 + rng.below(3)}, rng, "a");
        auto b = random_check_param({n, 1 + rng.below(3)}, rng, "b");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(concat({p[0], p[1]})));
               }, {a, b}, cfg).max_rel_error;
    });
    run("slice", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 4 + rng.below(4)}, rng, "a");
        const std::size_t off = rng.below(2), width = 2 + rng.below(2);
        return grad_check([off, width](const std::vector<Tensor>& p) {
                   return mean_all(square(slice(p[0], off, width)));
               }, {a}, cfg).max_rel_error;
    });
    run("transpose", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 2 + rng.below(4)}, rng, "a");
        auto b = random_check_param({a.rows(), 2 + rng.below(3)}, rng, "b");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(matmul(transpose(p[0]), p[1])));
               }, {a, b}, cfg).max_rel_error;
    });
    run("layer_norm", [&](Rng& rng) {
        const std::size_t n = 2 + rng.below(3), m = 3 + rng.below(4);
        auto a = random_check_param({n, m}, rng, "a");
        auto g = random_check_param({m}, rng, "gain", 0.5, 1.5);
        auto o = random_check_param({m}, rng, "offset");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(layer_norm(p[0], p[1], p[2])));
               }, {a, g, o}, cfg).max_rel_error;
    });
    run("relu", [&](Rng& rng) {
        auto a = random_check_param({2 + rng.below(3), 4}, rng, "a");
        for (double& v : a.mutable_values())
            if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;  // stay off the kink
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(relu(p[0])));
               }, {a}, cfg).max_rel_error;
    });
    run("reshape", [&](Rng& rng) {
        auto a = random_check_param({2, 6}, rng, "a");
        return grad_check([](const std::vector<Tensor>& p) {
                   return mean_all(square(reshape(p[0], {4, 3})));
               }, {a}, cfg).max_rel_error;
    });
    run("block_attention", [&](Rng& rng) {
        const std::size_t blocks = 1 + rng.below(3), len = 2 + rng.below(3),
                          width = 2 + rng.below(4);
        auto q = random_check_param({blocks * len, width}, rng, "q");
        auto k = random_check_param({blocks * len, width}, rng, "k");
        auto v = random_check_param({blocks * len, width}, rng, "v");
        const double factor = 1.0 / std::sqrt(static_cast<double>(width));
        return grad_check([len, factor](const std::vector<Tensor>& p) {
                   return mean_all(square(block_attention(p[0], p[1], p[2], len, factor)));
               }, {q, k, v}, cfg).max_rel_error;
    });
    run("cross_entropy", [&](Rng& rng) {
        const std::size_t n = 2 + rng.below(3), c = 2 + rng.below(3);
        auto logits = random_check_param({n, c}, rng, "logits", -2, 2);
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(c)));
        return grad_check([labels](const std::vector<Tensor>& p) {
                   return cross_entropy_with_logits(p[0], labels);
               }, {logits}, cfg).max_rel_error;
    });
    run("sqrt", [&](Rng& rng) {
        auto a = random_check_param({2, 3}, rng, "a", 0.5, 2.0);
        return grad_check([](const std::vector<Tensor>& p) {
                   return sqrt_scalar(mean_all(square(p[0])));
               }, {a}, cfg).max_rel_error;
    });
    return results;
}

// Full Eq.-style objective (reconstruction + alpha * prediction) through the
// tiny model: M=3, B=2, d_model=4, d_e=3.
inline OpCheck run_full_loss_grad_check(double tolerance = 1e-4) {
    ModelConfig mcfg;
    mcfg.feature_dim = 3;
    mcfg.d_model = 4;
    mcfg.n_layers = 3;
    mcfg.n_heads = 2;
    mcfg.d_ff = 8;
    mcfg.d_e = 3;
    mcfg.task = TaskKind::binary;
    mcfg.n_classes = 2;
    mcfg.seed = 12;
    auto model = SwitchTabModel::init(mcfg);
    Rng rng(99);
    auto mk = [&rng](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (double& x : v) x = rng.uniform();
        return Tensor::constant({r, c}, std::move(v));
    };
    Tensor x1 = mk(2, 3), x2 = mk(2, 3);
    Tensor c1 = mk(2, 3), c2 = mk(2, 3);
    const std::vector<int> y1{0, 1}, y2{1, 0};
    auto make_loss = [&](const std::vector<Tensor>&) {
        ForwardOutputs out = model.forward_pair(c1, c2);
        Tensor recon = recon_loss(x1, x2, out);
        Tensor cls = cls_loss(model.predict(out.z1, Head::pretrain),
                              model.predict(out.z2, Head::pretrain), y1, y2);
        return total_loss(recon, cls, 1.0);
    };
    GradCheckConfig cfg;
    cfg.tolerance = tolerance;
    GradReport report = grad_check(make_loss, model.pretrain_parameters(true), cfg);
    return {"full_loss_tiny_model", report.max_rel_error, report.passed};
}

}  // namespace switchtab
