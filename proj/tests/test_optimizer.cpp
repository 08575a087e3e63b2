#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gatelab/optimizer.hpp"
#include "gatelab/rng.hpp"

using namespace gatelab;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.normal(0.0, scale);
    return t;
}

double map_norm(const GradientMap& g) {
    double sq = 0.0;
    for (auto& [name, t] : g)
        for (double v : t.vec()) sq += v * v;
    return std::sqrt(sq);
}

} // namespace

TEST_CASE("equilibrium scale analytic values") {
    EquilibriumConfig eq;
    eq.enabled = true;

    { // g = 0: alpha = 1 / (0.25 + 1e-8) ~ 4.0
        Tensor scaled = equilibrium_scale(Tensor::scalar(0.0), Tensor::scalar(0.01), eq);
        CHECK(scaled.item() == doctest::Approx(0.04).epsilon(1e-6));
        const double alpha = scaled.item() / 0.01;
        CHECK(std::abs(alpha - 4.0) < 1e-6);
    }
    { // g = 1: alpha = 1 / (sigma(1) sigma(-1) + 1e-8) = 5.0863
        Tensor scaled = equilibrium_scale(Tensor::scalar(1.0), Tensor::scalar(1.0), eq);
        const double s = 1.0 / (1.0 + std::exp(-1.0));
        CHECK(scaled.item() == doctest::Approx(1.0 / (s * (1.0 - s) + 1e-8)).epsilon(1e-12));
        CHECK(scaled.item() == doctest::Approx(5.0863).epsilon(1e-4));
    }
    { // sigma(g) = 0.99: unclamped alpha ~ 101, clamped to 10
        const double g = std::log(0.99 / 0.01);
        Tensor scaled = equilibrium_scale(Tensor::scalar(g), Tensor::scalar(1.0), eq);
        CHECK(scaled.item() == doctest::Approx(10.0).epsilon(1e-12));
    }
    { // magnitude never exceeds max_scale * |raw|
        Rng rng(51);
        for (int i = 0; i < 1000; ++i) {
            const double g = rng.normal(0.0, 5.0);
            const double raw = rng.normal(0.0, 1.0);
            Tensor scaled = equilibrium_scale(Tensor::scalar(g), Tensor::scalar(raw), eq);
            CHECK(std::abs(scaled.item()) <= eq.max_scale * std::abs(raw) + 1e-15);
        }
    }
    { // shape mismatch and invalid config
        CHECK_THROWS_AS(equilibrium_scale(Tensor({2}), Tensor({3}), eq), std::invalid_argument);
        EquilibriumConfig bad = eq;
        bad.epsilon = 0.0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        EquilibriumConfig bad2 = eq;
        bad2.max_scale = 0.5;
        CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
    }
}

TEST_CASE("gradient clipping") {
    Rng rng(52);
    { // below the threshold: unchanged
        GradientMap g{{"a", Tensor({2}, {0.3, 0.4})}}; // norm 0.5
        GradientMap before = g;
        clip_gradients(g, 1.0);
        CHECK(g.at("a").vec() == before.at("a").vec());
    }
    { // norm 2 clipped to 1: all entries halved
        GradientMap g{{"a", Tensor({2}, {1.2, 1.6})}}; // norm 2.0
        clip_gradients(g, 1.0);
        CHECK(g.at("a")[0] == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(g.at("a")[1] == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(map_norm(g) == doctest::Approx(1.0).epsilon(1e-12));
    }
    { // random map: post-clip norm == min(pre, max); idempotent
        for (int trial = 0; trial < 20; ++trial) {
            GradientMap g{{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({5}, rng)}};
            const double pre = map_norm(g);
            clip_gradients(g, 1.0);
            CHECK(map_norm(g) == doctest::Approx(std::min(pre, 1.0)).epsilon(1e-12));
            GradientMap once = g;
            clip_gradients(g, 1.0);
            for (auto& [name, t] : g)
                for (std::size_t i = 0; i < t.numel(); ++i)
                    CHECK(t[i] == once.at(name)[i]);
        }
    }
    {
        GradientMap g;
        CHECK_THROWS_AS(clip_gradients(g, 0.0), std::invalid_argument);
    }
}

TEST_CASE("temperature annealing endpoints and midpoint") {
    TemperatureSchedule sch;
    sch.enabled = true;
    sch.tau_start = 2.0;
    sch.tau_end = 0.5;
    sch.anneal_epochs = 8;
    CHECK(anneal_temperature(0, sch) == 2.0);
    CHECK(anneal_temperature(4, sch) == doctest::Approx(1.25).epsilon(1e-12)); // midpoint
    CHECK(anneal_temperature(8, sch) == 0.5);
    CHECK(anneal_temperature(100, sch) == 0.5);

    TemperatureSchedule off;
    CHECK(anneal_temperature(3, off) == 1.0);
}

TEST_CASE("gate initialization kinds") {
    GateInitConfig cfg;
    { // paper default: all 1.0
        Tensor t = init_gates(GateInitKind::Default, {4, 8}, cfg, 9);
        for (double v : t.vec()) CHECK(v == 1.0);
    }
    { // zero
        Tensor t = init_gates(GateInitKind::Zero, {4}, cfg, 9);
        for (double v : t.vec()) CHECK(v == 0.0);
    }
    { // uniform: reproducible, within bounds
        cfg.uniform_lo = -1.0;
        cfg.uniform_hi = 1.0;
        Tensor a = init_gates(GateInitKind::Uniform, {32}, cfg, 9);
        Tensor b = init_gates(GateInitKind::Uniform, {32}, cfg, 9);
        Tensor c = init_gates(GateInitKind::Uniform, {32}, cfg, 10);
        CHECK(a.vec() == b.vec());
        CHECK(a.vec() != c.vec());
        for (double v : a.vec()) {
            CHECK(v >= -1.0);
            CHECK(v < 1.0);
        }
        GateInitConfig bad = cfg;
        bad.uniform_lo = 2.0;
        CHECK_THROWS_AS(init_gates(GateInitKind::Uniform, {4}, bad, 9), std::invalid_argument);
    }
    { // biased constant
        cfg.bias = -2.5;
        Tensor t = init_gates(GateInitKind::Biased, {4}, cfg, 9);
        for (double v : t.vec()) CHECK(v == -2.5);
    }
}

TEST_CASE("sgd step basics and the 50x gate multiplier") {
    OptimizerConfig cfg;
    cfg.base_lr = 0.1;
    { // single scalar: lr 0.1, grad 2.0 -> decrease by 0.2
        ParamStore ps;
        ps.add("w", ParamGroup::Prompt, Tensor::scalar(1.0));
        Optimizer opt(cfg);
        opt.step(ps, {{"w", Tensor::scalar(2.0)}}, 0);
        CHECK(ps.get("w").value.item() == doctest::Approx(0.8).epsilon(1e-12));
    }
    { // equal grads: gate update is exactly multiplier x prompt update
        OptimizerConfig c50 = cfg;
        c50.gate_lr_multiplier = 50.0;
        ParamStore ps;
        ps.add("p", ParamGroup::Prompt, Tensor::scalar(0.0));
        ps.add("g", ParamGroup::Gate, Tensor::scalar(0.0));
        Optimizer opt(c50);
        opt.step(ps, {{"p", Tensor::scalar(1.0)}, {"g", Tensor::scalar(1.0)}}, 0);
        CHECK(ps.get("g").value.item() == doctest::Approx(50.0 * ps.get("p").value.item())
                                              .epsilon(1e-12));
    }
    { // weight decay: p -= lr (grad + wd p)
        OptimizerConfig cw = cfg;
        cw.weight_decay[ParamGroup::Prompt] = 0.5;
        ParamStore ps;
        ps.add("p", ParamGroup::Prompt, Tensor::scalar(2.0));
        Optimizer opt(cw);
        opt.step(ps, {{"p", Tensor::scalar(0.0)}}, 0);
        CHECK(ps.get("p").value.item() == doctest::Approx(2.0 - 0.1 * 1.0).epsilon(1e-12));
    }
}

TEST_CASE("vanilla sgd converges to the analytic quadratic minimum") {
    // f(w) = 0.5 * sum_i a_i (w_i - b_i)^2, minimum at w = b
    Rng rng(53);
    const std::size_t n = 6;
    Tensor a({n}), b({n});
    for (auto& v : a.vec()) v = 0.5 + rng.next_double();
    for (auto& v : b.vec()) v = rng.normal(0.0, 2.0);

    OptimizerConfig cfg;
    cfg.base_lr = 0.3;
    ParamStore ps;
    ps.add("w", ParamGroup::Prompt, Tensor({n}));
    Optimizer opt(cfg);
    for (int it = 0; it < 200; ++it) {
        Tensor grad({n});
        for (std::size_t i = 0; i < n; ++i)
            grad[i] = a[i] * (ps.get("w").value[i] - b[i]);
        opt.step(ps, {{"w", grad}}, 0);
    }
    for (std::size_t i = 0; i < n; ++i)
        CHECK(std::abs(ps.get("w").value[i] - b[i]) < 1e-6);
}

TEST_CASE("phase schedule activates the declared groups only") {
    OptimizerConfig cfg;
    cfg.phased = true; // default 3-stage schedule
    Optimizer opt(cfg);
    CHECK(opt.active_groups(0) ==
          std::set<ParamGroup>{ParamGroup::Prompt, ParamGroup::Coupling});
    CHECK(opt.active_groups(1) ==
          std::set<ParamGroup>{ParamGroup::Prompt, ParamGroup::Coupling});
    CHECK(opt.active_groups(2) == std::set<ParamGroup>{ParamGroup::Gate, ParamGroup::GateNet});
    CHECK(opt.active_groups(4).size() == 4);
    CHECK(opt.active_groups(99).size() == 4);

    // inactive parameters are bit-identical across a step
    ParamStore ps;
    ps.add("p", ParamGroup::Prompt, Tensor::scalar(1.0));
    ps.add("g", ParamGroup::Gate, Tensor::scalar(1.0));
    Optimizer o2(cfg);
    o2.step(ps, {{"p", Tensor::scalar(1.0)}, {"g", Tensor::scalar(1.0)}}, 2); // gate-only
    CHECK(ps.get("p").value.item() == 1.0);
    CHECK(ps.get("g").value.item() != 1.0);

    // custom span, open-ended
    OptimizerConfig cc;
    cc.phased = true;
    cc.phases = {{0, -1, {ParamGroup::Gate}}};
    Optimizer o3(cc);
    CHECK(o3.active_groups(1000) == std::set<ParamGroup>{ParamGroup::Gate});
}

TEST_CASE("equilibrium is applied to gate grads before clipping") {
    OptimizerConfig cfg;
    cfg.base_lr = 1.0;
    cfg.equilibrium.enabled = true;
    cfg.clip_max_norm = 1.0;
    ParamStore ps;
    ps.add("g", ParamGroup::Gate, Tensor::scalar(0.0)); // alpha ~ 4
    Optimizer opt(cfg);
    opt.step(ps, {{"g", Tensor::scalar(0.5)}}, 0);
    // raw 0.5 -> equilibrium 2.0 -> clip to 1.0; applied update = lr * 1.0
    CHECK(ps.get("g").value.item() == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("adaptive-moment step moves against the gradient with decoupled decay") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::AdaptiveMoment;
    cfg.base_lr = 0.01;
    ParamStore ps;
    ps.add("w", ParamGroup::Prompt, Tensor::scalar(1.0));
    Optimizer opt(cfg);
    opt.step(ps, {{"w", Tensor::scalar(3.0)}}, 0);
    // first step of adam moves by ~lr regardless of gradient magnitude
    CHECK(ps.get("w").value.item() == doctest::Approx(1.0 - 0.01).epsilon(1e-6));

    // decoupled weight decay shrinks the weight even with zero gradient history
    OptimizerConfig cw = cfg;
    cw.weight_decay[ParamGroup::Prompt] = 0.1;
    ParamStore ps2;
    ps2.add("w", ParamGroup::Prompt, Tensor::scalar(1.0));
    Optimizer o2(cw);
    o2.step(ps2, {{"w", Tensor::scalar(0.0)}}, 0);
    CHECK(ps2.get("w").value.item() == doctest::Approx(1.0 - 0.01 * 0.1).epsilon(1e-9));

    // quadratic convergence sanity for adam as well
    ParamStore ps3;
    ps3.add("w", ParamGroup::Prompt, Tensor::scalar(5.0));
    OptimizerConfig cq = cfg;
    cq.base_lr = 0.05;
    Optimizer o3(cq);
    for (int it = 0; it < 2000; ++it) {
        const double g = ps3.get("w").value.item() - 2.0;
        o3.step(ps3, {{"w", Tensor::scalar(g)}}, 0);
    }
    CHECK(std::abs(ps3.get("w").value.item() - 2.0) < 1e-3);
}

TEST_CASE("step rejects malformed input") {
    OptimizerConfig cfg;
    ParamStore ps;
    ps.add("w", ParamGroup::Prompt, Tensor({2}));
    ps.add("f", ParamGroup::Gate, Tensor({2}), /*frozen=*/true);
    Optimizer opt(cfg);
    GradientMap wrong{{"w", Tensor({3})}};
    CHECK_THROWS_AS(opt.step(ps, wrong, 0), std::invalid_argument);
    GradientMap frozen{{"f", Tensor({2})}};
    CHECK_THROWS_AS(opt.step(ps, frozen, 0), std::logic_error);

    OptimizerConfig bad;
    bad.base_lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
