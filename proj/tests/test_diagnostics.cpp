#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gatelab/diagnostics.hpp"
#include "gatelab/rng.hpp"

using namespace gatelab;

namespace {

TrainingTrace trace_with_norms(const std::vector<std::pair<double, double>>& norms) {
    TrainingTrace tr;
    tr.meta.n_max = 8;
    std::size_t i = 0;
    for (auto& [p, g] : norms) {
        StepRecord r;
        r.step = i;
        r.epoch = i / 2;
        r.grad_norm_prompt = p;
        r.grad_norm_gate = g;
        r.gate_grad = {g, 0.0};
        r.gate_act = {0.5, 0.5};
        r.depth_act = {0.5};
        r.l_eff = {4.0};
        tr.steps.push_back(r);
        ++i;
    }
    return tr;
}

} // namespace

TEST_CASE("magnitude gap analytic values") {
    { // constant norms 0.5 / 0.005 -> mean 2.0, std 0
        GapStats s = magnitude_gap(trace_with_norms({{0.5, 0.005}, {0.5, 0.005}}));
        CHECK(s.mean == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(s.stddev == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(s.n_included == 2);
        CHECK(s.n_excluded == 0);
    }
    { // reference point: 5.11e-1 vs 1.59e-3 -> 2.507
        GapStats s = magnitude_gap(trace_with_norms({{5.11e-1, 1.59e-3}}));
        CHECK(s.mean == doctest::Approx(std::log10(5.11e-1 / 1.59e-3)).epsilon(1e-12));
        CHECK(s.mean == doctest::Approx(2.507).epsilon(1e-3));
    }
    { // equal norms -> 0
        GapStats s = magnitude_gap(trace_with_norms({{0.25, 0.25}}));
        CHECK(s.mean == doctest::Approx(0.0).epsilon(1e-12));
    }
    { // zero gate-norm steps excluded and counted
        GapStats s = magnitude_gap(trace_with_norms({{0.5, 0.005}, {0.5, 0.0}, {0.5, 0.005}}));
        CHECK(s.mean == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(s.n_included == 2);
        CHECK(s.n_excluded == 1);
    }
    { // all excluded -> "no gate gradient signal"
        CHECK_THROWS_WITH_AS(magnitude_gap(trace_with_norms({{0.5, 0.0}})),
                             doctest::Contains("no gate gradient signal"), std::runtime_error);
    }
    { // invariance to common positive rescaling of both norms
        GapStats a = magnitude_gap(trace_with_norms({{0.4, 0.008}, {0.2, 0.001}}));
        GapStats b = magnitude_gap(trace_with_norms({{40.0, 0.8}, {20.0, 0.1}}));
        CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
        CHECK(a.stddev == doctest::Approx(b.stddev).epsilon(1e-12));
    }
}

TEST_CASE("applied magnitude gap audits the equilibrium rescaling offline") {
    // gates at activation 0.5: alpha ~ 4, so the applied gap shrinks by log10(4)
    TrainingTrace tr = trace_with_norms({{0.5, 0.005}, {0.5, 0.005}});
    for (auto& r : tr.steps) r.gate_grad = {0.003, 0.004, 0.0};
    EquilibriumConfig eq;
    eq.enabled = true;
    GapStats raw = magnitude_gap(tr);
    GapStats applied = applied_magnitude_gap(tr, eq);
    CHECK(raw.mean - applied.mean == doctest::Approx(std::log10(4.0)).epsilon(1e-6));
}

TEST_CASE("cancellation rate oracles") {
    auto trace_with_grads = [](const std::vector<std::vector<double>>& grads) {
        TrainingTrace tr;
        tr.meta.n_max = 8;
        for (std::size_t i = 0; i < grads.size(); ++i) {
            StepRecord r;
            r.step = i;
            r.gate_grad = grads[i];
            r.grad_norm_prompt = 1.0;
            r.grad_norm_gate = 1.0;
            r.gate_act = {0.5, 0.5};
            r.depth_act = {0.5};
            r.l_eff = {4.0};
            tr.steps.push_back(r);
        }
        return tr;
    };

    // alternating +v, -v -> 1.0
    CHECK(cancellation_rate(trace_with_grads({{1, 2, 0.5}, {-1, -2, -0.5}, {1, 2, 0.5}}),
                            "gate") == 1.0);
    // constant -> 0.0
    CHECK(cancellation_rate(trace_with_grads({{1, 2, 0.5}, {1, 2, 0.5}}), "gate") == 0.0);
    // positive rescaling never changes the rate
    CHECK(cancellation_rate(trace_with_grads({{1, -2, 3}, {100, -200, 300}}), "gate") == 0.0);
    // single step -> error
    CHECK_THROWS_AS(cancellation_rate(trace_with_grads({{1, 2, 0.5}}), "gate"),
                    std::invalid_argument);

    { // depth group looks at the trailing depth entries only
        TrainingTrace tr = trace_with_grads({{1, 1, 0.5}, {1, 1, -0.5}});
        // gate_grad layout here: 2 length entries then 1 depth entry
        CHECK(cancellation_rate(tr, "gate-depth") == 1.0);
        CHECK(cancellation_rate(tr, "gate-length") == 0.0);
        CHECK_THROWS_AS(cancellation_rate(tr, "bogus"), std::invalid_argument);
    }

    { // i.i.d. isotropic random gradients -> 0.5 within Monte-Carlo noise
        Rng rng(61);
        std::vector<std::vector<double>> grads(10000, std::vector<double>(4));
        for (auto& g : grads)
            for (auto& v : g) v = rng.normal(0.0, 1.0);
        const double rate = cancellation_rate(trace_with_grads(grads), "gate");
        CHECK(rate == doctest::Approx(0.5).epsilon(0.04));
        CHECK(std::abs(rate - 0.5) < 0.02);
    }
}

TEST_CASE("gate behavior series mirrors the records") {
    TrainingTrace tr;
    tr.meta.n_max = 8;
    for (std::size_t i = 0; i < 3; ++i) {
        StepRecord r;
        r.step = i;
        r.l_eff = {4.0 + i, 5.0};
        r.depth_act = {0.7, 0.6};
        r.gate_act = {0.5};
        r.gate_grad = {0.1};
        tr.steps.push_back(r);
    }
    GateSeries s = gate_behavior_series(tr);
    REQUIRE(s.l_eff.size() == 2);
    CHECK(s.l_eff[0] == std::vector<double>{4.0, 5.0, 6.0});
    CHECK(s.l_eff[1] == std::vector<double>{5.0, 5.0, 5.0});
    REQUIRE(s.depth_act.size() == 2);
    CHECK(s.depth_act[0] == std::vector<double>{0.7, 0.7, 0.7});
}

namespace {

TrainingTrace synthetic_trace(double gap_norm_gate, bool ramp_l_eff, bool drift_depth,
                              std::size_t n = 40) {
    TrainingTrace tr;
    tr.meta.n_max = 8;
    Rng rng(62);
    for (std::size_t i = 0; i < n; ++i) {
        StepRecord r;
        r.step = i;
        r.epoch = i / (n / 4);
        r.grad_norm_prompt = 0.5;
        r.grad_norm_gate = gap_norm_gate;
        const double f = static_cast<double>(i) / (n - 1);
        r.l_eff = {ramp_l_eff ? 4.0 + 4.0 * f : 5.848};
        r.depth_act = {drift_depth ? 0.5 + 0.4 * f : 0.731};
        r.gate_act = {0.731, 0.731};
        r.gate_grad = {rng.normal(0, gap_norm_gate), rng.normal(0, gap_norm_gate),
                       rng.normal(0, gap_norm_gate)};
        tr.steps.push_back(r);
    }
    return tr;
}

} // namespace

TEST_CASE("collapse detection verdicts") {
    CollapseThresholds th;

    { // flat, drift-free, large gap -> collapsed
        CollapseVerdict v = detect_collapse(synthetic_trace(0.005, false, false), th);
        CHECK(v.verdict == Verdict::Collapsed);
        CHECK(v.gap.mean == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(v.l_eff_flatness < th.flatness);
        CHECK(v.depth_drift < th.drift);
    }
    { // L_eff ramping 4 -> 8, drifting depth, gap 0.2 -> active
        CollapseVerdict v = detect_collapse(synthetic_trace(0.5 / std::pow(10.0, 0.2),
                                                            true, true), th);
        CHECK(v.verdict == Verdict::Active);
    }
    { // mixed signals -> inconclusive
        CollapseVerdict v = detect_collapse(synthetic_trace(0.005, true, false), th);
        CHECK(v.verdict == Verdict::Inconclusive);
    }
    { // frozen gates: identically zero gate gradients -> collapsed (infinite gap)
        TrainingTrace tr = synthetic_trace(0.0, false, false);
        for (auto& r : tr.steps) r.gate_grad = {0.0, 0.0, 0.0};
        CollapseVerdict v = detect_collapse(tr, th);
        CHECK(v.verdict == Verdict::Collapsed);
    }
    { // short trace -> error
        TrainingTrace tr = synthetic_trace(0.005, false, false, 40);
        tr.steps.resize(1);
        CHECK_THROWS_AS(detect_collapse(tr, th), std::invalid_argument);
    }
    { // saturation fraction reads the final record
        TrainingTrace tr = synthetic_trace(0.005, false, false);
        tr.steps.back().gate_act = {0.99, 0.5};
        tr.steps.back().depth_act = {0.02};
        CollapseVerdict v = detect_collapse(tr, th);
        CHECK(v.saturation_fraction == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
}

namespace {

double brute_force_silhouette(const Tensor& embs, const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    const std::size_t d = embs.cols();
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double v = embs.at(i, k) - embs.at(j, k);
            s += v * v;
        }
        return std::sqrt(s);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double a = 0.0;
        std::size_t na = 0;
        double b = 1e300;
        std::vector<int> classes;
        for (int l : labels)
            if (std::find(classes.begin(), classes.end(), l) == classes.end())
                classes.push_back(l);
        for (int c : classes) {
            double s = 0.0;
            std::size_t m = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j] != c || j == i) continue;
                s += dist(i, j);
                ++m;
            }
            if (c == labels[i]) {
                a = s / m;
                na = m;
            } else {
                b = std::min(b, s / m);
            }
        }
        (void)na;
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

} // namespace

TEST_CASE("representation metrics oracles") {
    { // two antipodal classes with zero spread -> silhouette 1
        Tensor embs({4, 2}, {1, 0, 1, 0, -1, 0, -1, 0});
        Tensor cls({2, 2}, {1, 0, -1, 0});
        RepMetrics m = representation_metrics(embs, {0, 0, 1, 1}, cls);
        CHECK(m.silhouette == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m.alignment == doctest::Approx(1.0).epsilon(1e-12));
    }
    { // all embeddings identical -> silhouette 0, separation 0
        Tensor embs({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
        Tensor cls({2, 2}, {1, 0, 0, 1});
        RepMetrics m = representation_metrics(embs, {0, 0, 1, 1}, cls);
        CHECK(m.silhouette == 0.0);
        CHECK(m.separation == 0.0);
    }
    { // 12-point 3-class instance vs exhaustive oracle
        Rng rng(63);
        Tensor embs({12, 5});
        std::vector<int> labels;
        for (std::size_t i = 0; i < 12; ++i) {
            const int c = static_cast<int>(i / 4);
            labels.push_back(c);
            for (std::size_t k = 0; k < 5; ++k)
                embs.at(i, k) = rng.normal(0.0, 1.0) + 3.0 * c;
        }
        Tensor cls({3, 5});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t k = 0; k < 5; ++k) cls.at(c, k) = rng.normal(0.0, 1.0);
        RepMetrics m = representation_metrics(embs, labels, cls);
        CHECK(std::abs(m.silhouette - brute_force_silhouette(embs, labels)) < 1e-12);
        CHECK(m.silhouette >= -1.0);
        CHECK(m.silhouette <= 1.0);
        CHECK(m.alignment >= -1.0);
        CHECK(m.alignment <= 1.0);
        CHECK(m.separation >= 0.0);
    }
    { // singleton class excluded from the silhouette, counted
        Tensor embs({5, 2}, {1, 0, 1.1, 0, -1, 0, -1.1, 0, 0, 5});
        Tensor cls({3, 2}, {1, 0, -1, 0, 0, 1});
        RepMetrics m = representation_metrics(embs, {0, 0, 1, 1, 2}, cls);
        CHECK(m.n_excluded == 1);
        CHECK(m.silhouette > 0.9);
    }
}
