#pragma once

#include <map>
#include <string>
#include <vector>

#include "gatelab/optimizer.hpp"
#include "gatelab/tensor.hpp"
#include "gatelab/trace.hpp"

namespace gatelab {

struct GapStats {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n_included = 0;
    std::size_t n_excluded = 0; // steps with zero gate-gradient norm
};

// Per-step log10(|grad prompt| / |grad gate|) over raw recorded gradients.
GapStats magnitude_gap(const TrainingTrace& trace);

// Same statistic after applying the equilibrium rescaling offline to the
// recorded raw gate gradients, using the stored activations. Lets the
// rescaling's effect be audited without contaminating the trace itself.
GapStats applied_magnitude_gap(const TrainingTrace& trace, const EquilibriumConfig& eq);

// Fraction of consecutive step pairs whose group gradient vectors point in
// opposing directions (negative inner product).
// group: "gate" (all gate logits), "gate-length", or "gate-depth".
double cancellation_rate(const TrainingTrace& trace, const std::string& group);

struct GateSeries {
    std::vector<std::vector<double>> l_eff;     // [layer][record]
    std::vector<std::vector<double>> depth_act; // [layer][record]
};

GateSeries gate_behavior_series(const TrainingTrace& trace);

struct CollapseThresholds {
    double flatness = 0.01; // std(L_eff, final half) / n_max
    double drift = 0.02;    // max |w_d(t) - w_d(0)|
    double gap = 1.5;       // log10 prompt/gate gradient-norm ratio
};

enum class Verdict { Collapsed, Active, Inconclusive };

const char* verdict_name(Verdict v);

struct CollapseVerdict {
    GapStats gap;
    std::map<std::string, double> cancellation; // per group
    double l_eff_flatness = 0.0;
    double depth_drift = 0.0;
    double saturation_fraction = 0.0; // final-step gates with act outside [0.05, 0.95]
    Verdict verdict = Verdict::Inconclusive;
};

// Collapsed iff flat AND drift-free AND gap above threshold; active iff all
// three reversed; inconclusive otherwise. A trace whose gate gradients are
// identically zero has an infinite gap and counts as collapsed.
CollapseVerdict detect_collapse(const TrainingTrace& trace, const CollapseThresholds& thresholds);

struct RepMetrics {
    double alignment = 0.0;  // mean cosine(image emb, matched class emb)
    double silhouette = 0.0; // mean silhouette coefficient, Euclidean
    double separation = 0.0; // mean centroid gap / mean within-class spread
    std::size_t n_excluded = 0; // singleton-class samples dropped from silhouette
};

// image_embs: (n, d); labels: n class ids; class_embs: (C, d).
RepMetrics representation_metrics(const Tensor& image_embs, const std::vector<int>& labels,
                                  const Tensor& class_embs);

} // namespace gatelab
