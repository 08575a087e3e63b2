#include "gatelab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gatelab {

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

GapStats gap_from_norms(const std::vector<double>& prompt, const std::vector<double>& gate) {
    GapStats stats;
    std::vector<double> gaps;
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        if (gate[i] == 0.0) {
            ++stats.n_excluded;
            continue;
        }
        gaps.push_back(std::log10(prompt[i] / gate[i]));
    }
    if (gaps.empty()) throw std::runtime_error("magnitude_gap: no gate gradient signal");
    stats.mean = mean_of(gaps);
    stats.stddev = std_of(gaps);
    stats.n_included = gaps.size();
    return stats;
}

// Portion of the flattened gate-gradient vector belonging to a group. Depth
// gates occupy the trailing depth_act.size() entries; everything before them
// is a length or context gate.
std::pair<std::size_t, std::size_t> group_range(const StepRecord& r, const std::string& group) {
    const std::size_t total = r.gate_grad.size();
    const std::size_t n_depth = std::min(r.depth_act.size(), total);
    if (group == "gate") return {0, total};
    if (group == "gate-length") return {0, total - n_depth};
    if (group == "gate-depth") return {total - n_depth, total};
    throw std::invalid_argument("cancellation_rate: unknown group '" + group + "'");
}

} // namespace

GapStats magnitude_gap(const TrainingTrace& trace) {
    if (trace.steps.empty()) throw std::invalid_argument("magnitude_gap: empty trace");
    std::vector<double> prompt, gate;
    for (const auto& r : trace.steps) {
        prompt.push_back(r.grad_norm_prompt);
        gate.push_back(r.grad_norm_gate);
    }
    return gap_from_norms(prompt, gate);
}

GapStats applied_magnitude_gap(const TrainingTrace& trace, const EquilibriumConfig& eq) {
    if (trace.steps.empty()) throw std::invalid_argument("applied_magnitude_gap: empty trace");
    std::vector<double> prompt, gate;
    for (const auto& r : trace.steps) {
        std::vector<double> act = r.gate_act;
        act.insert(act.end(), r.depth_act.begin(), r.depth_act.end());
        if (act.size() != r.gate_grad.size())
            throw std::runtime_error("applied_magnitude_gap: activation/gradient size mismatch");
        double sq = 0.0;
        for (std::size_t i = 0; i < act.size(); ++i) {
            double g = r.gate_grad[i];
            if (eq.enabled) {
                const double deriv = act[i] * (1.0 - act[i]);
                g *= std::min(1.0 / (deriv + eq.epsilon), eq.max_scale);
            }
            sq += g * g;
        }
        prompt.push_back(r.grad_norm_prompt);
        gate.push_back(std::sqrt(sq));
    }
    return gap_from_norms(prompt, gate);
}

double cancellation_rate(const TrainingTrace& trace, const std::string& group) {
    if (trace.steps.size() < 2)
        throw std::invalid_argument("cancellation_rate: need at least 2 recorded steps");
    std::size_t negatives = 0, pairs = 0;
    for (std::size_t t = 1; t < trace.steps.size(); ++t) {
        const auto& a = trace.steps[t - 1];
        const auto& b = trace.steps[t];
        if (a.gate_grad.size() != b.gate_grad.size())
            throw std::runtime_error("cancellation_rate: inconsistent gate vector sizes");
        auto [lo, hi] = group_range(a, group);
        if (lo == hi) throw std::invalid_argument("cancellation_rate: group '" + group +
                                                  "' has no gates in this trace");
        double dot = 0.0;
        for (std::size_t i = lo; i < hi; ++i) dot += a.gate_grad[i] * b.gate_grad[i];
        if (dot < 0.0) ++negatives;
        ++pairs;
    }
    return static_cast<double>(negatives) / static_cast<double>(pairs);
}

GateSeries gate_behavior_series(const TrainingTrace& trace) {
    if (trace.steps.empty()) throw std::invalid_argument("gate_behavior_series: empty trace");
    GateSeries series;
    series.l_eff.resize(trace.steps.front().l_eff.size());
    series.depth_act.resize(trace.steps.front().depth_act.size());
    for (const auto& r : trace.steps) {
        if (r.l_eff.size() != series.l_eff.size() || r.depth_act.size() != series.depth_act.size())
            throw std::runtime_error("gate_behavior_series: inconsistent layer counts");
        for (std::size_t d = 0; d < r.l_eff.size(); ++d) series.l_eff[d].push_back(r.l_eff[d]);
        for (std::size_t d = 0; d < r.depth_act.size(); ++d)
            series.depth_act[d].push_back(r.depth_act[d]);
    }
    return series;
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Collapsed: return "collapsed";
        case Verdict::Active: return "active";
        default: return "inconclusive";
    }
}

CollapseVerdict detect_collapse(const TrainingTrace& trace, const CollapseThresholds& th) {
    if (trace.steps.size() < 2)
        throw std::invalid_argument("detect_collapse: need at least 2 recorded steps");
    if (trace.steps.back().epoch == trace.steps.front().epoch)
        throw std::invalid_argument("detect_collapse: trace must span at least 2 epochs");
    if (trace.steps.front().gate_grad.empty())
        throw std::invalid_argument("detect_collapse: no gate parameters in trace");

    CollapseVerdict out;
    bool infinite_gap = false;
    try {
        out.gap = magnitude_gap(trace);
    } catch (const std::runtime_error&) {
        // Gates never received gradient: the gap is unbounded.
        out.gap.mean = std::numeric_limits<double>::infinity();
        out.gap.n_excluded = trace.steps.size();
        infinite_gap = true;
    }

    for (const char* group : {"gate", "gate-length", "gate-depth"}) {
        try {
            out.cancellation[group] = cancellation_rate(trace, group);
        } catch (const std::invalid_argument&) {
            // group absent in this variant (e.g. no depth gates)
        }
    }

    const GateSeries series = gate_behavior_series(trace);
    const std::size_t n_max = std::max<std::size_t>(trace.meta.n_max, 1);
    double flatness = 0.0;
    for (const auto& layer : series.l_eff) {
        std::vector<double> tail(layer.begin() + static_cast<std::ptrdiff_t>(layer.size() / 2),
                                 layer.end());
        flatness = std::max(flatness, std_of(tail) / static_cast<double>(n_max));
    }
    out.l_eff_flatness = flatness;

    double drift = 0.0;
    for (const auto& layer : series.depth_act)
        for (double w : layer) drift = std::max(drift, std::abs(w - layer.front()));
    out.depth_drift = drift;

    const auto& last = trace.steps.back();
    std::size_t saturated = 0, n_gates = 0;
    for (const auto* acts : {&last.gate_act, &last.depth_act})
        for (double a : *acts) {
            if (a < 0.05 || a > 0.95) ++saturated;
            ++n_gates;
        }
    out.saturation_fraction = n_gates ? static_cast<double>(saturated) / n_gates : 0.0;

    const bool flat = out.l_eff_flatness < th.flatness;
    const bool still = out.depth_drift < th.drift;
    const bool wide = infinite_gap || out.gap.mean > th.gap;
    if (flat && still && wide) out.verdict = Verdict::Collapsed;
    else if (!flat && !still && !wide) out.verdict = Verdict::Active;
    else out.verdict = Verdict::Inconclusive;
    return out;
}

namespace {

double euclidean(const Tensor& m, std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        const double d = m.at(i, c) - m.at(j, c);
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace

RepMetrics representation_metrics(const Tensor& image_embs, const std::vector<int>& labels,
                                  const Tensor& class_embs) {
    const std::size_t n = image_embs.rows();
    const std::size_t d = image_embs.cols();
    if (labels.size() != n)
        throw std::invalid_argument("representation_metrics: label count mismatch");
    if (class_embs.cols() != d)
        throw std::invalid_argument("representation_metrics: embedding dim mismatch");
    const std::size_t n_classes = class_embs.rows();
    if (n_classes < 2) throw std::invalid_argument("representation_metrics: need >= 2 classes");

    std::vector<std::vector<std::size_t>> members(n_classes);
    for (std::size_t i = 0; i < n; ++i) {
        const int lbl = labels[i];
        if (lbl < 0 || static_cast<std::size_t>(lbl) >= n_classes)
            throw std::invalid_argument("representation_metrics: label out of range");
        members[static_cast<std::size_t>(lbl)].push_back(i);
    }

    RepMetrics out;

    double align = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = static_cast<std::size_t>(labels[i]);
        double dot = 0.0, ni = 0.0, nc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += image_embs.at(i, k) * class_embs.at(c, k);
            ni += image_embs.at(i, k) * image_embs.at(i, k);
            nc += class_embs.at(c, k) * class_embs.at(c, k);
        }
        const double denom = std::sqrt(ni) * std::sqrt(nc);
        align += denom > 0.0 ? dot / denom : 0.0;
    }
    out.alignment = n ? align / static_cast<double>(n) : 0.0;

    // silhouette, excluding samples whose class has no other member
    double sil_sum = 0.0;
    std::size_t sil_n = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ci = static_cast<std::size_t>(labels[i]);
        if (members[ci].size() < 2) {
            ++out.n_excluded;
            continue;
        }
        double a = 0.0;
        for (std::size_t j : members[ci])
            if (j != i) a += euclidean(image_embs, i, j);
        a /= static_cast<double>(members[ci].size() - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n_classes; ++c) {
            if (c == ci || members[c].empty()) continue;
            double dist = 0.0;
            for (std::size_t j : members[c]) dist += euclidean(image_embs, i, j);
            b = std::min(b, dist / static_cast<double>(members[c].size()));
        }
        if (!std::isfinite(b))
            throw std::invalid_argument("representation_metrics: need samples in >= 2 classes");
        const double denom = std::max(a, b);
        sil_sum += denom > 0.0 ? (b - a) / denom : 0.0;
        ++sil_n;
    }
    out.silhouette = sil_n ? sil_sum / static_cast<double>(sil_n) : 0.0;

    // separation: mean pairwise centroid distance over mean within-class spread
    Tensor centroids({n_classes, d});
    std::vector<bool> present(n_classes, false);
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (members[c].empty()) continue;
        present[c] = true;
        for (std::size_t j : members[c])
            for (std::size_t k = 0; k < d; ++k) centroids.at(c, k) += image_embs.at(j, k);
        for (std::size_t k = 0; k < d; ++k)
            centroids.at(c, k) /= static_cast<double>(members[c].size());
    }
    double between = 0.0;
    std::size_t n_pairs = 0;
    for (std::size_t a = 0; a < n_classes; ++a)
        for (std::size_t b = a + 1; b < n_classes; ++b) {
            if (!present[a] || !present[b]) continue;
            between += euclidean(centroids, a, b);
            ++n_pairs;
        }
    between = n_pairs ? between / static_cast<double>(n_pairs) : 0.0;
    double within = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = static_cast<std::size_t>(labels[i]);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = image_embs.at(i, k) - centroids.at(c, k);
            s += diff * diff;
        }
        within += std::sqrt(s);
    }
    within = n ? within / static_cast<double>(n) : 0.0;
    if (within == 0.0) out.separation = between == 0.0 ? 0.0
                                                       : std::numeric_limits<double>::infinity();
    else out.separation = between / within;
    return out;
}

} // namespace gatelab
