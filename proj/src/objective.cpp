#include "gatelab/objective.hpp"

#include <stdexcept>

namespace gatelab {

void ObjectiveConfig::validate() const {
    if (lambda_cyc < 0 || lambda_sparse < 0 || lambda_smooth < 0 || lambda_ent < 0)
        throw std::invalid_argument("objective: lambda weights must be >= 0");
    if (label_smoothing < 0 || label_smoothing >= 1)
        throw std::invalid_argument("objective: label_smoothing must be in [0,1)");
}

Var classification_loss(Tape& t, Var logits, std::size_t label, double label_smoothing) {
    const std::size_t k = logits.value().numel();
    if (label >= k) throw std::invalid_argument("classification_loss: label out of range");

    // stable log-sum-exp with a constant shift (gradient-exact)
    double mx = logits.value()[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits.value()[i]);
    Var shifted = t.affine(logits, 1.0, -mx);
    Var lse = t.affine(t.log_op(t.sum(t.exp_op(shifted))), 1.0, mx);

    if (label_smoothing == 0.0)
        return t.sub(lse, t.select(logits, label));

    // smoothed target: (1-s) on the label, s/K uniform
    const double s = label_smoothing;
    Var on_label = t.affine(t.select(logits, label), 1.0 - s, 0.0);
    Var uniform = t.affine(t.sum(logits), s / static_cast<double>(k), 0.0);
    return t.sub(lse, t.add(on_label, uniform));
}

Var cycle_loss(Tape& t, const std::vector<Var>& originals,
               const std::vector<Var>& reconstructions) {
    if (originals.empty() || originals.size() != reconstructions.size())
        throw std::invalid_argument("cycle_loss: layer list mismatch");
    Var acc = t.constant(0.0);
    for (std::size_t d = 0; d < originals.size(); ++d)
        acc = t.add(acc, t.l2_norm_sq(t.sub(originals[d], reconstructions[d])));
    return t.affine(acc, 1.0 / static_cast<double>(originals.size()), 0.0);
}

Var sparsity_loss(Tape& t, const std::vector<Var>& l_eff_per_layer) {
    if (l_eff_per_layer.empty())
        throw std::invalid_argument("sparsity_loss: empty gate list");
    Var acc = t.constant(0.0);
    for (auto& le : l_eff_per_layer) acc = t.add(acc, le);
    return acc;
}

Var smoothness_loss(Tape& t, Var depth_activations) {
    const std::size_t d = depth_activations.value().numel();
    Var acc = t.constant(0.0);
    for (std::size_t i = 0; i + 1 < d; ++i) {
        Var diff = t.sub(t.select(depth_activations, i + 1), t.select(depth_activations, i));
        acc = t.add(acc, t.abs_op(diff));
    }
    return acc;
}

Var entropy_loss(Tape& t, const std::vector<Var>& activations) {
    // saturated activations contribute 0; the clamp keeps log finite there
    constexpr double eps = 1e-12;
    Var acc = t.constant(0.0);
    for (auto& a : activations) {
        Var p = t.clamp(a, eps, 1.0 - eps);
        Var q = t.affine(p, -1.0, 1.0);
        Var h = t.add(t.mul(p, t.log_op(p)), t.mul(q, t.log_op(q)));
        acc = t.add(acc, t.sum(h));
    }
    return t.affine(acc, -1.0, 0.0);
}

TotalLoss total_loss(Tape& t, Var cls, Var cyc, Var sparse, Var smooth, Var ent,
                     const ObjectiveConfig& cfg) {
    cfg.validate();
    TotalLoss out;
    out.breakdown.cls = cls.value().item();
    Var total = cls;
    auto add_term = [&](Var v, double w, double& slot, double sign) {
        if (!v.valid()) return;
        slot = v.value().item();
        if (w != 0.0) total = t.add(total, t.affine(v, sign * w, 0.0));
    };
    add_term(cyc, cfg.lambda_cyc, out.breakdown.cyc, 1.0);
    add_term(sparse, cfg.lambda_sparse, out.breakdown.sparse, 1.0);
    add_term(smooth, cfg.lambda_smooth, out.breakdown.smooth, 1.0);
    add_term(ent, cfg.lambda_ent, out.breakdown.ent, -1.0);
    out.total = total;
    out.breakdown.total = total.value().item();
    return out;
}

} // namespace gatelab
