#include "gatelab/gating.hpp"

#include <cmath>
#include <stdexcept>

#include "gatelab/rng.hpp"

namespace gatelab {

VariantKind parse_variant_kind(const std::string& s) {
    if (s == "maple") return VariantKind::Maple;
    if (s == "bimaple") return VariantKind::BiMaple;
    if (s == "adaptive-bimaple") return VariantKind::AdaptiveBiMaple;
    if (s == "coop") return VariantKind::CoOp;
    if (s == "coop-gated") return VariantKind::CoOpGated;
    if (s == "cocoop") return VariantKind::CoCoOp;
    if (s == "cocoop-gated") return VariantKind::CoCoOpGated;
    if (s == "param-matched") return VariantKind::ParamMatched;
    if (s == "always-frozen") return VariantKind::AlwaysFrozen;
    if (s == "explicit-reg") return VariantKind::ExplicitReg;
    throw std::invalid_argument("unknown variant kind '" + s + "'");
}

GatingStrategy parse_gating_strategy(const std::string& s) {
    if (s == "per-token") return GatingStrategy::PerToken;
    if (s == "per-layer") return GatingStrategy::PerLayer;
    if (s == "fixed-all-on") return GatingStrategy::FixedAllOn;
    if (s == "random") return GatingStrategy::Random;
    throw std::invalid_argument("unknown gating strategy '" + s + "'");
}

std::string to_string(VariantKind k) {
    switch (k) {
        case VariantKind::Maple: return "maple";
        case VariantKind::BiMaple: return "bimaple";
        case VariantKind::AdaptiveBiMaple: return "adaptive-bimaple";
        case VariantKind::CoOp: return "coop";
        case VariantKind::CoOpGated: return "coop-gated";
        case VariantKind::CoCoOp: return "cocoop";
        case VariantKind::CoCoOpGated: return "cocoop-gated";
        case VariantKind::ParamMatched: return "param-matched";
        case VariantKind::AlwaysFrozen: return "always-frozen";
        case VariantKind::ExplicitReg: return "explicit-reg";
    }
    return "?";
}

std::string to_string(GatingStrategy s) {
    switch (s) {
        case GatingStrategy::PerToken: return "per-token";
        case GatingStrategy::PerLayer: return "per-layer";
        case GatingStrategy::FixedAllOn: return "fixed-all-on";
        case GatingStrategy::Random: return "random";
    }
    return "?";
}

bool VariantSpec::is_deep_prompting() const {
    switch (kind) {
        case VariantKind::Maple:
        case VariantKind::BiMaple:
        case VariantKind::AdaptiveBiMaple:
        case VariantKind::ParamMatched:
        case VariantKind::AlwaysFrozen:
        case VariantKind::ExplicitReg:
            return true;
        default:
            return false;
    }
}

bool VariantSpec::has_coupling() const {
    return is_deep_prompting() && kind != VariantKind::Maple;
}

bool VariantSpec::has_length_gates() const {
    return kind == VariantKind::AdaptiveBiMaple || kind == VariantKind::AlwaysFrozen ||
           kind == VariantKind::CoOpGated;
}

bool VariantSpec::is_context_kind() const {
    return kind == VariantKind::CoOp || kind == VariantKind::CoOpGated ||
           kind == VariantKind::CoCoOp || kind == VariantKind::CoCoOpGated;
}

bool VariantSpec::is_instance_conditioned() const {
    return kind == VariantKind::CoCoOp || kind == VariantKind::CoCoOpGated;
}

GatedPrompts apply_length_gate(Tape& t, Var prompts, Var logits, double tau,
                               GatingStrategy strategy, const Tensor* random_mask) {
    if (tau <= 0.0) throw std::invalid_argument("apply_length_gate: tau must be positive");
    const std::size_t n = prompts.value().rows();
    switch (strategy) {
        case GatingStrategy::PerToken: {
            if (logits.value().numel() != n)
                throw std::invalid_argument("apply_length_gate: token count != gate count");
            Var act = t.sigmoid(t.affine(logits, 1.0 / tau, 0.0));
            return {t.scale_rows(prompts, act), t.sum(act)};
        }
        case GatingStrategy::PerLayer: {
            Var shared = t.sigmoid(t.affine(t.select(logits, 0), 1.0 / tau, 0.0));
            return {t.scalar_mul(shared, prompts),
                    t.affine(shared, static_cast<double>(n), 0.0)};
        }
        case GatingStrategy::FixedAllOn:
            return {prompts, t.constant(static_cast<double>(n))};
        case GatingStrategy::Random: {
            if (random_mask == nullptr || random_mask->numel() != n)
                throw std::invalid_argument("apply_length_gate: random strategy needs a mask of token length");
            Var mask = t.constant(*random_mask);
            return {t.scale_rows(prompts, mask), t.sum(mask)};
        }
    }
    throw std::logic_error("apply_length_gate: unreachable");
}

Var apply_depth_gate(Tape& t, Var depth_logits, GateMode mode, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("apply_depth_gate: tau must be positive");
    if (mode == GateMode::Train)
        return t.sigmoid(t.affine(depth_logits, 1.0 / tau, 0.0));
    // hard decision; sigma(g) > 0.5 means g > 0, ties resolve to off
    Tensor hard = depth_logits.value();
    for (auto& v : hard.vec()) v = (v > 0.0) ? 1.0 : 0.0;
    return t.constant(std::move(hard));
}

namespace {

Var mlp2(Tape& t, Var x, Parameter& w1, Parameter& b1, Parameter& w2, Parameter& b2) {
    Var h = t.tanh_op(t.add_rowvec(t.matmul(x, t.param(w1)), t.param(b1)));
    return t.add_rowvec(t.matmul(h, t.param(w2)), t.param(b2));
}

} // namespace

Var map_text_to_vis(Tape& t, const CouplingLayer& c, Var text_prompts) {
    return mlp2(t, text_prompts, *c.lv_w1, *c.lv_b1, *c.lv_w2, *c.lv_b2);
}

Var map_vis_to_text(Tape& t, const CouplingLayer& c, Var vis_prompts) {
    return mlp2(t, vis_prompts, *c.vl_w1, *c.vl_b1, *c.vl_w2, *c.vl_b2);
}

CoupledPrompts couple_bidirectional(Tape& t, Var text_prompts, Var vis_prompts,
                                    const CouplingLayer& c) {
    Var alpha = t.sigmoid(t.param(*c.alpha_logit));
    Var beta = t.sigmoid(t.param(*c.beta_logit));
    // The towers may carry different prompt counts; only the overlapping
    // token positions are fused, the rest pass through unchanged.
    const std::size_t nt = text_prompts.value().rows();
    const std::size_t nv = vis_prompts.value().rows();
    const std::size_t k = std::min(nt, nv);
    Var text_head = nt == k ? text_prompts : t.slice_rows(text_prompts, 0, k);
    Var vis_head = nv == k ? vis_prompts : t.slice_rows(vis_prompts, 0, k);
    Var mapped_text = map_vis_to_text(t, c, vis_head);
    Var mapped_vis = map_text_to_vis(t, c, text_head);
    Var fused_text = t.add(t.scalar_mul(alpha, text_head),
                           t.scalar_mul(t.affine(alpha, -1.0, 1.0), mapped_text));
    Var fused_vis = t.add(t.scalar_mul(beta, vis_head),
                          t.scalar_mul(t.affine(beta, -1.0, 1.0), mapped_vis));
    if (nt > k) fused_text = t.concat_rows(fused_text, t.slice_rows(text_prompts, k, nt - k));
    if (nv > k) fused_vis = t.concat_rows(fused_vis, t.slice_rows(vis_prompts, k, nv - k));
    return {fused_text, fused_vis};
}

GatedPrompts cocoop_gate(Tape& t, Var context, Var conditioning, Var gate_w, Var gate_b) {
    const std::size_t m = context.value().rows();
    if (gate_w.value().rows() != m || gate_b.value().numel() != m)
        throw std::invalid_argument("cocoop_gate: gate head count != context length");
    if (gate_w.value().cols() != conditioning.value().numel())
        throw std::invalid_argument("cocoop_gate: conditioning dimension mismatch");
    // z_i = <w_i, v> + b_i
    Var v_col = conditioning.value().shape().size() == 2 && conditioning.value().cols() == 1
                    ? conditioning
                    : t.transpose(conditioning);
    Var z = t.add(t.matmul(gate_w, v_col), gate_b);
    Var act = t.sigmoid(z);
    return {t.scale_rows(context, act), t.sum(act)};
}

} // namespace gatelab
