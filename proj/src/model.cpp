#include <cmath>
#include <stdexcept>

#include "gatelab/gating.hpp"
#include "gatelab/rng.hpp"

namespace gatelab {

namespace {

// small enough that layer norm's epsilon keeps near-zero prompt rows from
// being amplified into unit-scale noise before the prompts have trained
constexpr double kPromptInitStd = 1e-4;

Tensor gaussian(std::vector<std::size_t> shape, double std, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.normal(0.0, std);
    return t;
}

} // namespace

std::unique_ptr<Model> Model::build(const VariantSpec& spec, const EncoderConfig& cfg,
                                    std::uint64_t seed) {
    cfg.validate();
    auto m = std::make_unique<Model>();
    m->spec = spec;
    m->cfg = cfg;
    m->encoder = std::make_unique<FrozenEncoder>(cfg);

    Rng rng(mix_seed(seed, 0x51));
    const std::size_t D = cfg.depth;

    if (spec.is_deep_prompting()) {
        for (std::size_t d = 0; d < D; ++d) {
            m->text_prompts.push_back(&m->params.add(
                "prompt.text.layer" + std::to_string(d), ParamGroup::Prompt,
                gaussian({cfg.n_text_prompts, cfg.d_text}, kPromptInitStd, rng)));
            m->vis_prompts.push_back(&m->params.add(
                "prompt.vis.layer" + std::to_string(d), ParamGroup::Prompt,
                gaussian({cfg.n_vis_prompts, cfg.d_vis}, kPromptInitStd, rng)));
        }
    }

    if (spec.has_coupling()) {
        const std::size_t hidden = std::min(cfg.d_text, cfg.d_vis);
        const double std_t = 1.0 / std::sqrt(static_cast<double>(cfg.d_text));
        const double std_v = 1.0 / std::sqrt(static_cast<double>(cfg.d_vis));
        const double std_h = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (std::size_t d = 0; d < D; ++d) {
            const std::string base = "coupling.layer" + std::to_string(d) + ".";
            CouplingLayer c;
            c.lv_w1 = &m->params.add(base + "lv_w1", ParamGroup::Coupling,
                                     gaussian({cfg.d_text, hidden}, std_t, rng));
            c.lv_b1 = &m->params.add(base + "lv_b1", ParamGroup::Coupling, Tensor({hidden}));
            c.lv_w2 = &m->params.add(base + "lv_w2", ParamGroup::Coupling,
                                     gaussian({hidden, cfg.d_vis}, std_h, rng));
            c.lv_b2 = &m->params.add(base + "lv_b2", ParamGroup::Coupling, Tensor({cfg.d_vis}));
            c.vl_w1 = &m->params.add(base + "vl_w1", ParamGroup::Coupling,
                                     gaussian({cfg.d_vis, hidden}, std_v, rng));
            c.vl_b1 = &m->params.add(base + "vl_b1", ParamGroup::Coupling, Tensor({hidden}));
            c.vl_w2 = &m->params.add(base + "vl_w2", ParamGroup::Coupling,
                                     gaussian({hidden, cfg.d_text}, std_h, rng));
            c.vl_b2 = &m->params.add(base + "vl_b2", ParamGroup::Coupling, Tensor({cfg.d_text}));
            // logit 0 -> balanced fusion 0.5
            c.alpha_logit = &m->params.add(base + "alpha", ParamGroup::Coupling, Tensor::scalar(0.0));
            c.beta_logit = &m->params.add(base + "beta", ParamGroup::Coupling, Tensor::scalar(0.0));
            m->coupling.push_back(c);
        }
    }

    const bool frozen_gates = spec.kind == VariantKind::AlwaysFrozen;
    if (spec.kind == VariantKind::AdaptiveBiMaple || frozen_gates) {
        m->length_logits = &m->params.add("gate.length", ParamGroup::Gate,
                                          Tensor::full({D, cfg.n_text_prompts}, 1.0), frozen_gates);
        m->depth_logits = &m->params.add("gate.depth", ParamGroup::Gate,
                                         Tensor::full({D}, 1.0), frozen_gates);
    }

    if (spec.kind == VariantKind::ParamMatched) {
        // same element count as the length + depth logits it replaces;
        // participates in weight decay only, never in the forward pass
        m->dummy_block = &m->params.add("prompt.buffer", ParamGroup::Prompt,
                                        gaussian({D * cfg.n_text_prompts + D}, kPromptInitStd, rng));
    }

    if (spec.is_context_kind()) {
        m->context = &m->params.add("prompt.context", ParamGroup::Prompt,
                                    gaussian({spec.n_context, cfg.d_text}, kPromptInitStd, rng));
    }
    if (spec.kind == VariantKind::CoOpGated) {
        m->context_gate_logits = &m->params.add("gate.context", ParamGroup::Gate,
                                                Tensor::full({spec.n_context}, 1.0));
    }
    if (spec.is_instance_conditioned()) {
        const std::size_t hidden = std::max<std::size_t>(cfg.proj_dim / 2, 4);
        const double std_p = 1.0 / std::sqrt(static_cast<double>(cfg.proj_dim));
        const double std_h = 1.0 / std::sqrt(static_cast<double>(hidden));
        m->meta_w1 = &m->params.add("prompt.meta_w1", ParamGroup::Prompt,
                                    gaussian({cfg.proj_dim, hidden}, std_p, rng));
        m->meta_b1 = &m->params.add("prompt.meta_b1", ParamGroup::Prompt, Tensor({hidden}));
        m->meta_w2 = &m->params.add("prompt.meta_w2", ParamGroup::Prompt,
                                    gaussian({hidden, cfg.d_text}, std_h, rng));
        m->meta_b2 = &m->params.add("prompt.meta_b2", ParamGroup::Prompt, Tensor({cfg.d_text}));
    }
    if (spec.kind == VariantKind::CoCoOpGated) {
        // w_i = 0, b_i = 1 so initial gates match the scalar-gate init
        m->gate_w = &m->params.add("gate_net.w", ParamGroup::GateNet,
                                   Tensor({spec.n_context, cfg.d_text}));
        m->gate_b = &m->params.add("gate_net.b", ParamGroup::GateNet,
                                   Tensor::full({spec.n_context, 1}, 1.0));
    }

    return m;
}

ParamCounts Model::count_parameters() const {
    ParamCounts out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = params[i];
        out.per_group[group_name(p.group)] += p.value.numel();
        out.total += p.value.numel();
        if (!p.frozen) out.trainable += p.value.numel();
    }
    const std::size_t gate_elems =
        params.count_elements(ParamGroup::Gate) + params.count_elements(ParamGroup::GateNet);
    const std::size_t module_total = out.total; // encoder weights live in their own store
    const std::size_t base = module_total - gate_elems;
    out.gate_overhead_ratio =
        base > 0 ? static_cast<double>(module_total) / static_cast<double>(base) : 1.0;
    return out;
}

std::vector<double> Model::gate_logit_values() const {
    std::vector<double> out;
    if (length_logits)
        out.insert(out.end(), length_logits->value.vec().begin(), length_logits->value.vec().end());
    if (context_gate_logits)
        out.insert(out.end(), context_gate_logits->value.vec().begin(),
                   context_gate_logits->value.vec().end());
    if (depth_logits)
        out.insert(out.end(), depth_logits->value.vec().begin(), depth_logits->value.vec().end());
    return out;
}

} // namespace gatelab
