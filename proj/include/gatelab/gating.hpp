#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gatelab/encoder.hpp"
#include "gatelab/param.hpp"
#include "gatelab/tape.hpp"

namespace gatelab {

enum class VariantKind {
    Maple,
    BiMaple,
    AdaptiveBiMaple,
    CoOp,
    CoOpGated,
    CoCoOp,
    CoCoOpGated,
    ParamMatched,
    AlwaysFrozen,
    ExplicitReg,
};

enum class GatingStrategy { PerToken, PerLayer, FixedAllOn, Random };

VariantKind parse_variant_kind(const std::string& s);
GatingStrategy parse_gating_strategy(const std::string& s);
std::string to_string(VariantKind k);
std::string to_string(GatingStrategy s);

struct VariantSpec {
    VariantKind kind = VariantKind::AdaptiveBiMaple;
    GatingStrategy strategy = GatingStrategy::PerToken;
    double dropout_rate = 0.0;        // explicit-reg only
    double extra_weight_decay = 0.0;  // explicit-reg only
    std::size_t n_context = 8;        // context length M for coop/cocoop kinds

    bool is_deep_prompting() const;   // maple family (deep per-layer prompts)
    bool has_coupling() const;
    bool has_length_gates() const;    // length/depth gate logits present
    bool is_context_kind() const;     // coop / cocoop family
    bool is_instance_conditioned() const;
};

struct GatedPrompts {
    Var prompts;
    Var l_eff;
};

// Length gating for the prompt tokens of one layer. `logits` holds one logit
// per token; tau is the sigmoid temperature. The random strategy takes a
// caller-supplied 0/1 mask (resampled per step from a seeded stream).
GatedPrompts apply_length_gate(Tape& tape, Var prompts, Var logits, double tau,
                               GatingStrategy strategy, const Tensor* random_mask = nullptr);

enum class GateMode { Train, Infer };

// Depth insertion weights w_d. Train: sigmoid(logit / tau). Infer: hard 0/1
// with ties at sigma = 0.5 resolving to off.
Var apply_depth_gate(Tape& tape, Var depth_logits, GateMode mode, double tau);

struct CouplingLayer {
    Parameter* lv_w1;
    Parameter* lv_b1;
    Parameter* lv_w2;
    Parameter* lv_b2;
    Parameter* vl_w1;
    Parameter* vl_b1;
    Parameter* vl_w2;
    Parameter* vl_b2;
    Parameter* alpha_logit;
    Parameter* beta_logit;
};

Var map_text_to_vis(Tape& tape, const CouplingLayer& c, Var text_prompts);
Var map_vis_to_text(Tape& tape, const CouplingLayer& c, Var vis_prompts);

struct CoupledPrompts {
    Var text;
    Var vis;
};

// Fuses the two prompt stacks of one layer with sigmoid-squashed coefficients.
CoupledPrompts couple_bidirectional(Tape& tape, Var text_prompts, Var vis_prompts,
                                    const CouplingLayer& c);

// Instance-conditioned gating: gate_i = sigmoid(<w_i, v> + b_i).
GatedPrompts cocoop_gate(Tape& tape, Var context, Var conditioning,
                         Var gate_w, Var gate_b);

struct ParamCounts {
    std::map<std::string, std::size_t> per_group;
    std::size_t total = 0;
    std::size_t trainable = 0;
    double gate_overhead_ratio = 1.0; // trainable / (trainable minus gate groups)
};

// Assembled trainable model for one variant over a shared frozen encoder.
class Model {
public:
    static std::unique_ptr<Model> build(const VariantSpec& spec, const EncoderConfig& cfg,
                                        std::uint64_t seed);

    VariantSpec spec;
    EncoderConfig cfg;
    std::unique_ptr<FrozenEncoder> encoder;
    ParamStore params;

    std::vector<Parameter*> text_prompts; // per layer, (N_max, d_text)
    std::vector<Parameter*> vis_prompts;  // per layer, (n_vis, d_vis)
    std::vector<CouplingLayer> coupling;
    Parameter* length_logits = nullptr;   // (depth, N_max)
    Parameter* depth_logits = nullptr;    // (depth)
    Parameter* context = nullptr;         // (M, d_text)
    Parameter* context_gate_logits = nullptr; // (M)
    Parameter* meta_w1 = nullptr;         // (proj_dim, meta_hidden)
    Parameter* meta_b1 = nullptr;
    Parameter* meta_w2 = nullptr;         // (meta_hidden, d_text)
    Parameter* meta_b2 = nullptr;
    Parameter* gate_w = nullptr;          // (M, d_text) affine gate heads
    Parameter* gate_b = nullptr;          // (M, 1)
    Parameter* dummy_block = nullptr;     // param-matched filler

    ParamCounts count_parameters() const;

    // flattened gate logit order used in traces: length row-major, then depth
    std::vector<double> gate_logit_values() const;
};

} // namespace gatelab
