#pragma once

#include <cstdint>
#include <vector>

#include "gatelab/param.hpp"
#include "gatelab/tape.hpp"

namespace gatelab {

struct EncoderConfig {
    std::size_t depth = 4;
    std::size_t d_text = 64;
    std::size_t d_vis = 64;
    std::size_t n_heads = 4;
    std::size_t n_text_prompts = 8;   // max prompt length per layer
    std::size_t n_vis_prompts = 4;
    std::size_t n_word_tokens = 16;
    std::size_t n_patch_tokens = 16;
    std::size_t proj_dim = 32;
    std::size_t vocab_size = 8;
    double tau_clip = 10.0;
    std::uint64_t seed = 7;

    void validate() const;
};

// Deterministic toy two-tower transformer. All weights are frozen backbone
// parameters; identical (seed, config) reproduces bit-identical weights.
class FrozenEncoder {
public:
    explicit FrozenEncoder(const EncoderConfig& cfg);

    const EncoderConfig& config() const { return cfg_; }

    // Word-embedding lookup for a token id sequence -> (len, d_text) tensor.
    Tensor embed_tokens(const std::vector<int>& token_ids) const;

    // Per-layer soft prompt insertion: the incoming prompt slice is replaced
    // by w_d * prompts[d] + (1 - w_d) * pass-through, with a zero slice as the
    // layer-0 pass-through. Empty `prompts` runs the tower without insertion.
    // Output embedding is unit-L2-normalized.
    Var encode_text(Tape& tape, const std::vector<Var>& prompts,
                    const std::vector<Var>& weights, const Tensor& word_tokens);
    Var encode_image(Tape& tape, const std::vector<Var>& prompts,
                     const std::vector<Var>& weights, const Tensor& patch_tokens);

    // score_c = tau_clip * <image_emb, class_emb_c>; inputs unit-normalized.
    Var logits(Tape& tape, Var image_emb, const std::vector<Var>& class_embs) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    struct Layer {
        Parameter* wq;
        Parameter* wk;
        Parameter* wv;
        Parameter* wo;
        Parameter* w1;
        Parameter* w2;
    };

    Var tower_forward(Tape& tape, const std::vector<Layer>& layers, Parameter& proj,
                      const std::vector<Var>& prompts, const std::vector<Var>& weights,
                      const Tensor& tokens, std::size_t width);
    Var block(Tape& tape, Var x, const Layer& layer, std::size_t width);

    EncoderConfig cfg_;
    ParamStore params_;
    std::vector<Layer> text_layers_;
    std::vector<Layer> vis_layers_;
    Parameter* token_table_ = nullptr;
    Parameter* text_proj_ = nullptr;
    Parameter* vis_proj_ = nullptr;
};

} // namespace gatelab
