#include "gatelab/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gatelab/rng.hpp"

namespace gatelab {

void EncoderConfig::validate() const {
    if (depth < 2) throw std::invalid_argument("encoder: depth must be >= 2");
    if (d_text % n_heads != 0 || d_vis % n_heads != 0)
        throw std::invalid_argument("encoder: widths must be divisible by n_heads");
    if (n_text_prompts < 1) throw std::invalid_argument("encoder: n_text_prompts must be >= 1");
    if (tau_clip <= 0.0) throw std::invalid_argument("encoder: tau_clip must be positive");
    if (proj_dim < 1 || n_word_tokens < 1 || n_patch_tokens < 1 || vocab_size < 1)
        throw std::invalid_argument("encoder: sizes must be positive");
}

namespace {

Tensor gaussian(std::vector<std::size_t> shape, double std, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.normal(0.0, std);
    return t;
}

} // namespace

FrozenEncoder::FrozenEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();

    auto make_tower = [&](const char* tower, std::size_t width, std::uint64_t tag) {
        std::vector<Layer> layers;
        Rng rng(mix_seed(cfg_.seed, tag));
        const double std_w = 1.0 / std::sqrt(static_cast<double>(width));
        const std::size_t hidden = 2 * width;
        const double std_h = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (std::size_t d = 0; d < cfg_.depth; ++d) {
            const std::string base = std::string("backbone.") + tower + ".layer" + std::to_string(d) + ".";
            Layer l;
            l.wq = &params_.add(base + "wq", ParamGroup::Backbone, gaussian({width, width}, std_w, rng), true);
            l.wk = &params_.add(base + "wk", ParamGroup::Backbone, gaussian({width, width}, std_w, rng), true);
            l.wv = &params_.add(base + "wv", ParamGroup::Backbone, gaussian({width, width}, std_w, rng), true);
            l.wo = &params_.add(base + "wo", ParamGroup::Backbone, gaussian({width, width}, std_w, rng), true);
            l.w1 = &params_.add(base + "w1", ParamGroup::Backbone, gaussian({width, hidden}, std_w, rng), true);
            l.w2 = &params_.add(base + "w2", ParamGroup::Backbone, gaussian({hidden, width}, std_h, rng), true);
            layers.push_back(l);
        }
        return layers;
    };

    // Equal widths weight-tie the towers (same draw, separate parameters):
    // raw patch input that equals an embedded token sequence is then encoded
    // identically by both sides, which gives the toy backbone a zero-shot
    // aligned starting point the way a pretrained contrastive pair has.
    const bool tied = cfg_.d_vis == cfg_.d_text;
    text_layers_ = make_tower("text", cfg_.d_text, 0x11);
    vis_layers_ = make_tower("vision", cfg_.d_vis, tied ? 0x11 : 0x22);

    Rng rng(mix_seed(cfg_.seed, 0x33));
    token_table_ = &params_.add("backbone.token_table", ParamGroup::Backbone,
                                gaussian({cfg_.vocab_size, cfg_.d_text},
                                         1.0 / std::sqrt(static_cast<double>(cfg_.d_text)), rng),
                                true);
    text_proj_ = &params_.add("backbone.text_proj", ParamGroup::Backbone,
                              gaussian({cfg_.d_text, cfg_.proj_dim},
                                       1.0 / std::sqrt(static_cast<double>(cfg_.d_text)), rng),
                              true);
    vis_proj_ = &params_.add("backbone.vis_proj", ParamGroup::Backbone,
                             tied ? text_proj_->value
                                  : gaussian({cfg_.d_vis, cfg_.proj_dim},
                                             1.0 / std::sqrt(static_cast<double>(cfg_.d_vis)), rng),
                             true);
}

Tensor FrozenEncoder::embed_tokens(const std::vector<int>& token_ids) const {
    Tensor out({token_ids.size(), cfg_.d_text});
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        int id = token_ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
            throw std::invalid_argument("embed_tokens: token id out of range");
        for (std::size_t j = 0; j < cfg_.d_text; ++j)
            out.at(i, j) = token_table_->value.at(static_cast<std::size_t>(id), j);
    }
    return out;
}

Var FrozenEncoder::block(Tape& t, Var x, const Layer& layer, std::size_t width) {
    const std::size_t dh = width / cfg_.n_heads;
    Var h = t.layer_norm_rows(x);
    Var q = t.matmul(h, t.param(*layer.wq));
    Var k = t.matmul(h, t.param(*layer.wk));
    Var v = t.matmul(h, t.param(*layer.wv));
    std::vector<Var> heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t head = 0; head < cfg_.n_heads; ++head) {
        Var qh = t.slice_cols(q, head * dh, dh);
        Var kh = t.slice_cols(k, head * dh, dh);
        Var vh = t.slice_cols(v, head * dh, dh);
        Var attn = t.softmax_rows(t.affine(t.matmul(qh, t.transpose(kh)), scale, 0.0));
        heads.push_back(t.matmul(attn, vh));
    }
    x = t.add(x, t.matmul(t.concat_cols(heads), t.param(*layer.wo)));
    Var u = t.layer_norm_rows(x);
    Var mlp = t.matmul(t.tanh_op(t.matmul(u, t.param(*layer.w1))), t.param(*layer.w2));
    return t.add(x, mlp);
}

Var FrozenEncoder::tower_forward(Tape& t, const std::vector<Layer>& layers, Parameter& proj,
                                 const std::vector<Var>& prompts, const std::vector<Var>& weights,
                                 const Tensor& tokens, std::size_t width) {
    if (tokens.cols() != width)
        throw std::invalid_argument("tower_forward: token width mismatch " + shape_string(tokens));
    const bool inserted = !prompts.empty();
    if (inserted && (prompts.size() != cfg_.depth || weights.size() != cfg_.depth))
        throw std::invalid_argument("tower_forward: need one prompt and weight per layer");

    std::size_t np = 0;
    Var x;
    if (inserted) {
        np = prompts[0].value().rows();
        for (auto& p : prompts)
            if (p.value().rows() != np || p.value().cols() != width)
                throw std::invalid_argument("tower_forward: prompt shape mismatch");
        // layer-0 pass-through is a zero slice
        x = t.concat_rows(t.scalar_mul(weights[0], prompts[0]), t.constant(tokens));
    } else {
        x = t.constant(tokens);
    }

    const std::size_t total = x.value().rows();
    for (std::size_t d = 0; d < cfg_.depth; ++d) {
        if (inserted && d > 0) {
            Var prev = t.slice_rows(x, 0, np);
            Var keep = t.affine(weights[d], -1.0, 1.0);
            Var slice = t.add(t.scalar_mul(weights[d], prompts[d]), t.scalar_mul(keep, prev));
            x = t.concat_rows(slice, t.slice_rows(x, np, total - np));
        }
        x = block(t, x, layers[d], width);
    }
    x = t.layer_norm_rows(x);
    // first-token readout: the first content row, not an inserted prompt row
    Var readout = t.slice_rows(x, np, 1);
    return t.l2_normalize(t.matmul(readout, t.param(proj)));
}

Var FrozenEncoder::encode_text(Tape& tape, const std::vector<Var>& prompts,
                               const std::vector<Var>& weights, const Tensor& word_tokens) {
    return tower_forward(tape, text_layers_, *text_proj_, prompts, weights, word_tokens, cfg_.d_text);
}

Var FrozenEncoder::encode_image(Tape& tape, const std::vector<Var>& prompts,
                                const std::vector<Var>& weights, const Tensor& patch_tokens) {
    return tower_forward(tape, vis_layers_, *vis_proj_, prompts, weights, patch_tokens, cfg_.d_vis);
}

Var FrozenEncoder::logits(Tape& tape, Var image_emb, const std::vector<Var>& class_embs) const {
    if (class_embs.empty()) throw std::invalid_argument("logits: empty class list");
    std::vector<Var> scores;
    scores.reserve(class_embs.size());
    for (auto& c : class_embs)
        scores.push_back(tape.affine(tape.dot(image_emb, c), cfg_.tau_clip, 0.0));
    return tape.stack_scalars(scores);
}

} // namespace gatelab
