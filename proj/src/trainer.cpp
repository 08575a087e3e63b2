#include "gatelab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gatelab/data.hpp"
#include "gatelab/objective.hpp"
#include "gatelab/optimizer.hpp"
#include "gatelab/rng.hpp"

namespace gatelab {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Everything one forward pass needs besides the samples themselves.
struct ForwardSetup {
    Model* model = nullptr;
    const RunConfig* cfg = nullptr;
    double tau = 1.0;
    GateMode mode = GateMode::Train;
    Rng* mask_rng = nullptr;    // random gating strategy
    Rng* dropout_rng = nullptr; // explicit-reg prompt dropout
};

// Per-layer prompt stacks after coupling, dropout and gating, plus the
// auxiliary quantities the objective and the trace need.
struct PromptAssembly {
    std::vector<Var> text;
    std::vector<Var> vis;
    std::vector<Var> weights; // scalar depth weight per layer
    std::vector<Var> l_eff;   // per gated layer
    Var depth_act;            // (depth,) soft activations; invalid if ungated
    std::vector<Var> gate_acts; // activations for the entropy term
    std::vector<Var> cyc_orig;
    std::vector<Var> cyc_recon;
};

Var dropout_rows(Tape& t, Var x, double rate, Rng& rng) {
    const std::size_t n = x.value().rows();
    Tensor mask({n});
    const double keep = 1.0 - rate;
    for (auto& v : mask.vec()) v = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return t.scale_rows(x, t.constant(std::move(mask)));
}

PromptAssembly assemble_deep(Tape& t, const ForwardSetup& fs) {
    Model& m = *fs.model;
    const RunConfig& cfg = *fs.cfg;
    const std::size_t D = cfg.encoder.depth;
    PromptAssembly out;

    std::vector<Var> text_raw, vis_raw;
    for (std::size_t d = 0; d < D; ++d) {
        text_raw.push_back(t.param(*m.text_prompts[d]));
        vis_raw.push_back(t.param(*m.vis_prompts[d]));
    }

    for (std::size_t d = 0; d < D; ++d) {
        Var text = text_raw[d], vis = vis_raw[d];
        if (m.spec.has_coupling()) {
            const CouplingLayer& c = m.coupling[d];
            CoupledPrompts fused = couple_bidirectional(t, text, vis, c);
            out.cyc_orig.push_back(text);
            out.cyc_recon.push_back(map_vis_to_text(t, c, map_text_to_vis(t, c, text)));
            text = fused.text;
            vis = fused.vis;
        }
        if (m.spec.kind == VariantKind::ExplicitReg && fs.mode == GateMode::Train &&
            m.spec.dropout_rate > 0.0) {
            text = dropout_rows(t, text, m.spec.dropout_rate, *fs.dropout_rng);
            vis = dropout_rows(t, vis, m.spec.dropout_rate, *fs.dropout_rng);
        }
        if (m.length_logits != nullptr) {
            Var row = t.slice_rows(t.param(*m.length_logits), d, 1);
            Tensor mask({cfg.encoder.n_text_prompts});
            if (cfg.variant.strategy == GatingStrategy::Random) {
                if (fs.mask_rng == nullptr)
                    throw std::logic_error("assemble_deep: random strategy without mask stream");
                for (auto& v : mask.vec()) v = fs.mask_rng->bernoulli(0.5) ? 1.0 : 0.0;
            }
            GatedPrompts gated =
                apply_length_gate(t, text, row, fs.tau, cfg.variant.strategy,
                                  cfg.variant.strategy == GatingStrategy::Random ? &mask
                                                                                 : nullptr);
            text = gated.prompts;
            out.l_eff.push_back(gated.l_eff);
            if (cfg.objective.lambda_ent > 0.0)
                out.gate_acts.push_back(t.sigmoid(t.affine(row, 1.0 / fs.tau, 0.0)));
        }
        out.text.push_back(text);
        out.vis.push_back(vis);
    }

    if (m.depth_logits != nullptr) {
        out.depth_act = apply_depth_gate(t, t.param(*m.depth_logits), fs.mode, fs.tau);
        if (cfg.objective.lambda_ent > 0.0) out.gate_acts.push_back(out.depth_act);
        for (std::size_t d = 0; d < D; ++d) out.weights.push_back(t.select(out.depth_act, d));
    } else {
        for (std::size_t d = 0; d < D; ++d) out.weights.push_back(t.constant(1.0));
    }
    return out;
}

// Context stacked at layer 0 only; deeper layers pass tokens through.
std::pair<std::vector<Var>, std::vector<Var>> context_stack(Tape& t, Var ctx, std::size_t depth) {
    std::vector<Var> prompts(depth, ctx), weights;
    weights.push_back(t.constant(1.0));
    for (std::size_t d = 1; d < depth; ++d) weights.push_back(t.constant(0.0));
    return {prompts, weights};
}

struct BatchResult {
    LossBreakdown loss;
    Var total;
    std::vector<double> l_eff;
    std::vector<double> depth_act;
};

// One training/eval forward over a batch for any variant. Class text
// embeddings are shared across the batch except for instance-conditioned
// variants, which re-encode per sample.
BatchResult forward_batch(Tape& t, const ForwardSetup& fs,
                          const std::vector<const Sample*>& batch,
                          const std::vector<Tensor>& class_tokens,
                          std::vector<std::size_t>* predictions = nullptr,
                          std::vector<double>* per_input_l_eff = nullptr,
                          Tensor* image_embs_out = nullptr) {
    Model& m = *fs.model;
    const RunConfig& cfg = *fs.cfg;
    BatchResult out;

    std::vector<Var> cls_terms;
    std::vector<Var> l_eff_vars;
    Var depth_act_var;
    Var cyc;
    std::vector<Var> ent_acts;

    auto classify = [&](Var img_emb, const std::vector<Var>& class_embs, int label,
                        std::size_t sample_idx) {
        Var logit_vec = m.encoder->logits(t, img_emb, class_embs);
        cls_terms.push_back(classification_loss(t, logit_vec, static_cast<std::size_t>(label),
                                                cfg.objective.label_smoothing));
        if (predictions != nullptr) {
            const Tensor& lv = logit_vec.value();
            std::size_t best = 0;
            for (std::size_t i = 1; i < lv.numel(); ++i)
                if (lv[i] > lv[best]) best = i;
            (*predictions)[sample_idx] = best;
        }
        if (image_embs_out != nullptr)
            for (std::size_t k = 0; k < img_emb.value().numel(); ++k)
                image_embs_out->at(sample_idx, k) = img_emb.value()[k];
    };

    if (m.spec.is_deep_prompting()) {
        PromptAssembly pa = assemble_deep(t, fs);
        l_eff_vars = pa.l_eff;
        depth_act_var = pa.depth_act;
        ent_acts = pa.gate_acts;
        if (!pa.cyc_orig.empty()) cyc = cycle_loss(t, pa.cyc_orig, pa.cyc_recon);

        std::vector<Var> class_embs;
        for (const Tensor& tokens : class_tokens)
            class_embs.push_back(m.encoder->encode_text(t, pa.text, pa.weights, tokens));
        for (std::size_t i = 0; i < batch.size(); ++i) {
            Var img = m.encoder->encode_image(t, pa.vis, pa.weights, batch[i]->patches);
            classify(img, class_embs, batch[i]->label, i);
        }
    } else if (!m.spec.is_instance_conditioned()) {
        // coop / coop-gated: shared context in the text tower only
        Var ctx = t.param(*m.context);
        if (m.context_gate_logits != nullptr) {
            Var logits = t.param(*m.context_gate_logits);
            Tensor mask({m.spec.n_context});
            if (cfg.variant.strategy == GatingStrategy::Random)
                for (auto& v : mask.vec()) v = fs.mask_rng->bernoulli(0.5) ? 1.0 : 0.0;
            GatedPrompts gated =
                apply_length_gate(t, ctx, logits, fs.tau, cfg.variant.strategy,
                                  cfg.variant.strategy == GatingStrategy::Random ? &mask
                                                                                 : nullptr);
            ctx = gated.prompts;
            l_eff_vars.push_back(gated.l_eff);
            if (cfg.objective.lambda_ent > 0.0)
                ent_acts.push_back(t.sigmoid(t.affine(logits, 1.0 / fs.tau, 0.0)));
        }
        auto [prompts, weights] = context_stack(t, ctx, cfg.encoder.depth);
        std::vector<Var> class_embs;
        for (const Tensor& tokens : class_tokens)
            class_embs.push_back(m.encoder->encode_text(t, prompts, weights, tokens));
        for (std::size_t i = 0; i < batch.size(); ++i) {
            Var img = m.encoder->encode_image(t, {}, {}, batch[i]->patches);
            classify(img, class_embs, batch[i]->label, i);
        }
    } else {
        // cocoop / cocoop-gated: per-sample meta-conditioned context
        Var ctx = t.param(*m.context);
        std::vector<Var> sample_l_eff;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            Var img = m.encoder->encode_image(t, {}, {}, batch[i]->patches);
            Var h = t.tanh_op(t.add_rowvec(t.matmul(img, t.param(*m.meta_w1)),
                                           t.param(*m.meta_b1)));
            Var pi = t.add_rowvec(t.matmul(h, t.param(*m.meta_w2)), t.param(*m.meta_b2));
            Var ctx_i = t.add_rowvec(ctx, pi);
            if (m.gate_w != nullptr) {
                GatedPrompts gated =
                    cocoop_gate(t, ctx_i, pi, t.param(*m.gate_w), t.param(*m.gate_b));
                ctx_i = gated.prompts;
                sample_l_eff.push_back(gated.l_eff);
                if (per_input_l_eff != nullptr)
                    per_input_l_eff->push_back(gated.l_eff.value().item());
            }
            auto [prompts, weights] = context_stack(t, ctx_i, cfg.encoder.depth);
            std::vector<Var> class_embs;
            for (const Tensor& tokens : class_tokens)
                class_embs.push_back(m.encoder->encode_text(t, prompts, weights, tokens));
            classify(img, class_embs, batch[i]->label, i);
        }
        if (!sample_l_eff.empty()) {
            // batch-mean effective length drives the sparsity term
            Var acc = sample_l_eff[0];
            for (std::size_t i = 1; i < sample_l_eff.size(); ++i)
                acc = t.add(acc, sample_l_eff[i]);
            l_eff_vars.push_back(
                t.affine(acc, 1.0 / static_cast<double>(sample_l_eff.size()), 0.0));
        }
    }

    Var cls = cls_terms[0];
    for (std::size_t i = 1; i < cls_terms.size(); ++i) cls = t.add(cls, cls_terms[i]);
    cls = t.affine(cls, 1.0 / static_cast<double>(cls_terms.size()), 0.0);

    Var sparse = l_eff_vars.empty() ? Var{} : sparsity_loss(t, l_eff_vars);
    Var smooth = depth_act_var.valid() ? smoothness_loss(t, depth_act_var) : Var{};
    Var ent = (!ent_acts.empty() && cfg.objective.lambda_ent > 0.0) ? entropy_loss(t, ent_acts)
                                                                    : Var{};
    TotalLoss total = total_loss(t, cls, cyc, sparse, smooth, ent, cfg.objective);
    out.loss = total.breakdown;
    out.total = total.total;
    for (const Var& le : l_eff_vars) out.l_eff.push_back(le.value().item());
    if (depth_act_var.valid())
        out.depth_act.assign(depth_act_var.value().vec().begin(),
                             depth_act_var.value().vec().end());
    return out;
}

double group_norm(const GradientMap& grads, const ParamStore& params, ParamGroup g) {
    double sq = 0.0;
    for (const auto& [name, grad] : grads) {
        if (params.get(name).group != g) continue;
        for (double v : grad.vec()) sq += v * v;
    }
    return std::sqrt(sq);
}

std::string last_steps_summary(const TrainingTrace& trace) {
    std::ostringstream os;
    const std::size_t n = trace.steps.size();
    const std::size_t from = n > 10 ? n - 10 : 0;
    for (std::size_t i = from; i < n; ++i) {
        const StepRecord& r = trace.steps[i];
        os << "  step " << r.step << " epoch " << r.epoch << " total " << r.loss_total
           << " |g_prompt| " << r.grad_norm_prompt << " |g_gate| " << r.grad_norm_gate << "\n";
    }
    return os.str();
}

EvalResult evaluate(Model& m, const RunConfig& cfg, const Dataset& data,
                    const std::vector<Tensor>& base_tokens,
                    const std::vector<Tensor>& novel_tokens, double tau) {
    EvalResult out;
    Rng eval_mask_rng(mix_seed(0xe7a1, cfg.encoder.seed)); // random-strategy eval masks
    ForwardSetup fs{&m, &cfg, tau, GateMode::Train, &eval_mask_rng, nullptr};

    auto run_split = [&](const std::vector<Sample>& split, const std::vector<Tensor>& tokens,
                         int label_offset, Tensor* embs_out,
                         std::vector<double>* l_eff_out) -> double {
        std::size_t correct = 0;
        const std::size_t chunk = 16; // tape size control only; no batch coupling
        for (std::size_t at = 0; at < split.size(); at += chunk) {
            Tape t;
            t.set_grad_enabled(false);
            std::vector<const Sample*> batch;
            for (std::size_t i = at; i < std::min(at + chunk, split.size()); ++i)
                batch.push_back(&split[i]);
            // labels must be local to the scored class list
            std::vector<Sample> local(batch.size());
            std::vector<const Sample*> local_ptr;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                local[i] = *batch[i];
                local[i].label -= label_offset;
                local_ptr.push_back(&local[i]);
            }
            std::vector<std::size_t> preds(batch.size());
            Tensor chunk_embs({batch.size(), cfg.encoder.proj_dim});
            forward_batch(t, fs, local_ptr, tokens, &preds, l_eff_out, &chunk_embs);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (preds[i] == static_cast<std::size_t>(local[i].label)) ++correct;
                if (embs_out != nullptr)
                    for (std::size_t k = 0; k < cfg.encoder.proj_dim; ++k)
                        embs_out->at(at + i, k) = chunk_embs.at(i, k);
            }
        }
        return 100.0 * static_cast<double>(correct) / static_cast<double>(split.size());
    };

    Tensor base_embs({data.base_test.size(), cfg.encoder.proj_dim});
    std::vector<double> l_eff_samples;
    const bool want_l_eff = m.spec.kind == VariantKind::CoCoOpGated;
    out.base_acc = run_split(data.base_test, base_tokens, 0, &base_embs,
                             want_l_eff ? &l_eff_samples : nullptr);
    out.novel_acc = run_split(data.novel_test, novel_tokens,
                              static_cast<int>(cfg.task.n_base_classes), nullptr, nullptr);
    out.h_mean = harmonic_mean(std::max(out.base_acc, 1e-9), std::max(out.novel_acc, 1e-9));

    // class text embeddings (inference mode) for the representation metrics
    {
        Tape t;
        t.set_grad_enabled(false);
        Tensor class_embs({base_tokens.size(), cfg.encoder.proj_dim});
        // instance-conditioned variants have no shared class embedding, so
        // the representation metrics are only defined for the other kinds
        if (!m.spec.is_instance_conditioned()) {
            if (m.spec.is_deep_prompting()) {
                PromptAssembly pa = assemble_deep(t, fs);
                for (std::size_t c = 0; c < base_tokens.size(); ++c) {
                    Var e = m.encoder->encode_text(t, pa.text, pa.weights, base_tokens[c]);
                    for (std::size_t k = 0; k < cfg.encoder.proj_dim; ++k)
                        class_embs.at(c, k) = e.value()[k];
                }
            } else {
                Var ctx = t.param(*m.context);
                if (m.context_gate_logits != nullptr) {
                    Tensor mask({m.spec.n_context});
                    if (cfg.variant.strategy == GatingStrategy::Random)
                        for (auto& v : mask.vec()) v = eval_mask_rng.bernoulli(0.5) ? 1.0 : 0.0;
                    GatedPrompts g = apply_length_gate(
                        t, ctx, t.param(*m.context_gate_logits), tau, cfg.variant.strategy,
                        cfg.variant.strategy == GatingStrategy::Random ? &mask : nullptr);
                    ctx = g.prompts;
                }
                auto [prompts, weights] = context_stack(t, ctx, cfg.encoder.depth);
                for (std::size_t c = 0; c < base_tokens.size(); ++c) {
                    Var e = m.encoder->encode_text(t, prompts, weights, base_tokens[c]);
                    for (std::size_t k = 0; k < cfg.encoder.proj_dim; ++k)
                        class_embs.at(c, k) = e.value()[k];
                }
            }
            std::vector<int> labels;
            for (const auto& s : data.base_test) labels.push_back(s.label);
            out.rep = representation_metrics(base_embs, labels, class_embs);
        }
    }

    if (want_l_eff && !l_eff_samples.empty()) {
        out.has_l_eff_stats = true;
        double mean = 0.0;
        for (double v : l_eff_samples) mean += v;
        mean /= static_cast<double>(l_eff_samples.size());
        double sq = 0.0;
        for (double v : l_eff_samples) sq += (v - mean) * (v - mean);
        out.l_eff_mean = mean;
        out.l_eff_std = std::sqrt(sq / static_cast<double>(l_eff_samples.size()));
    }
    return out;
}

} // namespace

SeedRun train_one_seed(const RunConfig& cfg, std::uint64_t seed) {
    cfg.validate();

    SeedRun run;
    run.seed = seed;

    const Dataset data = generate(cfg.task, cfg.task.seed);
    std::unique_ptr<Model> model = Model::build(cfg.variant, cfg.encoder, seed);

    // gate initialization variants (defaults keep the canonical 1.0 init)
    if (cfg.gate_init.kind != GateInitKind::Default) {
        auto reinit = [&](Parameter* p, std::uint64_t tag) {
            if (p != nullptr && !p->frozen)
                p->value = init_gates(cfg.gate_init.kind, p->value.shape(), cfg.gate_init,
                                      mix_seed(seed, tag));
        };
        reinit(model->length_logits, 0xb1);
        reinit(model->depth_logits, 0xb2);
        reinit(model->context_gate_logits, 0xb3);
    }

    OptimizerConfig opt_cfg = cfg.optimizer;
    if (cfg.variant.kind == VariantKind::ExplicitReg && cfg.variant.extra_weight_decay > 0.0)
        opt_cfg.weight_decay[ParamGroup::Prompt] += cfg.variant.extra_weight_decay;
    Optimizer opt(opt_cfg);

    std::vector<Tensor> base_tokens, novel_tokens;
    for (std::size_t c = 0; c < cfg.task.n_base_classes; ++c)
        base_tokens.push_back(model->encoder->embed_tokens(data.class_tokens[c]));
    for (std::size_t c = cfg.task.n_base_classes; c < data.class_tokens.size(); ++c)
        novel_tokens.push_back(model->encoder->embed_tokens(data.class_tokens[c]));

    run.trace.meta.seed = seed;
    run.trace.meta.variant = to_string(cfg.variant.kind);
    run.trace.meta.strategy = to_string(cfg.variant.strategy);
    run.trace.meta.config_hash = config_hash(cfg.raw);
    run.trace.meta.n_max = cfg.variant.is_context_kind() ? cfg.variant.n_context
                                                         : cfg.encoder.n_text_prompts;
    run.trace.meta.record_every = cfg.record_every;

    Rng shuffle_rng(mix_seed(seed, 0x5f));
    Rng mask_rng(mix_seed(seed, 0x97));
    Rng dropout_rng(mix_seed(seed, 0xd0));

    std::vector<std::size_t> order(data.base_train.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t n_gates = model->gate_logit_values().size();
    const std::size_t n_depth = model->depth_logits != nullptr ? cfg.encoder.depth : 0;
    std::size_t step = 0;
    double tau = 1.0;

    for (int epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
        tau = anneal_temperature(epoch, cfg.optimizer.temperature);
        // Fisher-Yates with the deterministic stream
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t at = 0; at < order.size(); at += cfg.optimizer.batch_size) {
            std::vector<const Sample*> batch;
            for (std::size_t i = at;
                 i < std::min(at + static_cast<std::size_t>(cfg.optimizer.batch_size),
                              order.size());
                 ++i)
                batch.push_back(&data.base_train[order[i]]);

            Tape t;
            ForwardSetup fs{model.get(), &cfg, tau, GateMode::Train, &mask_rng, &dropout_rng};
            BatchResult br;
            GradientMap grads;
            try {
                br = forward_batch(t, fs, batch, base_tokens);
                grads = t.backward(br.total);
            } catch (const std::runtime_error& e) {
                throw NumericalError(std::string("numerical failure at step ") +
                                     std::to_string(step) + ": " + e.what() +
                                     "\nlast recorded steps:\n" + last_steps_summary(run.trace));
            }

            if (step % cfg.record_every == 0) {
                StepRecord rec;
                rec.step = step;
                rec.epoch = static_cast<std::size_t>(epoch);
                rec.loss_cls = br.loss.cls;
                rec.loss_cyc = br.loss.cyc;
                rec.loss_sparse = br.loss.sparse;
                rec.loss_smooth = br.loss.smooth;
                rec.loss_ent = br.loss.ent;
                rec.loss_total = br.loss.total;
                rec.grad_norm_prompt = group_norm(grads, model->params, ParamGroup::Prompt);
                rec.grad_norm_gate = group_norm(grads, model->params, ParamGroup::Gate);
                rec.grad_norm_coupling = group_norm(grads, model->params, ParamGroup::Coupling);
                rec.grad_norm_gate_net = group_norm(grads, model->params, ParamGroup::GateNet);
                // flattened raw gate gradients in gate_logit_values() order;
                // frozen gates appear as zeros
                rec.gate_grad.assign(n_gates, 0.0);
                std::size_t cursor = 0;
                auto copy_grad = [&](const Parameter* p) {
                    if (p == nullptr) return;
                    auto it = grads.find(p->name);
                    for (std::size_t i = 0; i < p->value.numel(); ++i, ++cursor)
                        if (it != grads.end()) rec.gate_grad[cursor] = it->second[i];
                };
                copy_grad(model->length_logits);
                copy_grad(model->context_gate_logits);
                copy_grad(model->depth_logits);
                const std::vector<double> logits = model->gate_logit_values();
                for (std::size_t i = 0; i + n_depth < logits.size(); ++i)
                    rec.gate_act.push_back(sigmoid(logits[i] / tau));
                for (std::size_t i = logits.size() - n_depth; i < logits.size(); ++i)
                    rec.depth_act.push_back(sigmoid(logits[i] / tau));
                rec.l_eff = br.l_eff;
                rec.tau = tau;
                run.trace.steps.push_back(std::move(rec));
            }

            opt.step(model->params, grads, epoch);
            ++step;
        }
    }

    run.eval = evaluate(*model, cfg, data, base_tokens, novel_tokens, tau);
    run.counts = model->count_parameters();
    return run;
}

} // namespace gatelab
