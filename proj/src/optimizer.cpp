#include "gatelab/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "gatelab/rng.hpp"

namespace gatelab {

void EquilibriumConfig::validate() const {
    if (epsilon <= 0.0) throw std::invalid_argument("equilibrium: epsilon must be positive");
    if (max_scale < 1.0) throw std::invalid_argument("equilibrium: max_scale must be >= 1");
}

void OptimizerConfig::validate() const {
    if (base_lr <= 0.0) throw std::invalid_argument("optimizer: base_lr must be positive");
    if (gate_lr_multiplier <= 0.0)
        throw std::invalid_argument("optimizer: gate_lr_multiplier must be positive");
    if (clip_max_norm < 0.0) throw std::invalid_argument("optimizer: clip_max_norm must be >= 0");
    if (epochs < 1 || batch_size < 1)
        throw std::invalid_argument("optimizer: epochs and batch_size must be >= 1");
    equilibrium.validate();
    if (temperature.enabled && (temperature.tau_start <= 0 || temperature.tau_end <= 0))
        throw std::invalid_argument("optimizer: temperatures must be positive");
}

GateInitKind parse_gate_init(const std::string& s) {
    if (s == "default") return GateInitKind::Default;
    if (s == "zero") return GateInitKind::Zero;
    if (s == "uniform") return GateInitKind::Uniform;
    if (s == "biased") return GateInitKind::Biased;
    throw std::invalid_argument("unknown gate init kind '" + s + "'");
}

Tensor equilibrium_scale(const Tensor& gate_logits, const Tensor& raw_grad,
                         const EquilibriumConfig& cfg) {
    cfg.validate();
    if (!gate_logits.same_shape(raw_grad))
        throw std::invalid_argument("equilibrium_scale: shape mismatch");
    Tensor out = raw_grad;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-gate_logits[i]));
        const double scale = std::min(1.0 / (s * (1.0 - s) + cfg.epsilon), cfg.max_scale);
        out[i] *= scale;
    }
    return out;
}

void clip_gradients(GradientMap& grads, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (auto& [name, g] : grads)
        for (double v : g.vec()) sq += v * v;
    const double norm = std::sqrt(sq);
    // the tolerance absorbs round-off from a previous clip, keeping the
    // operation exactly idempotent
    if (norm <= max_norm * (1.0 + 1e-12)) return;
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
        for (double& v : g.vec()) v *= scale;
}

double anneal_temperature(int epoch, const TemperatureSchedule& schedule) {
    if (!schedule.enabled) return 1.0;
    if (schedule.anneal_epochs <= 0 || epoch >= schedule.anneal_epochs) return schedule.tau_end;
    if (epoch <= 0) return schedule.tau_start;
    const double f = static_cast<double>(epoch) / static_cast<double>(schedule.anneal_epochs);
    return schedule.tau_start + f * (schedule.tau_end - schedule.tau_start);
}

Tensor init_gates(GateInitKind kind, const std::vector<std::size_t>& shape,
                  const GateInitConfig& cfg, std::uint64_t seed) {
    Tensor out(shape);
    switch (kind) {
        case GateInitKind::Default:
            for (auto& v : out.vec()) v = 1.0;
            break;
        case GateInitKind::Zero:
            break;
        case GateInitKind::Uniform: {
            if (cfg.uniform_lo > cfg.uniform_hi)
                throw std::invalid_argument("init_gates: uniform bounds inverted");
            Rng rng(mix_seed(seed, 0x6a));
            for (auto& v : out.vec()) v = rng.uniform(cfg.uniform_lo, cfg.uniform_hi);
            break;
        }
        case GateInitKind::Biased:
            for (auto& v : out.vec()) v = cfg.bias;
            break;
    }
    return out;
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::set<ParamGroup> Optimizer::active_groups(int epoch) const {
    static const std::set<ParamGroup> all = {ParamGroup::Prompt, ParamGroup::Gate,
                                             ParamGroup::Coupling, ParamGroup::GateNet};
    if (!cfg_.phased) return all;
    std::vector<PhaseSpan> phases = cfg_.phases;
    if (phases.empty()) {
        // default 3-stage schedule: warm-up, gate-only, joint
        phases = {
            {0, 2, {ParamGroup::Prompt, ParamGroup::Coupling}},
            {2, 4, {ParamGroup::Gate, ParamGroup::GateNet}},
            {4, -1, all},
        };
    }
    for (auto& ph : phases) {
        if (epoch >= ph.epoch_begin && (ph.epoch_end < 0 || epoch < ph.epoch_end))
            return ph.groups;
    }
    return {};
}

std::map<std::string, double> Optimizer::step(ParamStore& params, const GradientMap& grads,
                                              int epoch) {
    const std::set<ParamGroup> active = active_groups(epoch);
    ++t_;

    // equilibrium rescaling (gate grads only) happens before global clipping
    // so the clip bounds the applied update
    GradientMap work = grads;
    if (cfg_.equilibrium.enabled) {
        for (auto& [name, g] : work) {
            const Parameter& p = params.get(name);
            if (p.group == ParamGroup::Gate) g = equilibrium_scale(p.value, g, cfg_.equilibrium);
        }
    }
    if (cfg_.clip_max_norm > 0.0) clip_gradients(work, cfg_.clip_max_norm);

    std::map<std::string, double> applied_lr;
    for (auto& [name, g] : work) {
        Parameter& p = params.get(name);
        if (p.frozen) throw std::logic_error("step: gradient for frozen parameter " + name);
        if (!g.same_shape(p.value))
            throw std::invalid_argument("step: gradient shape mismatch for " + name);
        if (!active.count(p.group)) continue;

        double lr = cfg_.base_lr;
        if (p.group == ParamGroup::Gate) lr *= cfg_.gate_lr_multiplier;
        const auto wd_it = cfg_.weight_decay.find(p.group);
        const double wd = wd_it == cfg_.weight_decay.end() ? 0.0 : wd_it->second;
        applied_lr[group_name(p.group)] = lr;

        if (cfg_.kind == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < g.numel(); ++i)
                p.value[i] -= lr * (g[i] + wd * p.value[i]);
        } else {
            constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            Tensor& m = m_.try_emplace(name, Tensor::zeros(g.shape())).first->second;
            Tensor& v = v_.try_emplace(name, Tensor::zeros(g.shape())).first->second;
            const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
            for (std::size_t i = 0; i < g.numel(); ++i) {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                // decoupled weight decay
                p.value[i] -= lr * (mh / (std::sqrt(vh) + eps)) + lr * wd * p.value[i];
            }
        }
    }
    return applied_lr;
}

} // namespace gatelab
