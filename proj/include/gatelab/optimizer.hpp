#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gatelab/param.hpp"

namespace gatelab {

struct EquilibriumConfig {
    bool enabled = false;
    double epsilon = 1e-8;
    double max_scale = 10.0;

    void validate() const;
};

struct TemperatureSchedule {
    bool enabled = false;
    double tau_start = 1.0;
    double tau_end = 1.0;
    int anneal_epochs = 0;
};

struct PhaseSpan {
    int epoch_begin = 0;
    int epoch_end = 0; // exclusive; <0 means open-ended
    std::set<ParamGroup> groups;
};

enum class OptimizerKind { Sgd, AdaptiveMoment };
enum class GateInitKind { Default, Zero, Uniform, Biased };

GateInitKind parse_gate_init(const std::string& s);

struct GateInitConfig {
    GateInitKind kind = GateInitKind::Default;
    double uniform_lo = -1.0;
    double uniform_hi = 1.0;
    double bias = 0.0;
};

struct OptimizerConfig {
    double base_lr = 0.002;
    double gate_lr_multiplier = 1.0;
    double clip_max_norm = 0.0; // 0 disables clipping
    OptimizerKind kind = OptimizerKind::Sgd;
    std::map<ParamGroup, double> weight_decay;
    EquilibriumConfig equilibrium;
    TemperatureSchedule temperature;
    bool phased = false;
    std::vector<PhaseSpan> phases; // empty + phased -> default 3-stage schedule
    int epochs = 16;
    int batch_size = 10;

    void validate() const;
};

// Counteracts sigmoid attenuation: grad_i scaled by
// min(1 / (sigma(g_i)(1-sigma(g_i)) + eps), max_scale), elementwise.
Tensor equilibrium_scale(const Tensor& gate_logits, const Tensor& raw_grad,
                         const EquilibriumConfig& cfg);

// Global-norm clipping across the whole map; idempotent.
void clip_gradients(GradientMap& grads, double max_norm);

// Linear interpolation tau_start -> tau_end over anneal_epochs, constant after.
double anneal_temperature(int epoch, const TemperatureSchedule& schedule);

// Gate-logit initialization variants; deterministic given seed.
Tensor init_gates(GateInitKind kind, const std::vector<std::size_t>& shape,
                  const GateInitConfig& cfg, std::uint64_t seed);

// SGD / decoupled adaptive-moment update with per-group learning rates,
// optional equilibrium rescaling of gate gradients (before clipping) and
// phase-scheduled trainable groups.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg);

    const OptimizerConfig& config() const { return cfg_; }

    // groups trainable at the given epoch
    std::set<ParamGroup> active_groups(int epoch) const;

    // applied-lr per group for the records
    std::map<std::string, double> step(ParamStore& params, const GradientMap& grads, int epoch);

private:
    OptimizerConfig cfg_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    long t_ = 0;
};

} // namespace gatelab
