#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gatelab {

// One optimizer step, recorded before the update is applied. Gradient
// norms and gate_grad hold raw backward-pass values: rescaling and
// clipping applied inside the optimizer are never baked into the trace.
struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss_cls = 0.0;
    double loss_cyc = 0.0;
    double loss_sparse = 0.0;
    double loss_smooth = 0.0;
    double loss_ent = 0.0;
    double loss_total = 0.0;
    double grad_norm_prompt = 0.0;
    double grad_norm_gate = 0.0;
    double grad_norm_coupling = 0.0;
    double grad_norm_gate_net = 0.0;
    std::vector<double> gate_grad; // flattened: length gates row-major, context, depth
    std::vector<double> gate_act;  // sigmoid(logit / tau), same order minus depth
    std::vector<double> depth_act; // sigmoid(depth logit / tau) per layer
    std::vector<double> l_eff;     // effective prompt length per gated layer
    double tau = 1.0;
};

struct RunMeta {
    std::uint64_t seed = 0;
    std::string variant;
    std::string strategy;
    std::string config_hash;
    std::size_t n_max = 0; // prompts per layer; normalizes the flatness test
    std::size_t record_every = 1;
};

struct TrainingTrace {
    RunMeta meta;
    std::vector<StepRecord> steps;
};

// First line is the run header, every following line one StepRecord.
// Output is deterministic: same trace -> byte-identical file.
void save_trace(const TrainingTrace& trace, const std::string& path);
TrainingTrace load_trace(const std::string& path);

} // namespace gatelab
