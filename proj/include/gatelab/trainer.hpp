#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "gatelab/config.hpp"
#include "gatelab/diagnostics.hpp"
#include "gatelab/gating.hpp"
#include "gatelab/trace.hpp"

namespace gatelab {

// Raised when a step produces non-finite values; carries a summary of the
// last recorded steps so the failure is diagnosable from the message alone.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

struct EvalResult {
    double base_acc = 0.0;  // percent
    double novel_acc = 0.0; // percent
    double h_mean = 0.0;
    RepMetrics rep;
    // per-input effective length over the base test set; only populated for
    // instance-conditioned gated variants
    bool has_l_eff_stats = false;
    double l_eff_mean = 0.0;
    double l_eff_std = 0.0;
};

struct SeedRun {
    std::uint64_t seed = 0;
    TrainingTrace trace;
    EvalResult eval;
    ParamCounts counts;
};

// Trains one variant instance end to end on the config's synthetic task and
// evaluates base/novel accuracy. Deterministic given (config, seed).
SeedRun train_one_seed(const RunConfig& cfg, std::uint64_t seed);

} // namespace gatelab
