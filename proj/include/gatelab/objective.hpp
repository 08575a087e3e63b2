#pragma once

#include <vector>

#include "gatelab/tape.hpp"

namespace gatelab {

struct ObjectiveConfig {
    double lambda_cyc = 0.1;
    double lambda_sparse = 0.001;
    double lambda_smooth = 0.0002;
    double lambda_ent = 0.0;
    double label_smoothing = 0.0;

    void validate() const;
};

struct LossBreakdown {
    double cls = 0.0;
    double cyc = 0.0;
    double sparse = 0.0;
    double smooth = 0.0;
    double ent = 0.0;
    double total = 0.0;
};

// Softmax cross-entropy over a logit vector.
Var classification_loss(Tape& tape, Var logits, std::size_t label, double label_smoothing = 0.0);

// Mean over layers of squared reconstruction error ||P - recon(P)||^2.
Var cycle_loss(Tape& tape, const std::vector<Var>& originals,
               const std::vector<Var>& reconstructions);

// Sum of all applied length-gate activations (= sum of per-layer L_eff).
Var sparsity_loss(Tape& tape, const std::vector<Var>& l_eff_per_layer);

// Sum of absolute adjacent differences of depth activations.
Var smoothness_loss(Tape& tape, Var depth_activations);

// Positive binary entropy summed over all gate activations.
Var entropy_loss(Tape& tape, const std::vector<Var>& activations);

struct TotalLoss {
    Var total;
    LossBreakdown breakdown;
};

// total = cls + l_cyc*cyc + l_sparse*sparse + l_smooth*smooth - l_ent*ent
// (entropy is maximized: the regularizer pushes gates away from saturation).
// Invalid (unset) term Vars contribute zero.
TotalLoss total_loss(Tape& tape, Var cls, Var cyc, Var sparse, Var smooth, Var ent,
                     const ObjectiveConfig& cfg);

} // namespace gatelab
