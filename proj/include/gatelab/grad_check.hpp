#pragma once

#include <functional>
#include <vector>

#include "gatelab/tape.hpp"

namespace gatelab {

// Central-difference gradient validation. `f` must rebuild the scalar loss on
// the supplied tape from the current parameter values (registering them via
// tape.param) and must be deterministic across evaluations.
//
// Returns max over checked coordinates of
//   |analytic - central_difference| / max(|analytic|, 1e-12);
// coordinates where both sides are below 1e-9 are skipped (the central
// difference is rounding noise there).
//
// When max_coords_per_param > 0, a seeded subsample of coordinates is checked
// per parameter instead of all of them.
double finite_diff_check(const std::function<Var(Tape&)>& f,
                         const std::vector<Parameter*>& params,
                         double h,
                         std::size_t max_coords_per_param = 0,
                         std::uint64_t sample_seed = 0);

} // namespace gatelab
