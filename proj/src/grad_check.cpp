#include "gatelab/grad_check.hpp"

#include <cmath>
#include <numeric>

#include "gatelab/rng.hpp"

namespace gatelab {

namespace {

double eval_value(const std::function<Var(Tape&)>& f) {
    Tape t;
    t.set_grad_enabled(false);
    return f(t).value().item();
}

} // namespace

double finite_diff_check(const std::function<Var(Tape&)>& f,
                         const std::vector<Parameter*>& params,
                         double h,
                         std::size_t max_coords_per_param,
                         std::uint64_t sample_seed) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");

    Tape tape;
    Var loss = f(tape);
    GradientMap analytic = tape.backward(loss);

    Rng rng(mix_seed(sample_seed, 0x6fd1));
    double max_rel = 0.0;
    for (Parameter* p : params) {
        if (p->frozen) continue;
        const auto it = analytic.find(p->name);
        if (it == analytic.end()) continue; // not registered by f on this tape
        const Tensor& g = it->second;

        std::vector<std::size_t> coords(p->value.numel());
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
            for (std::size_t i = 0; i < max_coords_per_param; ++i) {
                std::size_t j = i + rng.next_below(coords.size() - i);
                std::swap(coords[i], coords[j]);
            }
            coords.resize(max_coords_per_param);
        }

        for (std::size_t idx : coords) {
            const double orig = p->value[idx];
            p->value[idx] = orig + h;
            const double fp = eval_value(f);
            p->value[idx] = orig - h;
            const double fm = eval_value(f);
            p->value[idx] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            // below this floor the central difference is pure rounding noise
            // (an exactly-zero analytic gradient would otherwise compare a
            // ~1e-12 FD artifact against a 1e-12 denominator)
            if (std::fabs(g[idx]) < 1e-9 && std::fabs(fd) < 1e-9) continue;
            const double rel = std::fabs(g[idx] - fd) / std::max(std::fabs(g[idx]), 1e-12);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace gatelab
