#pragma once

// Finite-difference check of the full network's teacher-forced CE gradient
// with respect to randomly chosen individual weights.

#include <algorithm>
#include <cmath>

#include "srne/datagen.hpp"
#include "srne/model.hpp"

namespace oracle {

struct ModelGradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

inline double model_ce(const srne::NetworkGenome& g, const srne::DataEquationPair& p)
{
    return srne::cross_entropy(srne::forward_logits(g, p.xs, p.ys, p.tokens), p.tokens, srne::kPad);
}

inline ModelGradCheck model_grad_check(const srne::NetworkGenome& g, const srne::DataEquationPair& p,
                                       std::size_t n_params, srne::Rng& rng, double h = 1e-5, double floor = 1e-6)
{
    using namespace srne;
    Tape tape;
    const BoundModel m = bind(tape, g, true);
    tape.backward(cross_entropy_loss(forward_logits_on(tape, m, p.xs, p.ys, p.tokens, false, nullptr), p.tokens, kPad));

    ModelGradCheck out;
    for (std::size_t k = 0; k < n_params; ++k) {
        const std::size_t layer = rng.index(g.layer_count());
        const std::size_t i = rng.index(g.weights(layer).size());
        const double analytic = tape.grad(m.weights[layer])[i];
        Tensor w = g.weights(layer);
        const double saved = w[i];
        w[i] = saved + h;
        const double up = model_ce(g.set_layer(layer, w), p);
        w[i] = saved - h;
        const double down = model_ce(g.set_layer(layer, w), p);
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
        out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
        ++out.checked;
    }
    return out;
}

} // namespace oracle
