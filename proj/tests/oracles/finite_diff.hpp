#pragma once

// Central finite differences against the tape's reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "srne/tensor.hpp"

namespace oracle {

using Builder = std::function<srne::Var(srne::Tape&, const std::vector<srne::Var>&)>;

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over
/// every entry of every input. `build` must return a scalar.
inline double max_grad_error(const Builder& build, const std::vector<srne::Tensor>& inputs, double h = 1e-5,
                             double floor = 1e-3)
{
    using namespace srne;
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vs;
        for (const auto& t : inputs) {
            vs.push_back(tape.param(t));
        }
        tape.backward(build(tape, vs));
        for (const auto& v : vs) {
            analytic.push_back(tape.grad(v));
        }
    }
    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape tape(false);
        std::vector<Var> vs;
        for (const auto& t : xs) {
            vs.push_back(tape.constant(t));
        }
        return build(tape, vs).value().item();
    };
    double worst = 0.0;
    std::vector<Tensor> work = inputs;
    for (std::size_t k = 0; k < work.size(); ++k) {
        for (std::size_t i = 0; i < work[k].size(); ++i) {
            const double saved = work[k][i];
            work[k][i] = saved + h;
            const double up = eval(work);
            work[k][i] = saved - h;
            const double down = eval(work);
            work[k][i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

/// Projects a tensor-valued op onto a scalar with fixed weights so that
/// every output entry contributes a distinct gradient.
inline srne::Var weighted_sum(srne::Tape& tape, srne::Var out)
{
    using namespace srne;
    const Tensor& v = out.value();
    Tensor w(v.shape());
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = 0.3 + 0.17 * static_cast<double>(i % 7) - 0.05 * static_cast<double>(i % 3);
    }
    return sum(mul(out, tape.constant(std::move(w))));
}

} // namespace oracle
