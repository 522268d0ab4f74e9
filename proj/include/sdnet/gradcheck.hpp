#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sdnet/tape.hpp"
#include "sdnet/tensor.hpp"

namespace sdnet {

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-3;            // central-difference h
    int max_coords_per_tensor = 200;
    uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = true;
    int checked = 0;
    int skipped_nonsmooth = 0;
    std::string worst;  // "tensor#i[coord]" of the largest error
};

// Checks analytic gradients against central finite differences. The analytic
// side runs the float implementation and its tape backward; the numeric side
// re-evaluates the same function template in 64-bit, so the difference
// quotient is not drowned by float rounding. `fn` must be callable both as
// fn(TapeT<float>*, vector<Tensor>&) and fn((TapeT<double>*)nullptr,
// vector<TensorT<double>>&), returning a scalar tensor.
template <typename Fn>
GradCheckReport grad_check(Fn&& fn, const std::vector<Tensor>& inputs,
                           GradCheckOptions opt = {}) {
    TapeT<float> tape;
    std::vector<Tensor> ins = inputs;
    for (auto& t : ins) tape.watch(t);
    Tensor loss = fn(&tape, ins);
    if (loss.size() != 1) throw ContractError("grad_check: function must be scalar-valued");
    tape.backward(loss.node());

    std::vector<std::vector<float>> analytic;
    for (auto& t : ins)
        analytic.push_back(tape.has_grad(t.node()) ? tape.take_grad(t.node())
                                                   : std::vector<float>(t.size(), 0.0f));
    tape.reset();

    std::vector<TensorT<double>> base;
    base.reserve(inputs.size());
    for (const auto& t : inputs) base.push_back(t.template cast<double>());

    Rng rng(opt.seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    GradCheckReport rep;
    for (size_t ti = 0; ti < base.size(); ++ti) {
        const size_t n = base[ti].size();
        std::vector<size_t> coords;
        if (n <= static_cast<size_t>(opt.max_coords_per_tensor)) {
            coords.resize(n);
            for (size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            coords.reserve(static_cast<size_t>(opt.max_coords_per_tensor));
            for (int i = 0; i < opt.max_coords_per_tensor; ++i) coords.push_back(rng.index(n));
        }
        for (size_t ci : coords) {
            auto eval = [&](double delta) {
                std::vector<TensorT<double>> ws = base;
                TensorT<double> pert(base[ti].shape(), base[ti].data());
                pert.mutable_data()[ci] += delta;
                ws[ti] = std::move(pert);
                TensorT<double> out = fn(static_cast<TapeT<double>*>(nullptr), ws);
                return out.data()[0];
            };
            auto rel_err = [](double a, double b) {
                return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
            };
            const double an = static_cast<double>(analytic[ti][ci]);
            double fd = (eval(opt.step) - eval(-opt.step)) / (2.0 * opt.step);
            double rel = rel_err(fd, an);
            if (rel > opt.tolerance) {
                // The step may have straddled a kink (ReLU zero crossing, pool
                // argmax flip). Re-estimate at h/2: if the halved step agrees
                // with the analytic value the coordinate was merely non-smooth
                // at scale h; if the two difference quotients agree with each
                // other but not with the analytic gradient, the gradient is
                // genuinely wrong; otherwise the coordinate sits on a kink and
                // carries no usable signal.
                const double half = opt.step / 2.0;
                const double fd2 = (eval(half) - eval(-half)) / (2.0 * half);
                if (rel_err(fd2, an) <= opt.tolerance) {
                    fd = fd2;
                    rel = rel_err(fd2, an);
                } else if (rel_err(fd, fd2) > opt.tolerance) {
                    ++rep.skipped_nonsmooth;
                    continue;
                } else {
                    rel = rel_err(fd2, an);
                }
            }
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = "tensor#" + std::to_string(ti) + "[" + std::to_string(ci) + "]";
            }
        }
    }
    rep.pass = rep.max_rel_err <= opt.tolerance;
    return rep;
}

}  // namespace sdnet
