#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "redct/tensor.hpp"

namespace redct {

class Tape;

// Receives d(loss)/d(output) and accumulates into the inputs via the tape.
using BackwardFn = std::function<void(std::span<const double> grad_output, Tape& tape)>;

// Ordered record of differentiable operations executed during one forward
// pass, plus the gradient buffers filled by backward().
//
// A tape is single-writer. Gradients live on the tape rather than on the
// tensors, so parameters can be shared read-only between tapes running on
// different threads.
class Tape {
public:
    void record(std::string name, const Tensor& output, BackwardFn fn);

    // Adds `grad` into the buffer for `t`. No-op unless t.requires_grad().
    void accumulate(const Tensor& t, std::span<const double> grad);

    // Gradient of the last backward() with respect to t; zeros if t never
    // received any.
    Tensor grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;

    std::size_t size() const noexcept { return entries_.size(); }
    std::vector<std::string> op_names() const;

    // Drops recorded operations and all gradient buffers.
    void clear();

    friend void backward(Tape& tape, const Tensor& loss);

private:
    struct Entry {
        std::string name;
        Tensor output;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
    std::unordered_map<const void*, std::vector<double>> grads_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients add to
// whatever the tape already holds. Throws NotScalar for multi-element losses.
void backward(Tape& tape, const Tensor& loss);

// A scalar-valued function of one tensor. When `tape` is non-null the
// function must record onto it.
using ScalarFn = std::function<Tensor(const Tensor& input, Tape* tape)>;

// Max over coordinates of |analytic - central difference| /
// max(1e-8, |analytic| + |numeric|).
double grad_check(const ScalarFn& fn, const Tensor& input, double epsilon = 1e-5);

}  // namespace redct
