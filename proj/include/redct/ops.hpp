#pragma once

#include <cstddef>

#include "redct/autodiff.hpp"
#include "redct/tensor.hpp"

namespace redct {

// Differentiable operations. Each records onto `tape` when one is given and
// at least one input requires a gradient; the output then requires a
// gradient too. With a null tape nothing is recorded.

struct ConvOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    // Floor the output extent when (H + 2p - k) is not a multiple of the
    // stride, dropping trailing rows/columns. Off means such shapes throw.
    bool allow_truncation = false;
};

// Output extent of a conv2d along one axis. Throws ShapeMismatch when the
// kernel does not fit or the extent is non-integral (unless truncating).
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvOptions& opt);
std::size_t conv_transposed_output_extent(std::size_t in, std::size_t kernel, const ConvOptions& opt);

// Cross-correlation with zero padding.
//   input   [C_in, H, W]
//   kernels [C_out, C_in, kH, kW]  (kH, kW odd)
//   bias    [C_out], or an undefined Tensor for no bias
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              const ConvOptions& opt, Tape* tape = nullptr);

// The adjoint of conv2d with the same kernel tensor.
//   input   [C_in, H, W]
//   kernels [C_in, C_out, kH, kW]
//   bias    [C_out] or undefined
// Output extent (H - 1) * stride - 2 * padding + kH.
Tensor conv2d_transposed(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                         const ConvOptions& opt, Tape* tape = nullptr);

// max(0, x); the subgradient at 0 is 0.
Tensor relu(const Tensor& x, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& x, double factor, Tape* tape = nullptr);
Tensor sum(const Tensor& x, Tape* tape = nullptr);

// Sum of squared differences, a scalar.
Tensor squared_distance(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// Mean of squared differences, a scalar.
Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr);

// Elementwise a * b.
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

}  // namespace redct
