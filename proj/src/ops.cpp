#include "redct/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <string>
#include <vector>

#include "redct/errors.hpp"

namespace redct {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

bool tracking(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatch(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                            shape_string(b.shape()) + " differ");
    }
}

// Geometry of one strided convolution between a "wide" image [C, H, W] and a
// "narrow" image [C', Ho, Wo]. conv2d goes wide -> narrow, conv2d_transposed
// goes narrow -> wide.
struct Geometry {
    std::size_t channels, height, width;  // wide side
    std::size_t kh, kw;
    std::size_t out_h, out_w;  // narrow side
    std::size_t stride, padding;

    std::size_t col_rows() const { return channels * kh * kw; }
    std::size_t col_cols() const { return out_h * out_w; }
};

// Unfolds image patches into columns: (C*kh*kw) x (out_h*out_w).
void im2col(const double* image, const Geometry& g, double* cols) {
    const auto n = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double* row = cols + ((c * g.kh + ki) * g.kw + kj) * n;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    double* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                                      ? 0.0
                                      : src[ix];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters columns back, accumulating into `image`.
void col2im(const double* cols, const Geometry& g, double* image) {
    const auto n = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * n;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    double* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void check_kernel(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                  std::size_t bias_channels, const char* op) {
    if (input.rank() != 3) throw ShapeMismatch(std::string(op) + ": input must be [C,H,W], got " + shape_string(input.shape()));
    if (kernels.rank() != 4) throw ShapeMismatch(std::string(op) + ": kernels must be rank 4, got " + shape_string(kernels.shape()));
    if (kernels.dim(2) % 2 == 0 || kernels.dim(3) % 2 == 0)
        throw ShapeMismatch(std::string(op) + ": kernel extents must be odd, got " + shape_string(kernels.shape()));
    if (bias.defined() && bias.shape() != Shape{bias_channels})
        throw ShapeMismatch(std::string(op) + ": bias must be [" + std::to_string(bias_channels) + "], got " + shape_string(bias.shape()));
}

void add_bias(const Tensor& bias, std::size_t plane, std::vector<double>& out) {
    if (!bias.defined()) return;
    for (std::size_t c = 0; c < bias.numel(); ++c) {
        const double b = bias[c];
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += b;
    }
}

std::vector<double> bias_grad(std::span<const double> grad_out, std::size_t channels, std::size_t plane) {
    std::vector<double> gb(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) gb[c] += grad_out[c * plane + i];
    return gb;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvOptions& opt) {
    if (opt.stride == 0) throw ShapeMismatch("conv2d: stride must be positive");
    const std::size_t padded = in + 2 * opt.padding;
    if (padded < kernel) {
        throw ShapeMismatch("conv2d: kernel " + std::to_string(kernel) + " larger than padded extent " +
                            std::to_string(padded));
    }
    const std::size_t span = padded - kernel;
    if (span % opt.stride != 0 && !opt.allow_truncation) {
        throw ShapeMismatch("conv2d: output extent (" + std::to_string(in) + " + 2*" + std::to_string(opt.padding) +
                            " - " + std::to_string(kernel) + ")/" + std::to_string(opt.stride) + " is not integral");
    }
    return span / opt.stride + 1;
}

std::size_t conv_transposed_output_extent(std::size_t in, std::size_t kernel, const ConvOptions& opt) {
    if (opt.stride == 0) throw ShapeMismatch("conv2d_transposed: stride must be positive");
    if (in == 0) throw ShapeMismatch("conv2d_transposed: empty input");
    const std::size_t full = (in - 1) * opt.stride + kernel;
    if (full <= 2 * opt.padding) throw ShapeMismatch("conv2d_transposed: padding consumes the whole output");
    return full - 2 * opt.padding;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, const ConvOptions& opt,
              Tape* tape) {
    check_kernel(input, kernels, bias, kernels.rank() == 4 ? kernels.dim(0) : 0, "conv2d");
    const std::size_t c_out = kernels.dim(0);
    if (kernels.dim(1) != input.dim(0)) {
        throw ShapeMismatch("conv2d: kernels expect " + std::to_string(kernels.dim(1)) + " input channels, input has " +
                            std::to_string(input.dim(0)));
    }
    const Geometry g{input.dim(0), input.dim(1), input.dim(2), kernels.dim(2), kernels.dim(3),
                     conv_output_extent(input.dim(1), kernels.dim(2), opt),
                     conv_output_extent(input.dim(2), kernels.dim(3), opt), opt.stride, opt.padding};

    auto cols = std::make_shared<std::vector<double>>(g.col_rows() * g.col_cols());
    im2col(input.data(), g, cols->data());

    std::vector<double> out(c_out * g.col_cols());
    Map(out.data(), c_out, g.col_cols()).noalias() =
        ConstMap(kernels.data(), c_out, g.col_rows()) * ConstMap(cols->data(), g.col_rows(), g.col_cols());
    add_bias(bias, g.col_cols(), out);

    const bool track = tracking(tape, {&input, &kernels, &bias});
    Tensor result({c_out, g.out_h, g.out_w}, std::move(out), track);
    if (track) {
        tape->record("conv2d", result, [input, kernels, bias, g, cols, c_out](std::span<const double> gout, Tape& t) {
            const ConstMap go(gout.data(), c_out, g.col_cols());
            if (kernels.requires_grad()) {
                std::vector<double> gk(kernels.numel());
                Map(gk.data(), c_out, g.col_rows()).noalias() =
                    go * ConstMap(cols->data(), g.col_rows(), g.col_cols()).transpose();
                t.accumulate(kernels, gk);
            }
            if (bias.defined() && bias.requires_grad()) t.accumulate(bias, bias_grad(gout, c_out, g.col_cols()));
            if (input.requires_grad()) {
                std::vector<double> gcols(g.col_rows() * g.col_cols());
                Map(gcols.data(), g.col_rows(), g.col_cols()).noalias() =
                    ConstMap(kernels.data(), c_out, g.col_rows()).transpose() * go;
                std::vector<double> gin(input.numel(), 0.0);
                col2im(gcols.data(), g, gin.data());
                t.accumulate(input, gin);
            }
        });
    }
    return result;
}

Tensor conv2d_transposed(const Tensor& input, const Tensor& kernels, const Tensor& bias, const ConvOptions& opt,
                         Tape* tape) {
    check_kernel(input, kernels, bias, kernels.rank() == 4 ? kernels.dim(1) : 0, "conv2d_transposed");
    const std::size_t c_in = input.dim(0);
    if (kernels.dim(0) != c_in) {
        throw ShapeMismatch("conv2d_transposed: kernels expect " + std::to_string(kernels.dim(0)) +
                            " input channels, input has " + std::to_string(c_in));
    }
    const std::size_t c_out = kernels.dim(1);
    const std::size_t out_h = conv_transposed_output_extent(input.dim(1), kernels.dim(2), opt);
    const std::size_t out_w = conv_transposed_output_extent(input.dim(2), kernels.dim(3), opt);
    // The forward conv of this geometry maps [c_out, out_h, out_w] back to the input extents.
    const Geometry g{c_out, out_h, out_w, kernels.dim(2), kernels.dim(3), input.dim(1), input.dim(2),
                     opt.stride, opt.padding};

    std::vector<double> cols(g.col_rows() * g.col_cols());
    Map(cols.data(), g.col_rows(), g.col_cols()).noalias() =
        ConstMap(kernels.data(), c_in, g.col_rows()).transpose() * ConstMap(input.data(), c_in, g.col_cols());
    std::vector<double> out(c_out * out_h * out_w, 0.0);
    col2im(cols.data(), g, out.data());
    add_bias(bias, out_h * out_w, out);

    const bool track = tracking(tape, {&input, &kernels, &bias});
    Tensor result({c_out, out_h, out_w}, std::move(out), track);
    if (track) {
        tape->record("conv2d_transposed", result, [input, kernels, bias, g, c_in, c_out](std::span<const double> gout, Tape& t) {
            std::vector<double> gcols(g.col_rows() * g.col_cols());
            im2col(gout.data(), g, gcols.data());
            const ConstMap gc(gcols.data(), g.col_rows(), g.col_cols());
            if (kernels.requires_grad()) {
                std::vector<double> gk(kernels.numel());
                Map(gk.data(), c_in, g.col_rows()).noalias() =
                    ConstMap(input.data(), c_in, g.col_cols()) * gc.transpose();
                t.accumulate(kernels, gk);
            }
            if (bias.defined() && bias.requires_grad())
                t.accumulate(bias, bias_grad(gout, c_out, g.height * g.width));
            if (input.requires_grad()) {
                std::vector<double> gin(input.numel());
                Map(gin.data(), c_in, g.col_cols()).noalias() = ConstMap(kernels.data(), c_in, g.col_rows()) * gc;
                t.accumulate(input, gin);
            }
        });
    }
    return result;
}

Tensor relu(const Tensor& x, Tape* tape) {
    std::vector<double> out(x.numel());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    const bool track = tracking(tape, {&x});
    Tensor result(x.shape(), std::move(out), track);
    if (track) {
        tape->record("relu", result, [x](std::span<const double> gout, Tape& t) {
            std::vector<double> g(gout.size());
            const auto xv = x.values();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = xv[i] > 0.0 ? gout[i] : 0.0;
            t.accumulate(x, g);
        });
    }
    return result;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    const bool track = tracking(tape, {&a, &b});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record("add", result, [a, b](std::span<const double> gout, Tape& t) {
            t.accumulate(a, gout);
            t.accumulate(b, gout);
        });
    }
    return result;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    const bool track = tracking(tape, {&a, &b});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record("sub", result, [a, b](std::span<const double> gout, Tape& t) {
            t.accumulate(a, gout);
            if (b.requires_grad()) {
                std::vector<double> g(gout.begin(), gout.end());
                for (auto& v : g) v = -v;
                t.accumulate(b, g);
            }
        });
    }
    return result;
}

Tensor scale(const Tensor& x, double factor, Tape* tape) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    const bool track = tracking(tape, {&x});
    Tensor result(x.shape(), std::move(out), track);
    if (track) {
        tape->record("scale", result, [x, factor](std::span<const double> gout, Tape& t) {
            std::vector<double> g(gout.begin(), gout.end());
            for (auto& v : g) v *= factor;
            t.accumulate(x, g);
        });
    }
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    const bool track = tracking(tape, {&a, &b});
    Tensor result(a.shape(), std::move(out), track);
    if (track) {
        tape->record("mul", result, [a, b](std::span<const double> gout, Tape& t) {
            std::vector<double> g(gout.size());
            if (a.requires_grad()) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] * b[i];
                t.accumulate(a, g);
            }
            if (b.requires_grad()) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[i] * a[i];
                t.accumulate(b, g);
            }
        });
    }
    return result;
}

Tensor sum(const Tensor& x, Tape* tape) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    const bool track = tracking(tape, {&x});
    Tensor result = Tensor::scalar(s, track);
    if (track) {
        tape->record("sum", result, [x](std::span<const double> gout, Tape& t) {
            t.accumulate(x, std::vector<double>(x.numel(), gout[0]));
        });
    }
    return result;
}

Tensor squared_distance(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "squared_distance");
    const std::size_t n = a.numel();
    auto diff = std::make_shared<std::vector<double>>(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        (*diff)[i] = a[i] - b[i];
        s += (*diff)[i] * (*diff)[i];
    }
    const bool track = tracking(tape, {&a, &b});
    Tensor result = Tensor::scalar(s, track);
    if (track) {
        tape->record("squared_distance", result, [a, b, diff](std::span<const double> gout, Tape& t) {
            std::vector<double> g(diff->size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * gout[0] * (*diff)[i];
            t.accumulate(a, g);
            if (b.requires_grad()) {
                for (auto& v : g) v = -v;
                t.accumulate(b, g);
            }
        });
    }
    return result;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape) {
    require_same_shape(pred, target, "mse_loss");
    if (pred.numel() == 0) throw ShapeMismatch("mse_loss: empty tensors");
    return scale(squared_distance(pred, target, tape), 1.0 / static_cast<double>(pred.numel()), tape);
}

}  // namespace redct
