#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace redct {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles, rank 0-4.
//
// A Tensor is a cheap handle onto immutable storage: copies share the same
// values and the same identity. Identity is what the autodiff Tape keys its
// gradient buffers on, so two separately constructed tensors with equal
// values are still distinct nodes. Images are [channels, height, width].
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;

    std::span<const double> values() const;
    const double* data() const { return values().data(); }
    double operator[](std::size_t i) const { return values()[i]; }
    // Single element of a one-element tensor.
    double item() const;

    bool requires_grad() const;
    // Same values, fresh identity, never tracked.
    Tensor detach() const;
    // Same values, fresh identity, tracked as a leaf.
    Tensor as_leaf() const;
    Tensor reshape(Shape shape) const;

    const void* id() const noexcept { return impl_.get(); }

    // Bitwise equality of shape and values.
    bool identical(const Tensor& other) const;

private:
    struct Impl {
        Shape shape;
        std::vector<double> values;
        bool requires_grad = false;
    };
    std::shared_ptr<const Impl> impl_;
};

}  // namespace redct
