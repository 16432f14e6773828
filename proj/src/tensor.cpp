#include "redct/tensor.hpp"

#include <cstring>
#include <numeric>
#include <sstream>

#include "redct/errors.hpp"

namespace redct {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape.size() > 4) throw ShapeMismatch("tensor rank above 4: " + shape_string(shape));
    if (shape_numel(shape) != values.size()) {
        throw ShapeMismatch("shape " + shape_string(shape) + " needs " +
                            std::to_string(shape_numel(shape)) + " values, got " +
                            std::to_string(values.size()));
    }
    impl_ = std::make_shared<const Impl>(Impl{std::move(shape), std::move(values), requires_grad});
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ShapeMismatch("use of an undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::numel() const { return values().size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeMismatch("axis out of range for " + shape_string(s));
    return s[axis];
}

std::span<const double> Tensor::values() const {
    if (!impl_) throw ShapeMismatch("use of an undefined tensor");
    return impl_->values;
}

double Tensor::item() const {
    if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_string(shape()));
    return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->values, false); }

Tensor Tensor::as_leaf() const { return Tensor(shape(), impl_->values, true); }

Tensor Tensor::reshape(Shape shape) const {
    return Tensor(std::move(shape), impl_->values, requires_grad());
}

bool Tensor::identical(const Tensor& other) const {
    if (!defined() || !other.defined()) return defined() == other.defined();
    if (shape() != other.shape()) return false;
    return std::memcmp(data(), other.data(), numel() * sizeof(double)) == 0;
}

}  // namespace redct
