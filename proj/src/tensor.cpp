#include "sky/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sky {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got shape " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)), value);
    return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

const double* Tensor::data() const { return values().data(); }
double* Tensor::data() { return values().data(); }

const std::vector<double>& Tensor::values() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_->data;
}

std::vector<double>& Tensor::values() {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
    return values()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    if (!impl_) throw ContractError("use of undefined tensor");
    impl_->requires_grad = rg;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
    if (!impl_) throw ContractError("use of undefined tensor");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

bool Tensor::all_finite() const {
    for (double v : values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::detached_clone() const {
    return Tensor(shape(), values(), false);
}

std::int64_t Tensor::flat_offset(std::initializer_list<std::int64_t> idx) const {
    const auto& s = shape();
    std::int64_t off = 0;
    auto it = idx.begin();
    for (std::size_t i = 0; i < s.size(); ++i, ++it) {
        off = off * s[i] + *it;
    }
    return off;
}

void accumulate_grad(TensorImpl& t, const std::vector<double>& g) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}

}  // namespace sky
