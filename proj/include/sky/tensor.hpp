#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sky/errors.hpp"

namespace sky {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    bool on_tape = false;  // produced by a recorded operation
};

/// Dense row-major N-dimensional tensor of 64-bit floats.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// immutable once the tensor has entered a computation; the only sanctioned
/// mutation after that point is gradient accumulation during backward and
/// optimizer updates on leaf parameters between tapes.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    std::int64_t dim(int axis) const;
    std::int64_t numel() const;

    const double* data() const;
    double* data();
    const std::vector<double>& values() const;
    std::vector<double>& values();

    /// Element access by multi-index, e.g. t(n, c, h, w). Bounds unchecked.
    template <typename... Ix>
    double& operator()(Ix... ix) {
        return data()[flat_offset({static_cast<std::int64_t>(ix)...})];
    }
    template <typename... Ix>
    double operator()(Ix... ix) const {
        return data()[flat_offset({static_cast<std::int64_t>(ix)...})];
    }

    /// Value of a single-element tensor.
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool rg);
    bool has_grad() const;
    const std::vector<double>& grad() const;
    /// Gradient buffer, zero-allocated on first use.
    std::vector<double>& mutable_grad();
    void zero_grad();

    bool all_finite() const;

    /// Deep copy with no tape linkage and no gradient.
    Tensor detached_clone() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::int64_t flat_offset(std::initializer_list<std::int64_t> idx) const;

    std::shared_ptr<TensorImpl> impl_;
};

/// True when a backward pass should deposit a gradient into this tensor.
inline bool wants_grad(const TensorImpl& t) { return t.requires_grad || t.on_tape; }

/// Accumulate g into t.grad, allocating zeros on first touch.
void accumulate_grad(TensorImpl& t, const std::vector<double>& g);

}  // namespace sky
