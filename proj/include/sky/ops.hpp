#pragma once

#include "sky/tape.hpp"
#include "sky/tensor.hpp"

namespace sky {

/// Geometry of a 2-D convolution. Kernel taps are spaced by `dilation`;
/// padding is zero-filled.
struct Conv2dSpec {
    int kernel_h = 3, kernel_w = 3;
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
    int dilation = 1;

    void validate() const;
    std::int64_t out_h(std::int64_t in_h) const;
    std::int64_t out_w(std::int64_t in_w) const;
};

/// Square-kernel helper: kernel k, stride 1, given padding and dilation.
Conv2dSpec conv_spec(int kernel, int padding, int dilation = 1);

// ---- forward ops (all record gradient rules on the active tape) ----

/// input N*I*H*W, weight O*I*kh*kw, optional bias O (pass undefined Tensor for none).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dSpec& spec);

Tensor max_pool2d(const Tensor& input, int window_h = 2, int window_w = 2, int stride_h = 2,
                  int stride_w = 2);

Tensor relu(const Tensor& input);

/// Numerically stable softmax along `axis` (max-subtraction).
Tensor softmax(const Tensor& input, int axis);

/// 2-D matrix product (M*K)x(K*N).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose2d(const Tensor& a);

/// Sample a C*H*W tensor at fractional location (y, x) given as a 2-element
/// tensor. Locations fully outside [-1, H]x[-1, W] contribute zero. Gradients
/// flow to both the pixels and the location.
Tensor bilinear_sample(const Tensor& input, const Tensor& location);

/// Channel-axis concatenation of N*Ci*H*W tensors.
Tensor concat_channels(const std::vector<Tensor>& inputs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Multiply by a learnable single-element tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);

/// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& a);

/// Same data, new shape (numel preserved).
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace sky
