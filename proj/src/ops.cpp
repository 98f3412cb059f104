#include "sky/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace sky {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

bool any_wants_grad(std::initializer_list<const Tensor*> ts) {
    if (!Tape::recording()) return false;
    for (const Tensor* t : ts) {
        if (t->defined() && wants_grad(*t->impl())) return true;
    }
    return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// C (M x N) = A (M x K) * B (K x N) on row-major buffers; optionally C += A*B.
void gemm(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
          std::int64_t n, bool accumulate) {
    MapConst A(a, m, k), B(b, k, n);
    MapMat C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C (M x N) += A^T with A (K x M), times B (K x N).
void gemm_at(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
    MapConst A(a, k, m), B(b, k, n);
    MapMat C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

// C (M x N) += A (M x K) times B^T with B (N x K).
void gemm_bt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
    MapConst A(a, m, k), B(b, n, k);
    MapMat C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// Unfold one I*H*W image into (I*kh*kw) x (OH*OW) with zero padding.
void im2col(const double* x, std::int64_t ic, std::int64_t h, std::int64_t w,
            const Conv2dSpec& s, std::int64_t oh, std::int64_t ow, double* col) {
    const std::int64_t plane = oh * ow;
    for (std::int64_t i = 0; i < ic; ++i) {
        const double* xp = x + i * h * w;
        for (int ky = 0; ky < s.kernel_h; ++ky) {
            for (int kx = 0; kx < s.kernel_w; ++kx) {
                double* out = col + ((i * s.kernel_h + ky) * s.kernel_w + kx) * plane;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * s.stride_h - s.pad_h + std::int64_t(ky) * s.dilation;
                    if (iy < 0 || iy >= h) {
                        std::fill(out + oy * ow, out + (oy + 1) * ow, 0.0);
                        continue;
                    }
                    const double* row = xp + iy * w;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * s.stride_w - s.pad_w + std::int64_t(kx) * s.dilation;
                        out[oy * ow + ox] = (ix >= 0 && ix < w) ? row[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Fold gradient columns back onto a zero-initialized I*H*W gradient image.
void col2im_add(const double* col, std::int64_t ic, std::int64_t h, std::int64_t w,
                const Conv2dSpec& s, std::int64_t oh, std::int64_t ow, double* dx) {
    const std::int64_t plane = oh * ow;
    for (std::int64_t i = 0; i < ic; ++i) {
        double* dxp = dx + i * h * w;
        for (int ky = 0; ky < s.kernel_h; ++ky) {
            for (int kx = 0; kx < s.kernel_w; ++kx) {
                const double* in = col + ((i * s.kernel_h + ky) * s.kernel_w + kx) * plane;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * s.stride_h - s.pad_h + std::int64_t(ky) * s.dilation;
                    if (iy < 0 || iy >= h) continue;
                    double* row = dxp + iy * w;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const std::int64_t ix = ox * s.stride_w - s.pad_w + std::int64_t(kx) * s.dilation;
                        if (ix >= 0 && ix < w) row[ix] += in[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void Conv2dSpec::validate() const {
    if (kernel_h < 1 || kernel_w < 1 || stride_h < 1 || stride_w < 1 || dilation < 1)
        throw SpecError("conv2d: kernel, stride and dilation must be >= 1");
    if (pad_h < 0 || pad_w < 0) throw SpecError("conv2d: padding must be >= 0");
}

std::int64_t Conv2dSpec::out_h(std::int64_t in_h) const {
    return (in_h + 2 * pad_h - std::int64_t(dilation) * (kernel_h - 1) - 1) / stride_h + 1;
}

std::int64_t Conv2dSpec::out_w(std::int64_t in_w) const {
    return (in_w + 2 * pad_w - std::int64_t(dilation) * (kernel_w - 1) - 1) / stride_w + 1;
}

Conv2dSpec conv_spec(int kernel, int padding, int dilation) {
    Conv2dSpec s;
    s.kernel_h = s.kernel_w = kernel;
    s.pad_h = s.pad_w = padding;
    s.dilation = dilation;
    return s;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dSpec& spec) {
    spec.validate();
    if (input.ndim() != 4) throw ShapeError("conv2d: input must be N*C*H*W, got " + shape_str(input.shape()));
    if (weight.ndim() != 4) throw ShapeError("conv2d: weight must be O*I*kh*kw, got " + shape_str(weight.shape()));
    const std::int64_t n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t oc = weight.dim(0);
    if (weight.dim(1) != ic)
        throw ShapeError("conv2d: input has " + std::to_string(ic) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
    if (weight.dim(2) != spec.kernel_h || weight.dim(3) != spec.kernel_w)
        throw ShapeError("conv2d: weight kernel dims " + shape_str(weight.shape()) +
                         " do not match spec kernel");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != oc))
        throw ShapeError("conv2d: bias must have shape [" + std::to_string(oc) + "]");
    const std::int64_t oh = spec.out_h(h), ow = spec.out_w(w);
    if (oh < 1 || ow < 1)
        throw SpecError("conv2d: non-positive output size " + std::to_string(oh) + "x" +
                        std::to_string(ow) + " for input " + shape_str(input.shape()));

    const std::int64_t kk = std::int64_t(spec.kernel_h) * spec.kernel_w;
    const std::int64_t plane = oh * ow;
    Tensor out = Tensor::zeros({n, oc, oh, ow});

    std::vector<double> col(static_cast<std::size_t>(ic * kk * plane));
    for (std::int64_t b = 0; b < n; ++b) {
        im2col(input.data() + b * ic * h * w, ic, h, w, spec, oh, ow, col.data());
        gemm(weight.data(), col.data(), out.data() + b * oc * plane, oc, ic * kk, plane, false);
        if (bias.defined()) {
            double* op = out.data() + b * oc * plane;
            for (std::int64_t o = 0; o < oc; ++o) {
                const double bv = bias.data()[o];
                for (std::int64_t p = 0; p < plane; ++p) op[o * plane + p] += bv;
            }
        }
    }

    if (any_wants_grad({&input, &weight, &bias})) {
        TapeNode node;
        node.op = "conv2d";
        node.inputs = {input.impl(), weight.impl()};
        if (bias.defined()) node.inputs.push_back(bias.impl());
        node.output = out.impl();
        auto in_impl = input.impl();
        auto w_impl = weight.impl();
        auto b_impl = bias.defined() ? bias.impl() : nullptr;
        auto out_impl = out.impl();
        node.backward = [in_impl, w_impl, b_impl, out_impl, spec, n, ic, h, w, oc, oh, ow, kk,
                         plane]() {
            const std::vector<double>& g = out_impl->grad;
            const bool need_dx = wants_grad(*in_impl);
            const bool need_dw = wants_grad(*w_impl);
            if (need_dw && w_impl->grad.empty()) w_impl->grad.assign(w_impl->data.size(), 0.0);
            if (need_dx && in_impl->grad.empty()) in_impl->grad.assign(in_impl->data.size(), 0.0);
            std::vector<double> col(static_cast<std::size_t>(ic * kk * plane));
            std::vector<double> dcol(need_dx ? static_cast<std::size_t>(ic * kk * plane) : 0);
            for (std::int64_t b = 0; b < n; ++b) {
                const double* gb = g.data() + b * oc * plane;
                if (need_dw) {
                    im2col(in_impl->data.data() + b * ic * h * w, ic, h, w, spec, oh, ow, col.data());
                    gemm_bt(gb, col.data(), w_impl->grad.data(), oc, plane, ic * kk, true);
                }
                if (need_dx) {
                    gemm_at(w_impl->data.data(), gb, dcol.data(), ic * kk, oc, plane, false);
                    col2im_add(dcol.data(), ic, h, w, spec, oh, ow,
                               in_impl->grad.data() + b * ic * h * w);
                }
            }
            if (b_impl && wants_grad(*b_impl)) {
                if (b_impl->grad.empty()) b_impl->grad.assign(b_impl->data.size(), 0.0);
                for (std::int64_t b = 0; b < n; ++b)
                    for (std::int64_t o = 0; o < oc; ++o) {
                        double s = 0.0;
                        const double* gp = g.data() + (b * oc + o) * plane;
                        for (std::int64_t p = 0; p < plane; ++p) s += gp[p];
                        b_impl->grad[static_cast<std::size_t>(o)] += s;
                    }
            }
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor max_pool2d(const Tensor& input, int window_h, int window_w, int stride_h, int stride_w) {
    if (input.ndim() != 4) throw ShapeError("max_pool2d: input must be N*C*H*W");
    if (window_h < 1 || window_w < 1 || stride_h < 1 || stride_w < 1)
        throw SpecError("max_pool2d: window and stride must be >= 1");
    const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (window_h > h || window_w > w)
        throw SpecError("max_pool2d: window " + std::to_string(window_h) + "x" +
                        std::to_string(window_w) + " larger than input " + std::to_string(h) + "x" +
                        std::to_string(w));
    const std::int64_t oh = (h - window_h) / stride_h + 1;
    const std::int64_t ow = (w - window_w) / stride_w + 1;

    Tensor out = Tensor::zeros({n, c, oh, ow});
    // argmax flat indices into the input, first occurrence in row-major order
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * oh * ow));
    const double* x = input.data();
    double* y = out.data();
    std::int64_t oi = 0;
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* plane = x + (b * c + ch) * h * w;
            const std::int64_t base = (b * c + ch) * h * w;
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_ix = -1;
                    for (int ky = 0; ky < window_h; ++ky)
                        for (int kx = 0; kx < window_w; ++kx) {
                            const std::int64_t iy = oy * stride_h + ky;
                            const std::int64_t ix = ox * stride_w + kx;
                            const double v = plane[iy * w + ix];
                            if (v > best) {
                                best = v;
                                best_ix = base + iy * w + ix;
                            }
                        }
                    y[oi] = best;
                    (*argmax)[static_cast<std::size_t>(oi)] = best_ix;
                }
        }

    if (any_wants_grad({&input})) {
        TapeNode node;
        node.op = "max_pool2d";
        node.inputs = {input.impl()};
        node.output = out.impl();
        auto in_impl = input.impl();
        auto out_impl = out.impl();
        node.backward = [in_impl, out_impl, argmax]() {
            if (in_impl->grad.empty()) in_impl->grad.assign(in_impl->data.size(), 0.0);
            const std::vector<double>& g = out_impl->grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                in_impl->grad[static_cast<std::size_t>((*argmax)[i])] += g[i];
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const double* x = input.data();
    double* y = out.data();
    const std::int64_t n = input.numel();
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;

    if (any_wants_grad({&input})) {
        TapeNode node;
        node.op = "relu";
        node.inputs = {input.impl()};
        node.output = out.impl();
        auto in_impl = input.impl();
        auto out_impl = out.impl();
        node.backward = [in_impl, out_impl]() {
            if (in_impl->grad.empty()) in_impl->grad.assign(in_impl->data.size(), 0.0);
            const std::vector<double>& g = out_impl->grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (in_impl->data[i] > 0.0) in_impl->grad[i] += g[i];
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor softmax(const Tensor& input, int axis) {
    const auto& shape = input.shape();
    if (axis < 0) axis += static_cast<int>(shape.size());
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw ShapeError("softmax: axis out of range for " + shape_str(shape));

    const std::int64_t axis_len = shape[static_cast<std::size_t>(axis)];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) inner *= shape[static_cast<std::size_t>(i)];

    Tensor out = Tensor::zeros(shape);
    const double* x = input.data();
    double* y = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * axis_len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t k = 0; k < axis_len; ++k) mx = std::max(mx, x[base + k * inner]);
            double denom = 0.0;
            for (std::int64_t k = 0; k < axis_len; ++k) {
                const double e = std::exp(x[base + k * inner] - mx);
                y[base + k * inner] = e;
                denom += e;
            }
            for (std::int64_t k = 0; k < axis_len; ++k) y[base + k * inner] /= denom;
        }

    if (any_wants_grad({&input})) {
        TapeNode node;
        node.op = "softmax";
        node.inputs = {input.impl()};
        node.output = out.impl();
        auto in_impl = input.impl();
        auto out_impl = out.impl();
        node.backward = [in_impl, out_impl, outer, inner, axis_len]() {
            if (in_impl->grad.empty()) in_impl->grad.assign(in_impl->data.size(), 0.0);
            const std::vector<double>& g = out_impl->grad;
            const std::vector<double>& y = out_impl->data;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * axis_len * inner + in;
                    double dot = 0.0;
                    for (std::int64_t k = 0; k < axis_len; ++k) {
                        const std::size_t ix = static_cast<std::size_t>(base + k * inner);
                        dot += g[ix] * y[ix];
                    }
                    for (std::int64_t k = 0; k < axis_len; ++k) {
                        const std::size_t ix = static_cast<std::size_t>(base + k * inner);
                        in_impl->grad[ix] += y[ix] * (g[ix] - dot);
                    }
                }
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: expects 2-D tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Tensor out = Tensor::zeros({m, n});
    gemm(a.data(), b.data(), out.data(), m, k, n, false);

    if (any_wants_grad({&a, &b})) {
        TapeNode node;
        node.op = "matmul";
        node.inputs = {a.impl(), b.impl()};
        node.output = out.impl();
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        node.backward = [ai, bi, oi, m, k, n]() {
            const double* g = oi->grad.data();
            if (wants_grad(*ai)) {
                if (ai->grad.empty()) ai->grad.assign(ai->data.size(), 0.0);
                gemm_bt(g, bi->data.data(), ai->grad.data(), m, n, k, true);  // dA = g * B^T
            }
            if (wants_grad(*bi)) {
                if (bi->grad.empty()) bi->grad.assign(bi->data.size(), 0.0);
                gemm_at(ai->data.data(), g, bi->grad.data(), k, m, n, true);  // dB = A^T * g
            }
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose2d: expects a 2-D tensor");
    const std::int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const double* x = a.data();
    double* y = out.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];

    if (any_wants_grad({&a})) {
        TapeNode node;
        node.op = "transpose2d";
        node.inputs = {a.impl()};
        node.output = out.impl();
        auto ai = a.impl(), oi = out.impl();
        node.backward = [ai, oi, m, n]() {
            if (ai->grad.empty()) ai->grad.assign(ai->data.size(), 0.0);
            const double* g = oi->grad.data();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    ai->grad[static_cast<std::size_t>(i * n + j)] += g[j * m + i];
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor bilinear_sample(const Tensor& input, const Tensor& location) {
    if (input.ndim() != 3) throw ShapeError("bilinear_sample: input must be C*H*W");
    if (location.numel() != 2) throw ShapeError("bilinear_sample: location must have 2 elements (y, x)");
    const std::int64_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const double y = location.data()[0], x = location.data()[1];

    Tensor out = Tensor::zeros({c});
    const bool inside = !(y <= -1.0 || y >= double(h) || x <= -1.0 || x >= double(w));
    std::int64_t y0 = 0, x0 = 0;
    double ly = 0.0, lx = 0.0;
    if (inside) {
        y0 = static_cast<std::int64_t>(std::floor(y));
        x0 = static_cast<std::int64_t>(std::floor(x));
        ly = y - double(y0);
        lx = x - double(x0);
        const double* in = input.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double* p = in + ch * h * w;
            auto px = [&](std::int64_t yy, std::int64_t xx) -> double {
                return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? p[yy * w + xx] : 0.0;
            };
            out.data()[ch] = (1 - ly) * (1 - lx) * px(y0, x0) + (1 - ly) * lx * px(y0, x0 + 1) +
                             ly * (1 - lx) * px(y0 + 1, x0) + ly * lx * px(y0 + 1, x0 + 1);
        }
    }

    if (any_wants_grad({&input, &location})) {
        TapeNode node;
        node.op = "bilinear_sample";
        node.inputs = {input.impl(), location.impl()};
        node.output = out.impl();
        auto ii = input.impl(), li = location.impl(), oi = out.impl();
        node.backward = [ii, li, oi, c, h, w, inside, y0, x0, ly, lx]() {
            if (!inside) return;  // zero everywhere, zero gradient
            const std::vector<double>& g = oi->grad;
            const bool need_dx = wants_grad(*ii);
            const bool need_dl = wants_grad(*li);
            if (need_dx && ii->grad.empty()) ii->grad.assign(ii->data.size(), 0.0);
            double dy = 0.0, dxl = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double* p = ii->data.data() + ch * h * w;
                double* dp = need_dx ? ii->grad.data() + ch * h * w : nullptr;
                auto px = [&](std::int64_t yy, std::int64_t xx) -> double {
                    return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? p[yy * w + xx] : 0.0;
                };
                auto addpx = [&](std::int64_t yy, std::int64_t xx, double v) {
                    if (dp && yy >= 0 && yy < h && xx >= 0 && xx < w) dp[yy * w + xx] += v;
                };
                const double gc = g[static_cast<std::size_t>(ch)];
                addpx(y0, x0, gc * (1 - ly) * (1 - lx));
                addpx(y0, x0 + 1, gc * (1 - ly) * lx);
                addpx(y0 + 1, x0, gc * ly * (1 - lx));
                addpx(y0 + 1, x0 + 1, gc * ly * lx);
                if (need_dl) {
                    dy += gc * ((px(y0 + 1, x0) - px(y0, x0)) * (1 - lx) +
                                (px(y0 + 1, x0 + 1) - px(y0, x0 + 1)) * lx);
                    dxl += gc * ((px(y0, x0 + 1) - px(y0, x0)) * (1 - ly) +
                                 (px(y0 + 1, x0 + 1) - px(y0 + 1, x0)) * ly);
                }
            }
            if (need_dl) {
                if (li->grad.empty()) li->grad.assign(2, 0.0);
                li->grad[0] += dy;
                li->grad[1] += dxl;
            }
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw ShapeError("concat_channels: empty input list");
    const std::int64_t n = inputs[0].dim(0), h = inputs[0].dim(2), w = inputs[0].dim(3);
    std::int64_t total_c = 0;
    for (const Tensor& t : inputs) {
        if (t.ndim() != 4) throw ShapeError("concat_channels: inputs must be N*C*H*W");
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
            throw ShapeError("concat_channels: spatial/batch mismatch: " + shape_str(t.shape()) +
                             " vs " + shape_str(inputs[0].shape()));
        total_c += t.dim(1);
    }
    Tensor out = Tensor::zeros({n, total_c, h, w});
    const std::int64_t plane = h * w;
    for (std::int64_t b = 0; b < n; ++b) {
        std::int64_t coff = 0;
        for (const Tensor& t : inputs) {
            const std::int64_t tc = t.dim(1);
            std::memcpy(out.data() + (b * total_c + coff) * plane, t.data() + b * tc * plane,
                        static_cast<std::size_t>(tc * plane) * sizeof(double));
            coff += tc;
        }
    }

    bool needs = false;
    for (const Tensor& t : inputs)
        if (Tape::recording() && wants_grad(*t.impl())) needs = true;
    if (needs) {
        TapeNode node;
        node.op = "concat_channels";
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const Tensor& t : inputs) impls.push_back(t.impl());
        node.inputs = impls;
        node.output = out.impl();
        auto oi = out.impl();
        node.backward = [impls, oi, n, total_c, h, w]() {
            const std::int64_t plane = h * w;
            const double* g = oi->grad.data();
            for (std::int64_t b = 0; b < n; ++b) {
                std::int64_t coff = 0;
                for (auto& ti : impls) {
                    const std::int64_t tc = ti->shape[1];
                    if (wants_grad(*ti)) {
                        if (ti->grad.empty()) ti->grad.assign(ti->data.size(), 0.0);
                        const double* gp = g + (b * total_c + coff) * plane;
                        double* dp = ti->grad.data() + b * tc * plane;
                        for (std::int64_t i = 0; i < tc * plane; ++i) dp[i] += gp[i];
                    }
                    coff += tc;
                }
            }
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, BwdA ga,
                          BwdB gb) {
    check_same_shape(a, b, name);
    Tensor out = Tensor::zeros(a.shape());
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = fwd(ap[i], bp[i]);

    if (any_wants_grad({&a, &b})) {
        TapeNode node;
        node.op = name;
        node.inputs = {a.impl(), b.impl()};
        node.output = out.impl();
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        node.backward = [ai, bi, oi, ga, gb]() {
            const std::vector<double>& g = oi->grad;
            if (wants_grad(*ai)) {
                if (ai->grad.empty()) ai->grad.assign(ai->data.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += ga(g[i], ai->data[i], bi->data[i]);
            }
            if (wants_grad(*bi)) {
                if (bi->grad.empty()) bi->grad.assign(bi->data.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i)
                    bi->grad[i] += gb(g[i], ai->data[i], bi->data[i]);
            }
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const double* ap = a.data();
    double* op = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] * s;

    if (any_wants_grad({&a})) {
        TapeNode node;
        node.op = "scale";
        node.inputs = {a.impl()};
        node.output = out.impl();
        auto ai = a.impl(), oi = out.impl();
        node.backward = [ai, oi, s]() {
            if (ai->grad.empty()) ai->grad.assign(ai->data.size(), 0.0);
            const std::vector<double>& g = oi->grad;
            for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * s;
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("scale_by: scalar tensor must have one element");
    const double sv = s.data()[0];
    Tensor out = Tensor::zeros(a.shape());
    const double* ap = a.data();
    double* op = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] * sv;

    if (any_wants_grad({&a, &s})) {
        TapeNode node;
        node.op = "scale_by";
        node.inputs = {a.impl(), s.impl()};
        node.output = out.impl();
        auto ai = a.impl(), si = s.impl(), oi = out.impl();
        node.backward = [ai, si, oi]() {
            const std::vector<double>& g = oi->grad;
            const double sv = si->data[0];
            if (wants_grad(*ai)) {
                if (ai->grad.empty()) ai->grad.assign(ai->data.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * sv;
            }
            if (wants_grad(*si)) {
                if (si->grad.empty()) si->grad.assign(1, 0.0);
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * ai->data[i];
                si->grad[0] += acc;
            }
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out = Tensor::scalar(s);

    if (any_wants_grad({&a})) {
        TapeNode node;
        node.op = "sum";
        node.inputs = {a.impl()};
        node.output = out.impl();
        auto ai = a.impl(), oi = out.impl();
        node.backward = [ai, oi]() {
            if (ai->grad.empty()) ai->grad.assign(ai->data.size(), 0.0);
            const double g = oi->grad[0];
            for (auto& v : ai->grad) v += g;
        };
        Tape::active()->record(std::move(node));
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor out(std::move(shape), a.values());

    if (any_wants_grad({&a})) {
        TapeNode node;
        node.op = "reshape";
        node.inputs = {a.impl()};
        node.output = out.impl();
        auto ai = a.impl(), oi = out.impl();
        node.backward = [ai, oi]() { accumulate_grad(*ai, oi->grad); };
        Tape::active()->record(std::move(node));
    }
    return out;
}

}  // namespace sky
