#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sky/grad_check.hpp"
#include "sky/ops.hpp"
#include "sky/rng.hpp"
#include "sky/tape.hpp"

using namespace sky;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from_values(std::move(shape), std::move(v));
}

// Direct six-nested-loop convolution, independent of the im2col path.
Tensor conv2d_oracle(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     const Conv2dSpec& s) {
    const std::int64_t n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t oc = weight.dim(0);
    const std::int64_t oh = s.out_h(h), ow = s.out_w(w);
    Tensor out = Tensor::zeros({n, oc, oh, ow});
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t o = 0; o < oc; ++o)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    double acc = bias.defined() ? bias(o) : 0.0;
                    for (std::int64_t i = 0; i < ic; ++i)
                        for (int ky = 0; ky < s.kernel_h; ++ky)
                            for (int kx = 0; kx < s.kernel_w; ++kx) {
                                const std::int64_t iy = oy * s.stride_h - s.pad_h + std::int64_t(ky) * s.dilation;
                                const std::int64_t ix = ox * s.stride_w - s.pad_w + std::int64_t(kx) * s.dilation;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += weight(o, i, std::int64_t(ky), std::int64_t(kx)) * input(b, i, iy, ix);
                            }
                    out(b, o, oy, ox) = acc;
                }
    return out;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
    REQUIRE(a.shape() == b.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (tol == 0.0)
            CHECK(a.data()[i] == b.data()[i]);
        else
            CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(tol).scale(1.0));
    }
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
    Rng rng(1);
    Tensor x = random_tensor({1, 1, 3, 3}, rng);
    Tensor w = Tensor::from_values({1, 1, 1, 1}, {1.0});
    Tensor y = conv2d(x, w, Tensor(), conv_spec(1, 0));
    for (std::int64_t i = 0; i < 9; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 sums the window") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, w, Tensor(), conv_spec(3, 0));
    REQUIRE(y.numel() == 1);
    CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d matches direct-loop oracle with dilation and padding") {
    Rng rng(2);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Conv2dSpec s = conv_spec(3, 2, 2);
    check_close(conv2d(x, w, b, s), conv2d_oracle(x, w, b, s), 1e-12);
}

TEST_CASE("conv2d oracle agreement over assorted geometries") {
    Rng rng(3);
    struct Geo { int ih, iw, ic, oc, k, stride, pad, dil; };
    for (const Geo g : {Geo{7, 9, 3, 2, 3, 1, 1, 1}, Geo{8, 8, 1, 4, 3, 2, 1, 1},
                        Geo{12, 13, 2, 2, 3, 1, 4, 4}, Geo{6, 6, 2, 3, 1, 1, 0, 1}}) {
        Tensor x = random_tensor({2, g.ic, g.ih, g.iw}, rng);
        Tensor w = random_tensor({g.oc, g.ic, g.k, g.k}, rng);
        Conv2dSpec s = conv_spec(g.k, g.pad, g.dil);
        s.stride_h = s.stride_w = g.stride;
        check_close(conv2d(x, w, Tensor(), s), conv2d_oracle(x, w, Tensor(), s), 1e-12);
    }
}

TEST_CASE("dilated conv equals dilation-1 conv on a zero-interleaved kernel") {
    Rng rng(4);
    for (int dil : {2, 3, 4}) {
        Tensor x = random_tensor({1, 2, 16, 16}, rng);
        Tensor w = random_tensor({2, 2, 3, 3}, rng);
        // expand 3x3 kernel to (2*dil+1)x(2*dil+1) with zeros between taps
        const int ek = 2 * dil + 1;
        Tensor we = Tensor::zeros({2, 2, ek, ek});
        for (std::int64_t o = 0; o < 2; ++o)
            for (std::int64_t i = 0; i < 2; ++i)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        we(o, i, std::int64_t(ky) * dil, std::int64_t(kx) * dil) = w(o, i, ky, kx);
        Tensor y1 = conv2d(x, w, Tensor(), conv_spec(3, dil, dil));
        Tensor y2 = conv2d(x, we, Tensor(), conv_spec(ek, dil, 1));
        check_close(y1, y2, 1e-12);
    }
}

TEST_CASE("conv2d error paths") {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w, Tensor(), conv_spec(3, 1)), ShapeError);

    Tensor w2 = Tensor::zeros({1, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w2, Tensor(), conv_spec(3, 0, 4)), SpecError);
}

TEST_CASE("max_pool2d basics") {
    Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = max_pool2d(x);
    REQUIRE(y.numel() == 1);
    CHECK(y.item() == 4.0);

    Tensor c = Tensor::full({1, 2, 4, 6}, 3.5);
    Tensor yc = max_pool2d(c);
    CHECK(yc.shape() == Shape{1, 2, 2, 3});
    for (std::int64_t i = 0; i < yc.numel(); ++i) CHECK(yc.data()[i] == 3.5);

    CHECK_THROWS_AS(max_pool2d(Tensor::zeros({1, 1, 1, 4})), SpecError);
}

TEST_CASE("max_pool2d matches sliding-window oracle") {
    Rng rng(5);
    Tensor x = random_tensor({1, 1, 6, 6}, rng);
    Tensor y = max_pool2d(x);
    for (std::int64_t oy = 0; oy < 3; ++oy)
        for (std::int64_t ox = 0; ox < 3; ++ox) {
            double best = -1e300;
            for (int ky = 0; ky < 2; ++ky)
                for (int kx = 0; kx < 2; ++kx)
                    best = std::max(best, x(std::int64_t(0), std::int64_t(0), 2 * oy + ky, 2 * ox + kx));
            CHECK(y(std::int64_t(0), std::int64_t(0), oy, ox) == best);
        }
}

TEST_CASE("max_pool2d routes gradient to first argmax on ties") {
    Tape tape;
    Tensor x = Tensor::from_values({1, 1, 2, 2}, {7, 7, 7, 7}, true);
    tape.backward(sum(max_pool2d(x)));
    CHECK(x.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("relu forward and gradient") {
    Tensor x = Tensor::from_values({3}, {-1, 0, 2});
    Tensor y = relu(x);
    CHECK(y.values() == std::vector<double>{0, 0, 2});

    Tensor neg = Tensor::full({2, 3}, -4.0);
    Tensor yn = relu(neg);
    for (double v : yn.values()) CHECK(v == 0.0);

    Tape tape;
    Tensor x2 = Tensor::from_values({2}, {-1, 2}, true);
    tape.backward(sum(relu(x2)));
    CHECK(x2.grad() == std::vector<double>{0, 1});
}

TEST_CASE("softmax properties") {
    Tensor x = Tensor::from_values({2}, {0, 0});
    Tensor y = softmax(x, 0);
    CHECK(y.data()[0] == doctest::Approx(0.5));
    CHECK(y.data()[1] == doctest::Approx(0.5));

    Tensor big = Tensor::from_values({2}, {1000, 0});
    Tensor yb = softmax(big, 0);
    CHECK(yb.all_finite());
    CHECK(yb.data()[0] == doctest::Approx(1.0));
    CHECK(yb.data()[1] == doctest::Approx(0.0).scale(1.0));

    Tensor t = Tensor::from_values({3}, {1, 2, 3});
    Tensor yt = softmax(t, 0);
    double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i)
        CHECK(yt.data()[i] == doctest::Approx(std::exp(double(i + 1)) / denom).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(6);
    Tensor x = random_tensor({5, 7}, rng, 3.0);
    Tensor y = softmax(x, 1);
    for (std::int64_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::int64_t c = 0; c < 7; ++c) s += y(r, c);
        CHECK(std::fabs(s - 1.0) <= 1e-9);
    }

    Tensor shifted = Tensor::zeros({5, 7});
    for (std::int64_t r = 0; r < 5; ++r)
        for (std::int64_t c = 0; c < 7; ++c) shifted(r, c) = x(r, c) + 17.25;
    Tensor y2 = softmax(shifted, 1);
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-12));
}

TEST_CASE("matmul identity and triple-loop oracle") {
    Rng rng(7);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
    check_close(matmul(eye, a), a, 1e-15);

    Tensor p = random_tensor({2, 3}, rng);
    Tensor q = random_tensor({3, 2}, rng);
    Tensor y = matmul(p, q);
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < 3; ++k) acc += p(i, k) * q(k, j);
            CHECK(y(i, j) == doctest::Approx(acc).epsilon(1e-13));
        }

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(8);
    Tensor b = random_tensor({3, 3}, rng);
    auto f = [&](const Tensor& a) { return sum(mul(matmul(a, b), matmul(a, b))); };
    GradCheckReport r = grad_check(f, random_tensor({3, 3}, rng), 1e-6, 1e-4);
    CHECK(r.pass);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("transpose2d round trip and gradient") {
    Rng rng(9);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor t = transpose2d(a);
    CHECK(t.shape() == Shape{4, 3});
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 4; ++j) CHECK(t(j, i) == a(i, j));

    auto f = [](const Tensor& x) { return sum(mul(transpose2d(x), transpose2d(x))); };
    CHECK(grad_check(f, a).pass);
}

TEST_CASE("bilinear_sample exact at integer locations") {
    Rng rng(10);
    Tensor img = random_tensor({2, 4, 5}, rng);
    Tensor loc = Tensor::from_values({2}, {2.0, 3.0});
    Tensor v = bilinear_sample(img, loc);
    CHECK(v.data()[0] == img(0, 2, 3));
    CHECK(v.data()[1] == img(1, 2, 3));
}

TEST_CASE("bilinear_sample midpoint averages neighbours") {
    Tensor img = Tensor::from_values({1, 1, 2}, {3.0, 7.0});
    Tensor v = bilinear_sample(img, Tensor::from_values({2}, {0.0, 0.5}));
    CHECK(v.data()[0] == doctest::Approx(5.0));
}

TEST_CASE("bilinear_sample matches four-term formula and location gradient") {
    Rng rng(11);
    Tensor img = random_tensor({1, 4, 4}, rng);
    const double y = 1.3, x = 2.6;
    Tensor v = bilinear_sample(img, Tensor::from_values({2}, {y, x}));
    const double ly = y - 1.0, lx = x - 2.0;
    const double expect = (1 - ly) * (1 - lx) * img(0, 1, 2) + (1 - ly) * lx * img(0, 1, 3) +
                          ly * (1 - lx) * img(0, 2, 2) + ly * lx * img(0, 2, 3);
    CHECK(v.data()[0] == doctest::Approx(expect).epsilon(1e-14));

    // gradient w.r.t. the location by finite differences
    auto f = [&](const Tensor& loc) { return sum(bilinear_sample(img, loc)); };
    GradCheckReport r = grad_check(f, Tensor::from_values({2}, {y, x}), 1e-6, 1e-6);
    CHECK(r.pass);

    // gradient w.r.t. the pixels
    auto g = [&](const Tensor& im) {
        return sum(bilinear_sample(im, Tensor::from_values({2}, {y, x})));
    };
    CHECK(grad_check(g, img, 1e-6, 1e-6).pass);
}

TEST_CASE("bilinear_sample is zero and flat outside the support") {
    Tensor img = Tensor::full({1, 3, 3}, 2.0);
    for (auto [y, x] : {std::pair{-1.0, 1.0}, {3.0, 1.0}, {1.0, -5.0}, {99.0, 99.0}}) {
        Tensor v = bilinear_sample(img, Tensor::from_values({2}, {y, x}));
        CHECK(v.data()[0] == 0.0);
    }
    // partial overlap: one step outside blends with zeros
    Tensor v = bilinear_sample(img, Tensor::from_values({2}, {-0.5, 1.0}));
    CHECK(v.data()[0] == doctest::Approx(1.0));
}

TEST_CASE("bilinear_sample linear along each axis between neighbours") {
    Rng rng(12);
    Tensor img = random_tensor({1, 4, 4}, rng);
    const double v0 = bilinear_sample(img, Tensor::from_values({2}, {1.0, 2.0})).data()[0];
    const double v1 = bilinear_sample(img, Tensor::from_values({2}, {2.0, 2.0})).data()[0];
    for (double t : {0.25, 0.5, 0.75}) {
        const double v = bilinear_sample(img, Tensor::from_values({2}, {1.0 + t, 2.0})).data()[0];
        CHECK(v == doctest::Approx((1 - t) * v0 + t * v1).epsilon(1e-12));
    }
}

TEST_CASE("concat_channels layout and gradient slicing") {
    Rng rng(13);
    Tensor a = random_tensor({1, 1, 2, 2}, rng);
    Tensor b = random_tensor({1, 1, 2, 2}, rng);

    Tensor single = concat_channels({a});
    check_close(single, a, 0.0);

    Tensor y = concat_channels({a, b});
    CHECK(y.shape() == Shape{1, 2, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(y.data()[i] == a.data()[i]);
        CHECK(y.data()[4 + i] == b.data()[i]);
    }

    CHECK_THROWS_AS(concat_channels({a, Tensor::zeros({1, 1, 3, 2})}), ShapeError);

    // backward splits the upstream gradient back per input
    Tape tape;
    Tensor ag = a.detached_clone();
    ag.set_requires_grad(true);
    Tensor bg = b.detached_clone();
    bg.set_requires_grad(true);
    Tensor cat = concat_channels({ag, bg});
    Tensor wsum = sum(mul(cat, cat));
    tape.backward(wsum);
    for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(ag.grad()[static_cast<std::size_t>(i)] == doctest::Approx(2 * ag.data()[i]));
        CHECK(bg.grad()[static_cast<std::size_t>(i)] == doctest::Approx(2 * bg.data()[i]));
    }
}

TEST_CASE("elementwise ops") {
    Rng rng(14);
    Tensor a = random_tensor({2, 2}, rng);
    Tensor z = Tensor::zeros({2, 2});
    check_close(add(a, z), a, 0.0);

    Tensor s = scale(a, 0.0);
    for (double v : s.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(add(a, Tensor::zeros({4})), ShapeError);

    Tensor b = random_tensor({2, 2}, rng);
    auto f = [&](const Tensor& x) { return sum(mul(mul(x, b), x)); };
    CHECK(grad_check(f, a, 1e-6, 1e-4).pass);
}

TEST_CASE("scale_by learnable scalar gradient") {
    Rng rng(15);
    Tensor a = random_tensor({3, 3}, rng);
    auto f = [&](const Tensor& s) { return sum(mul(scale_by(a, s), scale_by(a, s))); };
    CHECK(grad_check(f, Tensor::scalar(0.7)).pass);
}

TEST_CASE("reshape preserves data and routes gradient") {
    Rng rng(16);
    Tensor a = random_tensor({2, 6}, rng);
    Tensor r = reshape(a, {3, 4});
    CHECK(r.shape() == Shape{3, 4});
    for (std::int64_t i = 0; i < 12; ++i) CHECK(r.data()[i] == a.data()[i]);
    CHECK_THROWS_AS(reshape(a, {5, 2}), ShapeError);

    auto f = [](const Tensor& x) { return sum(mul(reshape(x, {4, 3}), reshape(x, {4, 3}))); };
    CHECK(grad_check(f, a).pass);
}

TEST_CASE("grad_check is exact for linear functions") {
    Rng rng(17);
    Tensor w = random_tensor({4}, rng);
    auto f = [&](const Tensor& x) { return sum(mul(x, w)); };
    GradCheckReport r = grad_check(f, random_tensor({4}, rng), 1e-6, 1e-10);
    CHECK(r.pass);
    CHECK(r.max_rel_error <= 1e-10);
    CHECK(r.excluded_nonsmooth == 0);
}

TEST_CASE("grad_check flags relu kinks and passes at smooth points") {
    auto f = [](const Tensor& x) { return sum(relu(x)); };

    GradCheckReport smooth = grad_check(f, Tensor::from_values({3}, {-0.5, 0.3, 1.7}), 1e-6, 1e-4);
    CHECK(smooth.pass);
    CHECK(smooth.excluded_nonsmooth == 0);

    GradCheckReport kinked = grad_check(f, Tensor::from_values({3}, {-0.5, 0.0, 1.7}), 1e-6, 1e-4);
    CHECK(kinked.pass);
    CHECK(kinked.excluded_nonsmooth == 1);
    CHECK(kinked.checked == 2);
}

TEST_CASE("grad_check rejects non-deterministic functions") {
    int calls = 0;
    auto f = [&](const Tensor& x) {
        ++calls;
        return scale(sum(x), 1.0 + 1e-9 * calls);
    };
    CHECK_THROWS_AS(grad_check(f, Tensor::from_values({2}, {1, 2})), ContractError);
}

TEST_CASE("tape gradients match finite differences for composed ops") {
    Rng rng(18);
    Tensor w = random_tensor({4, 2, 3, 3}, rng, 0.5);
    Tensor b = random_tensor({4}, rng, 0.5);
    auto f = [&](const Tensor& x) {
        Tensor y = conv2d(x, w, b, conv_spec(3, 1));
        Tensor p = max_pool2d(y);
        Tensor r = relu(p);
        return sum(mul(r, r));
    };
    // nudge inputs away from relu kinks by construction: random normals
    GradCheckReport rep = grad_check(f, random_tensor({1, 2, 6, 6}, rng), 1e-6, 1e-4);
    CHECK(rep.pass);
}
