#include <gtest/gtest.h>

#include "mdet/graph.hpp"
#include "mdet/ops.hpp"
#include "mdet/rng.hpp"
#include "support/oracles.hpp"

using namespace mdet;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& e : t.v) e = uniform(rng, lo, hi);
    return t;
}

// Scalar objective for finite differences: sum of fixed random weights times
// the conv output.
double conv_objective(const Tensor& x, const Tensor& w, const Tensor& b, int sh, int sw, int pad,
                      const Tensor& mix) {
    const Tensor y = conv2d_forward(x, w, b, sh, sw, pad);
    double s = 0.0;
    for (int i = 0; i < y.numel(); ++i) s += y.v[i] * mix.v[i];
    return s;
}

void check_conv_gradients(int sh, int sw) {
    auto rng = make_rng(200 + sh * 10 + sw);
    Tensor x = random_tensor({3, 8, 8}, rng);
    Tensor w = random_tensor({2, 3, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    const Tensor y = conv2d_forward(x, w, b, sh, sw, 1);
    Tensor mix = random_tensor(y.shape, rng);

    Tensor gx(x.shape), gw(w.shape), gb(b.shape);
    conv2d_backward(x, w, sh, sw, 1, mix, &gx, &gw, &gb);

    for (int i = 0; i < x.numel(); i += 5) {
        auto f = [&](double v) {
            Tensor xx = x;
            xx.v[i] = v;
            return conv_objective(xx, w, b, sh, sw, 1, mix);
        };
        EXPECT_LT(oracle::rel_err(oracle::central_diff(f, x.v[i]), gx.v[i]), 1e-4)
            << "input grad, stride " << sh << "x" << sw << ", i=" << i;
    }
    for (int i = 0; i < w.numel(); i += 3) {
        auto f = [&](double v) {
            Tensor ww = w;
            ww.v[i] = v;
            return conv_objective(x, ww, b, sh, sw, 1, mix);
        };
        EXPECT_LT(oracle::rel_err(oracle::central_diff(f, w.v[i]), gw.v[i]), 1e-4)
            << "weight grad, stride " << sh << "x" << sw << ", i=" << i;
    }
    for (int i = 0; i < b.numel(); ++i) {
        auto f = [&](double v) {
            Tensor bb = b;
            bb.v[i] = v;
            return conv_objective(x, w, bb, sh, sw, 1, mix);
        };
        EXPECT_LT(oracle::rel_err(oracle::central_diff(f, b.v[i]), gb.v[i]), 1e-4);
    }
}

}  // namespace

TEST(Conv2d, OnesKernelCenterValue) {
    Tensor x({1, 4, 4});
    x.fill(1.0);
    Tensor w({1, 1, 3, 3});
    w.fill(1.0);
    Tensor b({1});
    const Tensor y = conv2d_forward(x, w, b, 1, 1, 1);
    EXPECT_EQ(y.shape, (std::vector<int>{1, 4, 4}));
    EXPECT_DOUBLE_EQ(y.at(0, 1, 1), 9.0);
    EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 4.0);  // corner sees a 2x2 window
}

TEST(Conv2d, IdentityKernel) {
    auto rng = make_rng(211);
    Tensor x = random_tensor({1, 6, 5}, rng);
    Tensor w({1, 1, 1, 1});
    w.v[0] = 1.0;
    Tensor b({1});
    const Tensor y = conv2d_forward(x, w, b, 1, 1, 0);
    EXPECT_EQ(y.v, x.v);
}

TEST(Conv2d, StridedShapes) {
    Tensor x({1, 8, 8});
    Tensor w({1, 1, 3, 3});
    Tensor b({1});
    EXPECT_EQ(conv2d_forward(x, w, b, 1, 2, 1).shape, (std::vector<int>{1, 8, 4}));
    EXPECT_EQ(conv2d_forward(x, w, b, 2, 1, 1).shape, (std::vector<int>{1, 4, 8}));
    EXPECT_EQ(conv2d_forward(x, w, b, 2, 2, 1).shape, (std::vector<int>{1, 4, 4}));
}

TEST(Conv2d, RejectsMismatchedShapes) {
    Tensor x({2, 4, 4});
    Tensor w({1, 3, 3, 3});  // expects 3 input channels
    Tensor b({1});
    EXPECT_THROW(conv2d_forward(x, w, b, 1, 1, 1), std::invalid_argument);
    Tensor b2({2});
    Tensor w2({1, 2, 3, 3});
    EXPECT_THROW(conv2d_forward(x, w2, b2, 1, 1, 1), std::invalid_argument);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    check_conv_gradients(1, 1);
    check_conv_gradients(1, 2);
    check_conv_gradients(2, 1);
}

TEST(Ops, MaxPoolPeakNeighborhood) {
    Tensor x({1, 3, 3});
    x.v = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    const Tensor y = max_pool3x3_same(x);
    EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 5.0);
    EXPECT_DOUBLE_EQ(y.at(0, 1, 1), 9.0);
    EXPECT_DOUBLE_EQ(y.at(0, 2, 2), 9.0);
}

TEST(Ops, BilinearResizeIdentityAndHalving) {
    auto rng = make_rng(223);
    Tensor x = random_tensor({2, 6, 6}, rng, 0.0, 1.0);
    EXPECT_EQ(bilinear_resize(x, 6, 6).v, x.v);

    Tensor flat({1, 4, 4});
    flat.fill(0.25);
    const Tensor half = bilinear_resize(flat, 2, 2);
    for (double v : half.v) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, PadAndFlip) {
    Tensor x({1, 2, 2});
    x.v = {1, 2, 3, 4};
    const Tensor padded = pad_bottom_right(x, 3, 3);
    EXPECT_DOUBLE_EQ(padded.at(0, 0, 0), 1.0);
    EXPECT_DOUBLE_EQ(padded.at(0, 2, 2), 0.0);
    const Tensor flipped = flip_horizontal(x);
    EXPECT_DOUBLE_EQ(flipped.at(0, 0, 0), 2.0);
    EXPECT_DOUBLE_EQ(flipped.at(0, 1, 1), 3.0);
}

TEST(Tape, BackwardThroughSmallGraph) {
    auto rng = make_rng(227);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Tensor w1 = random_tensor({3, 2, 3, 3}, rng);
    Tensor b1 = random_tensor({3}, rng);
    Tensor w2 = random_tensor({1, 3, 3, 3}, rng);
    Tensor b2 = random_tensor({1}, rng);

    auto objective = [&](const Tensor& w1v) {
        Tape tape;
        const int xi = tape.leaf(x);
        const int c1 = tape.conv2d(xi, tape.leaf(w1v), tape.leaf(b1), 1, 2, 1);
        const int r1 = tape.relu(c1);
        const int c2 = tape.conv2d(r1, tape.leaf(w2), tape.leaf(b2), 2, 1, 1);
        const int s = tape.sigmoid(c2);
        double total = 0.0;
        for (double v : tape.value(s).v) total += v;
        return total;
    };

    Tape tape;
    const int xi = tape.leaf(x);
    const int w1i = tape.leaf(w1);
    const int c1 = tape.conv2d(xi, w1i, tape.leaf(b1), 1, 2, 1);
    const int r1 = tape.relu(c1);
    const int c2 = tape.conv2d(r1, tape.leaf(w2), tape.leaf(b2), 2, 1, 1);
    const int s = tape.sigmoid(c2);
    tape.grad(s).fill(1.0);
    tape.backward();

    for (int i = 0; i < w1.numel(); i += 7) {
        auto f = [&](double v) {
            Tensor ww = w1;
            ww.v[i] = v;
            return objective(ww);
        };
        EXPECT_LT(oracle::rel_err(oracle::central_diff(f, w1.v[i]), tape.grad(w1i).v[i]), 1e-4)
            << "i=" << i;
    }
}

TEST(Tape, AddAccumulatesBothBranches) {
    Tensor a({1, 2, 2}), b({1, 2, 2});
    a.fill(1.0);
    b.fill(2.0);
    Tape tape;
    const int ai = tape.leaf(a);
    const int bi = tape.leaf(b);
    const int sum = tape.add(ai, bi);
    EXPECT_DOUBLE_EQ(tape.value(sum).v[0], 3.0);
    tape.grad(sum).fill(1.0);
    tape.backward();
    EXPECT_DOUBLE_EQ(tape.grad(ai).v[0], 1.0);
    EXPECT_DOUBLE_EQ(tape.grad(bi).v[0], 1.0);
}

TEST(Tape, ForwardOnlyAllocatesNoGradients) {
    Tensor x({1, 4, 4});
    Tape tape;
    const int xi = tape.leaf(x);
    const int r = tape.relu(xi);
    EXPECT_FALSE(tape.has_grad(xi));
    EXPECT_FALSE(tape.has_grad(r));
}
