#include <doctest.h>

#include <cmath>
#include <random>

#include "lmbis/gradcheck.hpp"
#include "lmbis/kernels.hpp"
#include "oracles.hpp"

using namespace lmbis;
using DTensor = TensorT<double>;

namespace {

Tensor filled(TensorShape shape, std::initializer_list<float> values) {
    Tensor t(shape);
    std::size_t i = 0;
    for (float v : values) t[i++] = v;
    REQUIRE(i == t.size());
    return t;
}

}  // namespace

TEST_SUITE("conv2d") {
    TEST_CASE("identity 1x1 kernel") {
        std::mt19937 rng(1);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 1, 5, 5}, -1, 1);
        const Tensor w = filled({1, 1, 1, 1}, {1.0f});
        const Tensor out = conv2d(in, w, std::vector<float>{0.0f}, ConvSpec::same(1));
        for (std::size_t i = 0; i < in.size(); ++i) CHECK(out[i] == in[i]);
    }

    TEST_CASE("3x3 ones kernel on 3x3 ones input, same padding") {
        const Tensor in = Tensor::full({1, 1, 3, 3}, 1.0f);
        const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
        const Tensor out = conv2d(in, w, std::vector<float>{0.0f}, ConvSpec::same(3));
        CHECK(out.at(0, 0, 1, 1) == 9.0f);
        CHECK(out.at(0, 0, 0, 1) == 6.0f);
        CHECK(out.at(0, 0, 1, 0) == 6.0f);
        CHECK(out.at(0, 0, 0, 0) == 4.0f);
        CHECK(out.at(0, 0, 2, 2) == 4.0f);
        // the independent triple-loop oracle agrees everywhere
        const Tensor ref = oracles::naive_conv2d(in, w, {0.0f}, 1, 1);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == ref[i]);
    }

    TEST_CASE("zero input gives bias planes") {
        const Tensor in(1, 2, 4, 4);
        std::mt19937 rng(2);
        const Tensor w = oracles::random_tensor<float>(rng, {3, 2, 3, 3}, -1, 1);
        const std::vector<float> bias = {0.5f, -1.0f, 2.0f};
        const Tensor out = conv2d(in, w, bias, ConvSpec::same(3));
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) CHECK(out.at(0, c, y, x) == bias[c]);
    }

    TEST_CASE("random tensors match the naive oracle") {
        std::mt19937 rng(3);
        for (int trial = 0; trial < 10; ++trial) {
            const int k = 2 * (trial % 3) + 1;
            const Tensor in = oracles::random_tensor<float>(rng, {2, 3, 8, 6}, -1, 1);
            const Tensor w =
                oracles::random_tensor<float>(rng, {4, 3, k, k}, -0.5f, 0.5f);
            std::vector<float> bias(4);
            for (auto& b : bias) b = static_cast<float>(trial) * 0.1f;
            const Tensor out = conv2d(in, w, bias, ConvSpec::same(k));
            const Tensor ref = oracles::naive_conv2d(in, w, bias, 1, (k - 1) / 2);
            REQUIRE(out.same_shape(ref));
            for (std::size_t i = 0; i < out.size(); ++i)
                CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-5));
        }
    }

    TEST_CASE("same padding preserves spatial dims for odd k") {
        std::mt19937 rng(4);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 2, 12, 16}, -1, 1);
        for (int k : {1, 3, 5}) {
            const Tensor w = oracles::random_tensor<float>(rng, {2, 2, k, k}, -1, 1);
            const Tensor out = conv2d(in, w, std::vector<float>(2, 0.0f), ConvSpec::same(k));
            CHECK(out.height() == in.height());
            CHECK(out.width() == in.width());
        }
    }

    TEST_CASE("errors") {
        const Tensor in(1, 2, 4, 4);
        const Tensor w(1, 3, 3, 3);  // expects 3 input channels
        CHECK_THROWS_AS(conv2d(in, w, std::vector<float>{0.0f}, ConvSpec::same(3)),
                        ShapeError);
        CHECK_THROWS_AS(ConvSpec::same(2), ShapeError);  // even kernel, same padding
        const Tensor w2(1, 2, 2, 2);
        CHECK_THROWS_AS(conv2d(in, w2, std::vector<float>{0.0f}, ConvSpec{1, 1}),
                        ShapeError);
    }

    TEST_CASE("non-finite results are signalled") {
        Tensor in(1, 1, 2, 2);
        in[0] = std::numeric_limits<float>::infinity();
        const Tensor w = filled({1, 1, 1, 1}, {1.0f});
        CHECK_THROWS_AS(conv2d(in, w, std::vector<float>{0.0f}, ConvSpec::same(1)),
                        NumericError);
    }
}

TEST_SUITE("conv2d_backward") {
    TEST_CASE("zero upstream zeroes every gradient") {
        std::mt19937 rng(5);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 2, 5, 5}, -1, 1);
        const Tensor w = oracles::random_tensor<float>(rng, {3, 2, 3, 3}, -1, 1);
        const Tensor up(1, 3, 5, 5);
        const auto g = conv2d_backward(in, w, ConvSpec::same(3), up);
        for (float v : g.input.data()) CHECK(v == 0.0f);
        for (float v : g.weights.data()) CHECK(v == 0.0f);
        for (float v : g.bias) CHECK(v == 0.0f);
    }

    TEST_CASE("dBias is the per-channel upstream sum") {
        std::mt19937 rng(6);
        const Tensor in = oracles::random_tensor<float>(rng, {2, 2, 6, 6}, -1, 1);
        const Tensor w = oracles::random_tensor<float>(rng, {3, 2, 3, 3}, -1, 1);
        const Tensor up = oracles::random_tensor<float>(rng, {2, 3, 6, 6}, -1, 1);
        const auto g = conv2d_backward(in, w, ConvSpec::same(3), up);
        for (int c = 0; c < 3; ++c) {
            double sum = 0.0;
            for (int n = 0; n < 2; ++n)
                for (int y = 0; y < 6; ++y)
                    for (int x = 0; x < 6; ++x) sum += up.at(n, c, y, x);
            CHECK(g.bias[c] == doctest::Approx(sum).epsilon(1e-5));
        }
    }

    TEST_CASE("matches central finite differences on 1x1x4x4 with 3x3 kernel") {
        std::mt19937 rng(7);
        const auto x = oracles::random_tensor<double>(rng, {1, 1, 4, 4}, -1, 1);
        const auto w = oracles::random_tensor<double>(rng, {2, 1, 3, 3}, -1, 1);
        const auto b = oracles::random_tensor<double>(rng, {1, 2, 1, 1}, -1, 1);
        const auto r = oracles::random_tensor<double>(rng, {1, 2, 4, 4}, -1, 1);
        const ConvSpec spec = ConvSpec::same(3);

        GradCheckProblem p;
        p.value = [&](const std::vector<DTensor>& v) {
            const auto out = conv2d<double>(v[0], v[1], v[2].data(), spec);
            double s = 0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
            return s;
        };
        p.gradients = [&](const std::vector<DTensor>& v) {
            auto g = conv2d_backward<double>(v[0], v[1], spec, r);
            DTensor bias(1, 2, 1, 1);
            bias[0] = g.bias[0];
            bias[1] = g.bias[1];
            return std::vector<DTensor>{g.input, g.weights, bias};
        };
        CHECK(grad_check(p, {x, w, b}, 1e-4) < 1e-4);
    }
}

TEST_SUITE("relu") {
    TEST_CASE("clamps negatives and keeps positives") {
        const Tensor in = filled({1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
        const Tensor out = relu(in);
        CHECK(out[0] == 0.0f);
        CHECK(out[1] == 0.0f);
        CHECK(out[2] == 2.0f);
    }

    TEST_CASE("all-negative input zeroes forward and backward") {
        const Tensor in = Tensor::full({1, 2, 3, 3}, -0.5f);
        const Tensor out = relu(in);
        const Tensor back = relu_backward(in, Tensor::full({1, 2, 3, 3}, 1.0f));
        for (float v : out.data()) CHECK(v == 0.0f);
        for (float v : back.data()) CHECK(v == 0.0f);
    }

    TEST_CASE("gradient 0 at exactly 0") {
        const Tensor in(1, 1, 1, 1);
        const Tensor back = relu_backward(in, Tensor::full({1, 1, 1, 1}, 3.0f));
        CHECK(back[0] == 0.0f);
    }
}

TEST_SUITE("batchnorm2d") {
    TEST_CASE("constant channel in train mode maps to ~0") {
        const Tensor in = Tensor::full({2, 1, 4, 4}, 7.5f);
        BNRunning running;
        const Tensor out =
            batchnorm2d<float>(in, std::vector<float>{1.0f}, std::vector<float>{0.0f},
                               running, BNMode::train, 1e-5f, 0.9f);
        for (float v : out.data()) CHECK(std::abs(v) < 1e-4f);
    }

    TEST_CASE("infer mode with unit running stats is the identity") {
        std::mt19937 rng(8);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 2, 4, 4}, -2, 2);
        BNRunning running;
        running.mean = {0.0f, 0.0f};
        running.var = {1.0f, 1.0f};
        running.initialized = true;
        const Tensor out =
            batchnorm2d<float>(in, std::vector<float>{1.0f, 1.0f},
                               std::vector<float>{0.0f, 0.0f}, running, BNMode::infer,
                               1e-9f, 0.9f);
        for (std::size_t i = 0; i < in.size(); ++i)
            CHECK(out[i] == doctest::Approx(in[i]).epsilon(1e-5));
    }

    TEST_CASE("two-value channel with gamma=2 beta=1") {
        // values {1,3}: mu=2, sigma=1 -> outputs {-1, 3}
        const Tensor in = filled({1, 1, 1, 2}, {1.0f, 3.0f});
        BNRunning running;
        const Tensor out =
            batchnorm2d<float>(in, std::vector<float>{2.0f}, std::vector<float>{1.0f},
                               running, BNMode::train, 1e-12f, 0.9f);
        CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(out[1] == doctest::Approx(3.0).epsilon(1e-4));
    }

    TEST_CASE("train mode normalizes each channel") {
        std::mt19937 rng(9);
        const Tensor in = oracles::random_tensor<float>(rng, {2, 3, 8, 8}, -3, 5);
        BNRunning running;
        const Tensor out = batchnorm2d<float>(
            in, std::vector<float>(3, 1.0f), std::vector<float>(3, 0.0f), running,
            BNMode::train, 1e-5f, 0.9f);
        for (int c = 0; c < 3; ++c) {
            double sum = 0, sq = 0;
            const double n = 2.0 * 8 * 8;
            for (int b = 0; b < 2; ++b)
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        sum += out.at(b, c, y, x);
                        sq += out.at(b, c, y, x) * out.at(b, c, y, x);
                    }
            CHECK(std::abs(sum / n) < 1e-5);
            CHECK(std::abs(sq / n - 1.0) < 1e-3);
        }
    }

    TEST_CASE("infer with uninitialized running stats is an error") {
        const Tensor in(1, 1, 2, 2);
        BNRunning running;
        CHECK_THROWS_AS(batchnorm2d<float>(in, std::vector<float>{1.0f},
                                           std::vector<float>{0.0f}, running,
                                           BNMode::infer, 1e-5f, 0.9f),
                        std::logic_error);
    }

    TEST_CASE("infer-mode backward matches finite differences") {
        std::mt19937 rng(21);
        auto x = oracles::random_tensor<double>(rng, {1, 2, 4, 4}, -1, 1);
        auto gamma = oracles::random_tensor<double>(rng, {1, 2, 1, 1}, 0.5, 1.5);
        auto beta = oracles::random_tensor<double>(rng, {1, 2, 1, 1}, -0.5, 0.5);
        const auto r = oracles::random_tensor<double>(rng, {1, 2, 4, 4}, -1, 1);
        BNRunningT<double> running;
        running.mean = {0.2, -0.1};
        running.var = {1.5, 0.7};
        running.initialized = true;
        const double eps = 1e-5;

        GradCheckProblem p;
        p.value = [&](const std::vector<DTensor>& v) {
            BNRunningT<double> stats = running;
            const auto out = batchnorm2d<double>(v[0], v[1].data(), v[2].data(), stats,
                                                 BNMode::infer, eps, 0.9);
            double s = 0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
            return s;
        };
        p.gradients = [&](const std::vector<DTensor>& v) {
            auto g = batchnorm2d_backward_infer<double>(v[0], v[1].data(), running, eps, r);
            DTensor dg(1, 2, 1, 1), db(1, 2, 1, 1);
            for (int c = 0; c < 2; ++c) {
                dg[c] = g.gamma[c];
                db[c] = g.beta[c];
            }
            return std::vector<DTensor>{g.input, dg, db};
        };
        CHECK(grad_check(p, {x, gamma, beta}, 1e-4) < 1e-4);
    }

    TEST_CASE("running stats follow an exponential moving average") {
        const Tensor a = Tensor::full({1, 1, 2, 2}, 1.0f);
        const Tensor b = Tensor::full({1, 1, 2, 2}, 3.0f);
        BNRunning running;
        batchnorm2d<float>(a, std::vector<float>{1.0f}, std::vector<float>{0.0f}, running,
                           BNMode::train, 1e-5f, 0.9f);
        CHECK(running.mean[0] == doctest::Approx(1.0f));  // first batch seeds the stats
        batchnorm2d<float>(b, std::vector<float>{1.0f}, std::vector<float>{0.0f}, running,
                           BNMode::train, 1e-5f, 0.9f);
        CHECK(running.mean[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 3.0f));
    }
}

TEST_SUITE("maxpool2") {
    TEST_CASE("window max and index") {
        const Tensor in = filled({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
        const auto r = maxpool2(in);
        CHECK(r.output.size() == 1);
        CHECK(r.output[0] == 4.0f);
        CHECK(r.indices[0] == 3);  // position of the 4 in the plane
    }

    TEST_CASE("constant input resolves ties to the top-left") {
        const Tensor in = Tensor::full({1, 1, 4, 4}, 2.5f);
        const auto r = maxpool2(in);
        for (float v : r.output.data()) CHECK(v == 2.5f);
        CHECK(r.indices[0] == 0);
        CHECK(r.indices[1] == 2);
        CHECK(r.indices[2] == 8);
        CHECK(r.indices[3] == 10);
    }

    TEST_CASE("odd spatial dims are rejected") {
        CHECK_THROWS_AS(maxpool2(Tensor(1, 1, 3, 4)), ShapeError);
        CHECK_THROWS_AS(maxpool2(Tensor(1, 1, 4, 5)), ShapeError);
    }

    TEST_CASE("backward scatters exactly the upstream L1 mass") {
        std::mt19937 rng(10);
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor in = oracles::random_tensor<float>(rng, {2, 2, 8, 8}, -1, 1);
            const auto pooled = maxpool2(in);
            const Tensor up = oracles::random_tensor<float>(rng, {2, 2, 4, 4}, -1, 1);
            const Tensor back = maxpool2_backward(pooled.indices, in.shape(), up);
            double up_mass = 0, back_mass = 0;
            for (float v : up.data()) up_mass += std::abs(v);
            for (float v : back.data()) back_mass += std::abs(v);
            CHECK(back_mass == doctest::Approx(up_mass).epsilon(1e-5));
        }
    }

    TEST_CASE("backward matches finite differences away from ties") {
        std::mt19937 rng(11);
        auto x = oracles::random_tensor<double>(rng, {1, 1, 8, 8}, -1, 1);
        const auto r = oracles::random_tensor<double>(rng, {1, 1, 4, 4}, -1, 1);

        GradCheckProblem p;
        p.value = [&](const std::vector<DTensor>& v) {
            const auto out = maxpool2(v[0]).output;
            double s = 0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
            return s;
        };
        p.gradients = [&](const std::vector<DTensor>& v) {
            const auto pooled = maxpool2(v[0]);
            return std::vector<DTensor>{maxpool2_backward(pooled.indices, v[0].shape(), r)};
        };
        CHECK(grad_check(p, {x}, 1e-4) < 1e-4);
    }
}

TEST_SUITE("conv_transpose2d") {
    TEST_CASE("single input value spreads through a 2x2 ones kernel") {
        const Tensor in = Tensor::full({1, 1, 1, 1}, 3.25f);
        const Tensor w = Tensor::full({1, 1, 2, 2}, 1.0f);
        const Tensor out = conv_transpose2d(in, w, std::vector<float>{0.0f});
        REQUIRE(out.shape() == TensorShape{1, 1, 2, 2});
        for (float v : out.data()) CHECK(v == 3.25f);
    }

    TEST_CASE("zero input yields bias-only output") {
        const Tensor in(1, 2, 3, 3);
        std::mt19937 rng(12);
        const Tensor w = oracles::random_tensor<float>(rng, {2, 2, 2, 2}, -1, 1);
        const Tensor out = conv_transpose2d(in, w, std::vector<float>{1.5f, -0.5f});
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                CHECK(out.at(0, 0, y, x) == 1.5f);
                CHECK(out.at(0, 1, y, x) == -0.5f);
            }
    }

    TEST_CASE("doubles the spatial dimensions") {
        const Tensor in(2, 3, 5, 7);
        const Tensor w(4, 3, 2, 2);
        const Tensor out = conv_transpose2d(in, w, std::vector<float>(4, 0.0f));
        CHECK(out.shape() == TensorShape{2, 4, 10, 14});
    }

    TEST_CASE("adjoint of the matching stride-2 convolution") {
        // <convT(x), y> == <x, conv_s2(y)> with channel-transposed weights
        std::mt19937 rng(13);
        for (int trial = 0; trial < 5; ++trial) {
            const int cin = 2, cout = 3;
            const Tensor x = oracles::random_tensor<float>(rng, {1, cin, 4, 4}, -1, 1);
            const Tensor y = oracles::random_tensor<float>(rng, {1, cout, 8, 8}, -1, 1);
            const Tensor w = oracles::random_tensor<float>(rng, {cout, cin, 2, 2}, -1, 1);

            const Tensor up = conv_transpose2d(x, w, std::vector<float>(cout, 0.0f));
            Tensor w_t(cin, cout, 2, 2);
            for (int a = 0; a < cout; ++a)
                for (int b = 0; b < cin; ++b)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            w_t.at(b, a, dy, dx) = w.at(a, b, dy, dx);
            const Tensor down = conv2d(y, w_t, std::vector<float>(cin, 0.0f), ConvSpec{2, 0});

            double lhs = 0, rhs = 0;
            for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * y[i];
            for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * down[i];
            CHECK(std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)) < 1e-5);
        }
    }

    TEST_CASE("channel mismatch is rejected") {
        const Tensor in(1, 2, 3, 3);
        const Tensor w(4, 3, 2, 2);
        CHECK_THROWS_AS(conv_transpose2d(in, w, std::vector<float>(4, 0.0f)), ShapeError);
    }
}

TEST_SUITE("softmax_channels") {
    TEST_CASE("equal logits split evenly") {
        const Tensor in = Tensor::full({1, 2, 3, 3}, 0.7f);
        const Tensor out = softmax_channels(in);
        for (float v : out.data()) CHECK(v == doctest::Approx(0.5f));
    }

    TEST_CASE("logits (0, ln 3) give (0.25, 0.75)") {
        Tensor in(1, 2, 1, 1);
        in.at(0, 0, 0, 0) = 0.0f;
        in.at(0, 1, 0, 0) = std::log(3.0f);
        const Tensor out = softmax_channels(in);
        CHECK(out.at(0, 0, 0, 0) == doctest::Approx(0.25).epsilon(1e-6));
        CHECK(out.at(0, 1, 0, 0) == doctest::Approx(0.75).epsilon(1e-6));
    }

    TEST_CASE("invariant under a constant logit shift") {
        std::mt19937 rng(14);
        const Tensor in = oracles::random_tensor<float>(rng, {1, 3, 4, 4}, -2, 2);
        Tensor shifted = in;
        for (auto& v : shifted.data()) v += 11.5f;
        const Tensor a = softmax_channels(in);
        const Tensor b = softmax_channels(shifted);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
    }

    TEST_CASE("sums to one with entries in [0,1], even for extreme logits") {
        std::mt19937 rng(15);
        for (int trial = 0; trial < 10; ++trial) {
            const Tensor in =
                oracles::random_tensor<float>(rng, {2, 4, 6, 6}, -30.0f, 30.0f);
            const Tensor out = softmax_channels(in);
            for (int n = 0; n < 2; ++n)
                for (int y = 0; y < 6; ++y)
                    for (int x = 0; x < 6; ++x) {
                        float sum = 0;
                        for (int c = 0; c < 4; ++c) {
                            const float v = out.at(n, c, y, x);
                            CHECK(v >= 0.0f);
                            CHECK(v <= 1.0f);
                            sum += v;
                        }
                        CHECK(std::abs(sum - 1.0f) < 1e-6f);
                    }
        }
    }

    TEST_CASE("rejects single-channel input") {
        CHECK_THROWS_AS(softmax_channels(Tensor(1, 1, 2, 2)), ShapeError);
    }
}

TEST_SUITE("add") {
    TEST_CASE("identity and inverse") {
        std::mt19937 rng(16);
        const Tensor a = oracles::random_tensor<float>(rng, {1, 2, 3, 3}, -1, 1);
        const Tensor zero(1, 2, 3, 3);
        Tensor neg = a;
        for (auto& v : neg.data()) v = -v;

        const Tensor same = add(a, zero);
        const Tensor cancelled = add(a, neg);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(same[i] == a[i]);
            CHECK(cancelled[i] == 0.0f);
        }
    }

    TEST_CASE("matches a scalar loop") {
        std::mt19937 rng(17);
        const Tensor a = oracles::random_tensor<float>(rng, {2, 3, 4, 5}, -2, 2);
        const Tensor b = oracles::random_tensor<float>(rng, {2, 3, 4, 5}, -2, 2);
        const Tensor out = add(a, b);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(out[i] == a[i] + b[i]);
    }

    TEST_CASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(add(Tensor(1, 1, 2, 2), Tensor(1, 1, 2, 3)), ShapeError);
    }
}

TEST_SUITE("grad_check") {
    TEST_CASE("linear map is exact") {
        std::mt19937 rng(18);
        const auto a = oracles::random_tensor<double>(rng, {1, 2, 3, 3}, -1, 1);
        const auto b = oracles::random_tensor<double>(rng, {1, 2, 3, 3}, -1, 1);

        GradCheckProblem p;
        p.value = [](const std::vector<DTensor>& v) {
            const auto out = add(v[0], v[1]);
            double s = 0;
            for (double x : out.data()) s += x;
            return s;
        };
        p.gradients = [](const std::vector<DTensor>& v) {
            return std::vector<DTensor>{DTensor::full(v[0].shape(), 1.0),
                                        DTensor::full(v[1].shape(), 1.0)};
        };
        CHECK(grad_check(p, {a, b}, 1e-4) < 1e-10);
    }

    TEST_CASE("conv chain on 1x2x6x6 stays under 1e-4") {
        std::mt19937 rng(19);
        const auto x = oracles::random_tensor<double>(rng, {1, 2, 6, 6}, -1, 1);
        const auto w1 = oracles::random_tensor<double>(rng, {3, 2, 3, 3}, -0.5, 0.5);
        const auto w2 = oracles::random_tensor<double>(rng, {2, 3, 3, 3}, -0.5, 0.5);
        const auto r = oracles::random_tensor<double>(rng, {1, 2, 6, 6}, -1, 1);
        const std::vector<double> b1(3, 0.1), b2(2, -0.1);
        const ConvSpec spec = ConvSpec::same(3);

        GradCheckProblem p;
        p.value = [&](const std::vector<DTensor>& v) {
            const auto mid = conv2d<double>(v[0], w1, b1, spec);
            const auto out = conv2d<double>(mid, w2, b2, spec);
            double s = 0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
            return s;
        };
        p.gradients = [&](const std::vector<DTensor>& v) {
            const auto mid = conv2d<double>(v[0], w1, b1, spec);
            const auto g2 = conv2d_backward<double>(mid, w2, spec, r);
            const auto g1 = conv2d_backward<double>(v[0], w1, spec, g2.input);
            return std::vector<DTensor>{g1.input};
        };
        CHECK(grad_check(p, {x}, 1e-4) < 1e-4);
    }

    TEST_CASE("a 1% gradient corruption is detected") {
        std::mt19937 rng(20);
        const auto x = oracles::random_tensor<double>(rng, {1, 1, 4, 4}, 0.5, 1.5);

        GradCheckProblem p;
        p.value = [](const std::vector<DTensor>& v) {
            double s = 0;
            for (double q : v[0].data()) s += q * q;
            return s;
        };
        p.gradients = [](const std::vector<DTensor>& v) {
            DTensor g(v[0].shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * v[0][i] * 1.01;
            return std::vector<DTensor>{g};
        };
        CHECK(grad_check(p, {x}, 1e-4) > 1e-3);
    }

    TEST_CASE("epsilon outside the contract is rejected") {
        GradCheckProblem p;
        p.value = [](const std::vector<DTensor>&) { return 0.0; };
        p.gradients = [](const std::vector<DTensor>& v) {
            return std::vector<DTensor>{DTensor(v[0].shape())};
        };
        CHECK_THROWS_AS(grad_check(p, {DTensor(1, 1, 1, 1)}, 1e-2), std::invalid_argument);
        CHECK_THROWS_AS(grad_check(p, {DTensor(1, 1, 1, 1)}, 1e-7), std::invalid_argument);
    }

    TEST_CASE("non-finite function values are signalled") {
        GradCheckProblem p;
        p.value = [](const std::vector<DTensor>& v) {
            return v[0][0] > 0.5 ? std::numeric_limits<double>::infinity() : 0.0;
        };
        p.gradients = [](const std::vector<DTensor>& v) {
            return std::vector<DTensor>{DTensor(v[0].shape())};
        };
        CHECK_THROWS_AS(grad_check(p, {DTensor::full({1, 1, 1, 1}, 0.5)}, 1e-3),
                        NumericError);
    }
}
