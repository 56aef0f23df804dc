#include "lmbis/selfcheck.hpp"

#include <cmath>
#include <random>

#include "lmbis/kernels.hpp"
#include "lmbis/loss.hpp"
#include "lmbis/model.hpp"

namespace lmbis {

namespace {

using DTensor = TensorT<double>;

DTensor uniform(std::mt19937& rng, TensorShape shape, double lo, double hi) {
    DTensor t(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

// Uniform magnitudes bounded away from zero, random sign: keeps ReLU inputs
// clear of the kink the finite differences would straddle.
DTensor away_from_zero(std::mt19937& rng, TensorShape shape, double min_abs) {
    DTensor t(shape);
    std::uniform_real_distribution<double> mag(min_abs, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

// Separates every 2x2 window so pooling argmaxes cannot flip under the
// finite-difference step.
void separate_pool_windows(DTensor& t, double min_gap) {
    for (int n = 0; n < t.batch(); ++n) {
        for (int c = 0; c < t.channels(); ++c) {
            for (int y = 0; y + 1 < t.height(); y += 2) {
                for (int x = 0; x + 1 < t.width(); x += 2) {
                    double* v[4] = {&t.at(n, c, y, x), &t.at(n, c, y, x + 1),
                                    &t.at(n, c, y + 1, x), &t.at(n, c, y + 1, x + 1)};
                    for (int i = 0; i < 4; ++i)
                        for (int j = i + 1; j < 4; ++j)
                            if (std::abs(*v[i] - *v[j]) < min_gap) *v[j] += 4 * min_gap * (j + 1);
                }
            }
        }
    }
}

double weighted_sum(const DTensor& t, const DTensor& weights) {
    double s = 0.0;
    auto a = t.data();
    auto w = weights.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w[i];
    return s;
}

DTensor bias_to_tensor(const std::vector<double>& b) {
    DTensor t(1, static_cast<int>(b.size()), 1, 1);
    std::copy(b.begin(), b.end(), t.data().begin());
    return t;
}

TensorShape random_shape(std::mt19937& rng, int max_c = 4, int max_hw = 16) {
    std::uniform_int_distribution<int> batch(1, 2), chan(1, max_c), hw(2, max_hw / 2);
    return {batch(rng), chan(rng), 2 * hw(rng), 2 * hw(rng)};
}

double check_conv2d(std::mt19937& rng) {
    const TensorShape in = random_shape(rng);
    std::uniform_int_distribution<int> kpick(0, 2);
    const int k = 2 * kpick(rng) + 1;  // 1, 3, 5
    std::uniform_int_distribution<int> cout_pick(1, 4);
    const int cout = cout_pick(rng);
    const ConvSpec spec = ConvSpec::same(k);

    const DTensor r = uniform(rng, {in.n, cout, in.h, in.w}, -1.0, 1.0);
    auto x = uniform(rng, in, -1.0, 1.0);
    auto w = uniform(rng, {cout, in.c, k, k}, -0.5, 0.5);
    auto b = uniform(rng, {1, cout, 1, 1}, -0.5, 0.5);

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) {
        return weighted_sum(conv2d<double>(v[0], v[1], v[2].data(), spec), r);
    };
    p.gradients = [=](const std::vector<DTensor>& v) {
        auto g = conv2d_backward<double>(v[0], v[1], spec, r);
        return std::vector<DTensor>{g.input, g.weights, bias_to_tensor(g.bias)};
    };
    return grad_check(p, {x, w, b}, 1e-4);
}

double check_conv_transpose(std::mt19937& rng) {
    const TensorShape in = random_shape(rng, 3, 8);
    std::uniform_int_distribution<int> cout_pick(1, 4);
    const int cout = cout_pick(rng);

    const DTensor r = uniform(rng, {in.n, cout, in.h * 2, in.w * 2}, -1.0, 1.0);
    auto x = uniform(rng, in, -1.0, 1.0);
    auto w = uniform(rng, {cout, in.c, 2, 2}, -0.5, 0.5);
    auto b = uniform(rng, {1, cout, 1, 1}, -0.5, 0.5);

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) {
        return weighted_sum(conv_transpose2d<double>(v[0], v[1], v[2].data()), r);
    };
    p.gradients = [=](const std::vector<DTensor>& v) {
        auto g = conv_transpose2d_backward<double>(v[0], v[1], r);
        return std::vector<DTensor>{g.input, g.weights, bias_to_tensor(g.bias)};
    };
    return grad_check(p, {x, w, b}, 1e-4);
}

double check_relu(std::mt19937& rng) {
    const TensorShape in = random_shape(rng);
    const DTensor r = uniform(rng, in, -1.0, 1.0);
    auto x = away_from_zero(rng, in, 0.01);

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) { return weighted_sum(relu(v[0]), r); };
    p.gradients = [=](const std::vector<DTensor>& v) {
        return std::vector<DTensor>{relu_backward(v[0], r)};
    };
    return grad_check(p, {x}, 1e-4);
}

double check_batchnorm(std::mt19937& rng) {
    const TensorShape in = random_shape(rng);
    const DTensor r = uniform(rng, in, -1.0, 1.0);
    auto x = uniform(rng, in, -1.0, 1.0);
    auto gamma = uniform(rng, {1, in.c, 1, 1}, 0.5, 1.5);
    auto beta = uniform(rng, {1, in.c, 1, 1}, -0.5, 0.5);
    const double eps = 1e-5;

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) {
        BNRunningT<double> running;
        auto out = batchnorm2d<double>(v[0], v[1].data(), v[2].data(), running,
                                       BNMode::train, eps, 0.9, nullptr, false);
        return weighted_sum(out, r);
    };
    p.gradients = [=](const std::vector<DTensor>& v) {
        BNRunningT<double> running;
        BNBatchStatsT<double> stats;
        batchnorm2d<double>(v[0], v[1].data(), v[2].data(), running, BNMode::train, eps,
                            0.9, &stats, false);
        auto g = batchnorm2d_backward<double>(v[0], v[1].data(), stats, eps, r);
        return std::vector<DTensor>{g.input, bias_to_tensor(g.gamma), bias_to_tensor(g.beta)};
    };
    return grad_check(p, {x, gamma, beta}, 1e-4);
}

double check_maxpool(std::mt19937& rng) {
    const TensorShape in = random_shape(rng);
    const DTensor r = uniform(rng, {in.n, in.c, in.h / 2, in.w / 2}, -1.0, 1.0);
    auto x = uniform(rng, in, -1.0, 1.0);
    separate_pool_windows(x, 1e-3);

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) {
        return weighted_sum(maxpool2(v[0]).output, r);
    };
    p.gradients = [=](const std::vector<DTensor>& v) {
        auto pooled = maxpool2(v[0]);
        return std::vector<DTensor>{maxpool2_backward(pooled.indices, v[0].shape(), r)};
    };
    return grad_check(p, {x}, 1e-4);
}

double check_softmax(std::mt19937& rng) {
    TensorShape in = random_shape(rng);
    in.c = std::max(in.c, 2);
    const DTensor r = uniform(rng, in, -1.0, 1.0);
    auto x = uniform(rng, in, -2.0, 2.0);

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) {
        return weighted_sum(softmax_channels(v[0]), r);
    };
    p.gradients = [=](const std::vector<DTensor>& v) {
        return std::vector<DTensor>{softmax_channels_backward(softmax_channels(v[0]), r)};
    };
    return grad_check(p, {x}, 1e-4);
}

double check_add(std::mt19937& rng) {
    const TensorShape in = random_shape(rng);
    const DTensor r = uniform(rng, in, -1.0, 1.0);
    auto a = uniform(rng, in, -1.0, 1.0);
    auto b = uniform(rng, in, -1.0, 1.0);

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) { return weighted_sum(add(v[0], v[1]), r); };
    p.gradients = [=](const std::vector<DTensor>&) {
        return std::vector<DTensor>{r, r};
    };
    return grad_check(p, {a, b}, 1e-4);
}

double check_dice(std::mt19937& rng) {
    const int hw = 8;
    const TensorShape shape{1, 2, hw, hw};
    auto prob = uniform(rng, shape, 0.05, 0.95);
    DTensor gt(shape);
    DTensor fov(1, 1, hw, hw);
    std::bernoulli_distribution coin(0.4), keep(0.85);
    for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
            const bool vessel = coin(rng);
            gt.at(0, vessel ? 1 : 0, y, x) = 1.0;
            fov.at(0, 0, y, x) = keep(rng) ? 1.0 : 0.0;
        }
    }
    fov.at(0, 0, 0, 0) = 1.0;  // never empty

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) {
        return soft_dice_loss<double>(v[0], gt, fov, 1.0).loss;
    };
    p.gradients = [=](const std::vector<DTensor>& v) {
        return std::vector<DTensor>{soft_dice_loss<double>(v[0], gt, fov, 1.0).d_prob};
    };
    return grad_check(p, {prob}, 1e-4);
}

// Whole tiny network, both passes, through dice loss. Parameters are the
// check inputs; the image is held fixed.
double check_end_to_end(std::mt19937& rng, std::uint32_t build_seed) {
    NetworkConfig cfg = NetworkConfig::tiny();
    cfg.seed = build_seed;
    ModelT<double> model = build_network(cfg).cast<double>();
    // At width 2 some channels die (all-zero after ReLU); with the production
    // BN eps their 1/sqrt(var+eps) factor reaches ~316 per stage and the
    // resulting curvature exceeds what central differences can resolve. A
    // larger eps bounds the amplification; the backward code path is the same.
    model.bn_eps = 1e-2;

    const TensorShape img_shape{1, 3, 8, 8};
    const DTensor image = uniform(rng, img_shape, 0.0, 1.0);
    DTensor gt(1, 2, 8, 8);
    DTensor fov = DTensor::full({1, 1, 8, 8}, 1.0);
    std::bernoulli_distribution coin(0.35);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) gt.at(0, coin(rng) ? 1 : 0, y, x) = 1.0;

    std::vector<DTensor> params;
    for (int i = 0; i < model.params.size(); ++i) params.push_back(model.params.tensor(i));

    auto assign = [](ModelT<double>& m, const std::vector<DTensor>& v) {
        for (int i = 0; i < m.params.size(); ++i) m.params.tensor(i) = v[i];
    };

    GradCheckProblem p;
    p.value = [=](const std::vector<DTensor>& v) mutable {
        assign(model, v);
        auto prob = forward<double>(model, image, 2, BNMode::train, nullptr, false);
        return soft_dice_loss<double>(prob, gt, fov, 1.0).loss;
    };
    p.gradients = [=](const std::vector<DTensor>& v) mutable {
        assign(model, v);
        GraphTapeT<double> tape;
        auto prob = forward(model, image, 2, BNMode::train, &tape, false);
        auto dice = soft_dice_loss<double>(prob, gt, fov, 1.0);
        auto grads = backward(model, tape, dice.d_prob);
        std::vector<DTensor> out;
        for (int i = 0; i < grads.size(); ++i) out.push_back(std::move(grads.tensor(i)));
        return out;
    };
    return grad_check(p, params, 1e-6);
}

}  // namespace

std::vector<SelfCheckItem> run_self_check(const SelfCheckOptions& options) {
    struct KernelCheck {
        const char* name;
        double (*fn)(std::mt19937&);
    };
    const KernelCheck kernel_checks[] = {
        {"conv2d", check_conv2d},
        {"conv_transpose2d", check_conv_transpose},
        {"relu", check_relu},
        {"batchnorm2d", check_batchnorm},
        {"maxpool2", check_maxpool},
        {"softmax_channels", check_softmax},
        {"add", check_add},
        {"soft_dice_loss", check_dice},
    };

    std::vector<SelfCheckItem> items;
    for (const auto& check : kernel_checks) {
        SelfCheckItem item{check.name, 0.0, 1e-4, options.kernel_seeds};
        for (int s = 0; s < options.kernel_seeds; ++s) {
            std::mt19937 rng(0xC0FFEEu + 97 * s);
            item.max_err = std::max(item.max_err, check.fn(rng));
        }
        items.push_back(item);
    }

    SelfCheckItem e2e{"end_to_end", 0.0, 1e-3, options.end_to_end_seeds};
    for (int s = 0; s < options.end_to_end_seeds; ++s) {
        std::mt19937 rng(0xE2Eu + 131 * s);
        e2e.max_err = std::max(e2e.max_err, check_end_to_end(rng, 1000 + s));
    }
    items.push_back(e2e);
    return items;
}

}  // namespace lmbis
