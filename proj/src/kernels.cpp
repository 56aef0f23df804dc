#include "lmbis/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lmbis {

namespace {

int conv_out_dim(int in, int k, int stride, int pad, const char* where) {
    const int span = in + 2 * pad - k;
    if (span < 0 || span % stride != 0)
        throw ShapeError(std::string(where) + ": kernel " + std::to_string(k) +
                         " stride " + std::to_string(stride) + " pad " +
                         std::to_string(pad) + " does not tile input dim " +
                         std::to_string(in));
    return span / stride + 1;
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights,
                  std::span<const T> bias, ConvSpec spec) {
    const int cout = weights.batch();
    const int cin = weights.channels();
    const int k = weights.height();
    if (weights.width() != k)
        throw ShapeError("conv2d: non-square kernel");
    if (input.channels() != cin)
        throw ShapeError("conv2d: input has " + std::to_string(input.channels()) +
                         " channels, weights expect " + std::to_string(cin));
    if (static_cast<int>(bias.size()) != cout)
        throw ShapeError("conv2d: bias length != out_channels");
    if (k % 2 == 0 && spec.stride == 1 && spec.padding != 0)
        throw ShapeError("conv2d: even kernel cannot have same padding");

    const int oh = conv_out_dim(input.height(), k, spec.stride, spec.padding, "conv2d");
    const int ow = conv_out_dim(input.width(), k, spec.stride, spec.padding, "conv2d");
    TensorT<T> out(input.batch(), cout, oh, ow);

    const int ih = input.height(), iw = input.width();
    for (int n = 0; n < input.batch(); ++n) {
        for (int co = 0; co < cout; ++co) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    T acc = bias[co];
                    const int y0 = y * spec.stride - spec.padding;
                    const int x0 = x * spec.stride - spec.padding;
                    for (int ci = 0; ci < cin; ++ci) {
                        for (int dy = 0; dy < k; ++dy) {
                            const int sy = y0 + dy;
                            if (sy < 0 || sy >= ih) continue;
                            for (int dx = 0; dx < k; ++dx) {
                                const int sx = x0 + dx;
                                if (sx < 0 || sx >= iw) continue;
                                acc += input.at(n, ci, sy, sx) * weights.at(co, ci, dy, dx);
                            }
                        }
                    }
                    out.at(n, co, y, x) = acc;
                }
            }
        }
    }
    require_finite(out, "conv2d");
    return out;
}

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                              ConvSpec spec, const TensorT<T>& upstream) {
    const int cout = weights.batch();
    const int cin = weights.channels();
    const int k = weights.height();
    const int oh = conv_out_dim(input.height(), k, spec.stride, spec.padding, "conv2d_backward");
    const int ow = conv_out_dim(input.width(), k, spec.stride, spec.padding, "conv2d_backward");
    if (upstream.shape() != TensorShape{input.batch(), cout, oh, ow})
        throw ShapeError("conv2d_backward: upstream shape " + upstream.shape().str() +
                         " does not match conv output");

    ConvGradsT<T> g;
    g.input = TensorT<T>(input.shape());
    g.weights = TensorT<T>(weights.shape());
    g.bias.assign(cout, T(0));

    const int ih = input.height(), iw = input.width();
    for (int n = 0; n < input.batch(); ++n) {
        for (int co = 0; co < cout; ++co) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    const T up = upstream.at(n, co, y, x);
                    if (up == T(0)) continue;
                    g.bias[co] += up;
                    const int y0 = y * spec.stride - spec.padding;
                    const int x0 = x * spec.stride - spec.padding;
                    for (int ci = 0; ci < cin; ++ci) {
                        for (int dy = 0; dy < k; ++dy) {
                            const int sy = y0 + dy;
                            if (sy < 0 || sy >= ih) continue;
                            for (int dx = 0; dx < k; ++dx) {
                                const int sx = x0 + dx;
                                if (sx < 0 || sx >= iw) continue;
                                g.input.at(n, ci, sy, sx) += up * weights.at(co, ci, dy, dx);
                                g.weights.at(co, ci, dy, dx) += up * input.at(n, ci, sy, sx);
                            }
                        }
                    }
                }
            }
        }
    }
    require_finite(g.input, "conv2d_backward");
    require_finite(g.weights, "conv2d_backward");
    return g;
}

template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const TensorT<T>& weights,
                            std::span<const T> bias) {
    const int cout = weights.batch();
    const int cin = weights.channels();
    if (weights.height() != 2 || weights.width() != 2)
        throw ShapeError("conv_transpose2d: kernel is fixed at 2x2");
    if (input.channels() != cin)
        throw ShapeError("conv_transpose2d: input has " + std::to_string(input.channels()) +
                         " channels, weights expect " + std::to_string(cin));
    if (static_cast<int>(bias.size()) != cout)
        throw ShapeError("conv_transpose2d: bias length != out_channels");

    TensorT<T> out(input.batch(), cout, input.height() * 2, input.width() * 2);
    for (int n = 0; n < input.batch(); ++n)
        for (int co = 0; co < cout; ++co)
            for (int y = 0; y < out.height(); ++y)
                for (int x = 0; x < out.width(); ++x)
                    out.at(n, co, y, x) = bias[co];

    for (int n = 0; n < input.batch(); ++n) {
        for (int ci = 0; ci < cin; ++ci) {
            for (int y = 0; y < input.height(); ++y) {
                for (int x = 0; x < input.width(); ++x) {
                    const T v = input.at(n, ci, y, x);
                    if (v == T(0)) continue;
                    for (int co = 0; co < cout; ++co) {
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                out.at(n, co, 2 * y + dy, 2 * x + dx) +=
                                    v * weights.at(co, ci, dy, dx);
                    }
                }
            }
        }
    }
    require_finite(out, "conv_transpose2d");
    return out;
}

template <typename T>
ConvGradsT<T> conv_transpose2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                                        const TensorT<T>& upstream) {
    const int cout = weights.batch();
    const int cin = weights.channels();
    if (upstream.shape() !=
        TensorShape{input.batch(), cout, input.height() * 2, input.width() * 2})
        throw ShapeError("conv_transpose2d_backward: upstream shape mismatch");

    ConvGradsT<T> g;
    g.input = TensorT<T>(input.shape());
    g.weights = TensorT<T>(weights.shape());
    g.bias.assign(cout, T(0));

    for (int n = 0; n < input.batch(); ++n)
        for (int co = 0; co < cout; ++co)
            for (int y = 0; y < upstream.height(); ++y)
                for (int x = 0; x < upstream.width(); ++x)
                    g.bias[co] += upstream.at(n, co, y, x);

    for (int n = 0; n < input.batch(); ++n) {
        for (int ci = 0; ci < cin; ++ci) {
            for (int y = 0; y < input.height(); ++y) {
                for (int x = 0; x < input.width(); ++x) {
                    T acc = T(0);
                    const T v = input.at(n, ci, y, x);
                    for (int co = 0; co < cout; ++co) {
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                const T up = upstream.at(n, co, 2 * y + dy, 2 * x + dx);
                                acc += up * weights.at(co, ci, dy, dx);
                                g.weights.at(co, ci, dy, dx) += up * v;
                            }
                        }
                    }
                    g.input.at(n, ci, y, x) = acc;
                }
            }
        }
    }
    require_finite(g.input, "conv_transpose2d_backward");
    require_finite(g.weights, "conv_transpose2d_backward");
    return g;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
    TensorT<T> out(input.shape());
    auto src = input.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = src[i] > T(0) ? src[i] : T(0);
    require_finite(out, "relu");
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& upstream) {
    require_same_shape(input, upstream, "relu_backward");
    TensorT<T> out(input.shape());
    auto x = input.data();
    auto up = upstream.data();
    auto dst = out.data();
#ifdef LMBIS_FAULT_INJECT_GRAD
    // Deliberately wrong gradient; used to prove the self-check detects faults.
    const T gain = T(1.01);
#else
    const T gain = T(1);
#endif
    for (std::size_t i = 0; i < x.size(); ++i)
        dst[i] = x[i] > T(0) ? up[i] * gain : T(0);
    return out;
}

template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& input, std::span<const T> gamma,
                       std::span<const T> beta, BNRunningT<T>& running, BNMode mode,
                       T eps, T momentum, BNBatchStatsT<T>* saved, bool update_running) {
    const int c = input.channels();
    if (static_cast<int>(gamma.size()) != c || static_cast<int>(beta.size()) != c)
        throw ShapeError("batchnorm2d: gamma/beta length != channels");
    if (eps <= T(0))
        throw std::invalid_argument("batchnorm2d: eps must be positive");

    const std::size_t plane = static_cast<std::size_t>(input.height()) * input.width();
    const std::size_t per_channel = plane * input.batch();
    if (per_channel == 0)
        throw ShapeError("batchnorm2d: empty input");

    std::vector<T> mean(c), var(c);
    if (mode == BNMode::train) {
        for (int ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (int n = 0; n < input.batch(); ++n)
                for (int y = 0; y < input.height(); ++y)
                    for (int x = 0; x < input.width(); ++x)
                        sum += input.at(n, ch, y, x);
            const double mu = sum / static_cast<double>(per_channel);
            double sq = 0.0;
            for (int n = 0; n < input.batch(); ++n)
                for (int y = 0; y < input.height(); ++y)
                    for (int x = 0; x < input.width(); ++x) {
                        const double d = input.at(n, ch, y, x) - mu;
                        sq += d * d;
                    }
            mean[ch] = static_cast<T>(mu);
            var[ch] = static_cast<T>(sq / static_cast<double>(per_channel));
        }
        if (update_running) {
            if (!running.initialized) {
                running.mean = mean;
                running.var = var;
                running.initialized = true;
            } else {
                for (int ch = 0; ch < c; ++ch) {
                    running.mean[ch] = momentum * running.mean[ch] + (T(1) - momentum) * mean[ch];
                    running.var[ch] = momentum * running.var[ch] + (T(1) - momentum) * var[ch];
                }
            }
        }
        if (saved) {
            saved->mean = mean;
            saved->var = var;
        }
    } else {
        if (!running.initialized)
            throw std::logic_error("batchnorm2d: infer mode with uninitialized running stats");
        mean = running.mean;
        var = running.var;
    }

    TensorT<T> out(input.shape());
    for (int ch = 0; ch < c; ++ch) {
        const T inv_std = T(1) / std::sqrt(var[ch] + eps);
        const T g = gamma[ch], b = beta[ch], mu = mean[ch];
        for (int n = 0; n < input.batch(); ++n)
            for (int y = 0; y < input.height(); ++y)
                for (int x = 0; x < input.width(); ++x)
                    out.at(n, ch, y, x) = (input.at(n, ch, y, x) - mu) * inv_std * g + b;
    }
    require_finite(out, "batchnorm2d");
    return out;
}

template <typename T>
BNGradsT<T> batchnorm2d_backward(const TensorT<T>& input, std::span<const T> gamma,
                                 const BNBatchStatsT<T>& stats, T eps,
                                 const TensorT<T>& upstream) {
    require_same_shape(input, upstream, "batchnorm2d_backward");
    const int c = input.channels();
    const std::size_t per_channel =
        static_cast<std::size_t>(input.batch()) * input.height() * input.width();
    const T inv_n = T(1) / static_cast<T>(per_channel);

    BNGradsT<T> g;
    g.input = TensorT<T>(input.shape());
    g.gamma.assign(c, T(0));
    g.beta.assign(c, T(0));

    for (int ch = 0; ch < c; ++ch) {
        const T mu = stats.mean[ch];
        const T inv_std = T(1) / std::sqrt(stats.var[ch] + eps);

        // dL/dxhat = dy * gamma; reduce to the two channel sums the full
        // batch-statistics chain rule needs.
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int n = 0; n < input.batch(); ++n) {
            for (int y = 0; y < input.height(); ++y) {
                for (int x = 0; x < input.width(); ++x) {
                    const T xhat = (input.at(n, ch, y, x) - mu) * inv_std;
                    const T dy = upstream.at(n, ch, y, x);
                    const T dxhat = dy * gamma[ch];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
                    g.gamma[ch] += dy * xhat;
                    g.beta[ch] += dy;
                }
            }
        }
        const T s1 = static_cast<T>(sum_dxhat);
        const T s2 = static_cast<T>(sum_dxhat_xhat);
        for (int n = 0; n < input.batch(); ++n) {
            for (int y = 0; y < input.height(); ++y) {
                for (int x = 0; x < input.width(); ++x) {
                    const T xhat = (input.at(n, ch, y, x) - mu) * inv_std;
                    const T dxhat = upstream.at(n, ch, y, x) * gamma[ch];
                    g.input.at(n, ch, y, x) =
                        inv_std * (dxhat - inv_n * s1 - inv_n * xhat * s2);
                }
            }
        }
    }
    require_finite(g.input, "batchnorm2d_backward");
    return g;
}

template <typename T>
BNGradsT<T> batchnorm2d_backward_infer(const TensorT<T>& input, std::span<const T> gamma,
                                       const BNRunningT<T>& running, T eps,
                                       const TensorT<T>& upstream) {
    require_same_shape(input, upstream, "batchnorm2d_backward_infer");
    if (!running.initialized)
        throw std::logic_error("batchnorm2d_backward_infer: uninitialized running stats");
    const int c = input.channels();
    BNGradsT<T> g;
    g.input = TensorT<T>(input.shape());
    g.gamma.assign(c, T(0));
    g.beta.assign(c, T(0));
    for (int ch = 0; ch < c; ++ch) {
        const T inv_std = T(1) / std::sqrt(running.var[ch] + eps);
        const T scale = gamma[ch] * inv_std;
        for (int n = 0; n < input.batch(); ++n) {
            for (int y = 0; y < input.height(); ++y) {
                for (int x = 0; x < input.width(); ++x) {
                    const T dy = upstream.at(n, ch, y, x);
                    const T xhat = (input.at(n, ch, y, x) - running.mean[ch]) * inv_std;
                    g.input.at(n, ch, y, x) = dy * scale;
                    g.gamma[ch] += dy * xhat;
                    g.beta[ch] += dy;
                }
            }
        }
    }
    return g;
}

template <typename T>
MaxPoolOutT<T> maxpool2(const TensorT<T>& input) {
    if (input.height() % 2 != 0 || input.width() % 2 != 0)
        throw ShapeError("maxpool2: spatial dims must be even, got " + input.shape().str());

    MaxPoolOutT<T> r;
    r.output = TensorT<T>(input.batch(), input.channels(), input.height() / 2, input.width() / 2);
    r.indices.resize(r.output.size());

    std::size_t cell = 0;
    for (int n = 0; n < input.batch(); ++n) {
        for (int c = 0; c < input.channels(); ++c) {
            for (int y = 0; y < r.output.height(); ++y) {
                for (int x = 0; x < r.output.width(); ++x, ++cell) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::uint32_t best_idx = 0;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const int sy = 2 * y + dy, sx = 2 * x + dx;
                            const T v = input.at(n, c, sy, sx);
                            if (v > best) {  // strict: first max wins on ties
                                best = v;
                                best_idx = static_cast<std::uint32_t>(sy * input.width() + sx);
                            }
                        }
                    }
                    r.output.at(n, c, y, x) = best;
                    r.indices[cell] = best_idx;
                }
            }
        }
    }
    require_finite(r.output, "maxpool2");
    return r;
}

template <typename T>
TensorT<T> maxpool2_backward(const std::vector<std::uint32_t>& indices,
                             TensorShape input_shape, const TensorT<T>& upstream) {
    const TensorShape expect{input_shape.n, input_shape.c, input_shape.h / 2,
                             input_shape.w / 2};
    if (upstream.shape() != expect)
        throw ShapeError("maxpool2_backward: upstream shape " + upstream.shape().str() +
                         " does not match pooled shape " + expect.str());
    if (indices.size() != upstream.size())
        throw ShapeError("maxpool2_backward: index count mismatch");

    TensorT<T> out(input_shape);
    const std::size_t plane = static_cast<std::size_t>(input_shape.h) * input_shape.w;
    std::size_t cell = 0;
    for (int n = 0; n < expect.n; ++n) {
        for (int c = 0; c < expect.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * input_shape.c + c) * plane;
            for (int y = 0; y < expect.h; ++y)
                for (int x = 0; x < expect.w; ++x, ++cell)
                    out[base + indices[cell]] += upstream.at(n, c, y, x);
        }
    }
    return out;
}

template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& input) {
    if (input.channels() < 2)
        throw ShapeError("softmax_channels: needs at least 2 channels");
    TensorT<T> out(input.shape());
    for (int n = 0; n < input.batch(); ++n) {
        for (int y = 0; y < input.height(); ++y) {
            for (int x = 0; x < input.width(); ++x) {
                T mx = input.at(n, 0, y, x);
                for (int c = 1; c < input.channels(); ++c)
                    mx = std::max(mx, input.at(n, c, y, x));
                T denom = T(0);
                for (int c = 0; c < input.channels(); ++c) {
                    const T e = std::exp(input.at(n, c, y, x) - mx);
                    out.at(n, c, y, x) = e;
                    denom += e;
                }
                for (int c = 0; c < input.channels(); ++c)
                    out.at(n, c, y, x) /= denom;
            }
        }
    }
    require_finite(out, "softmax_channels");
    return out;
}

template <typename T>
TensorT<T> softmax_channels_backward(const TensorT<T>& softmax_out,
                                     const TensorT<T>& upstream) {
    require_same_shape(softmax_out, upstream, "softmax_channels_backward");
    TensorT<T> out(softmax_out.shape());
    for (int n = 0; n < softmax_out.batch(); ++n) {
        for (int y = 0; y < softmax_out.height(); ++y) {
            for (int x = 0; x < softmax_out.width(); ++x) {
                T dot = T(0);
                for (int c = 0; c < softmax_out.channels(); ++c)
                    dot += softmax_out.at(n, c, y, x) * upstream.at(n, c, y, x);
                for (int c = 0; c < softmax_out.channels(); ++c)
                    out.at(n, c, y, x) =
                        softmax_out.at(n, c, y, x) * (upstream.at(n, c, y, x) - dot);
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    auto pa = a.data();
    auto pb = b.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < pa.size(); ++i)
        dst[i] = pa[i] + pb[i];
    require_finite(out, "add");
    return out;
}

#define LMBIS_INSTANTIATE_KERNELS(T)                                                      \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&,                   \
                                  std::span<const T>, ConvSpec);                          \
    template ConvGradsT<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,       \
                                              ConvSpec, const TensorT<T>&);               \
    template TensorT<T> conv_transpose2d<T>(const TensorT<T>&, const TensorT<T>&,         \
                                            std::span<const T>);                          \
    template ConvGradsT<T> conv_transpose2d_backward<T>(                                  \
        const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);                         \
    template TensorT<T> relu<T>(const TensorT<T>&);                                       \
    template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);           \
    template TensorT<T> batchnorm2d<T>(const TensorT<T>&, std::span<const T>,             \
                                       std::span<const T>, BNRunningT<T>&, BNMode, T, T,  \
                                       BNBatchStatsT<T>*, bool);                          \
    template BNGradsT<T> batchnorm2d_backward<T>(const TensorT<T>&, std::span<const T>,   \
                                                 const BNBatchStatsT<T>&, T,              \
                                                 const TensorT<T>&);                      \
    template BNGradsT<T> batchnorm2d_backward_infer<T>(                                   \
        const TensorT<T>&, std::span<const T>, const BNRunningT<T>&, T,                   \
        const TensorT<T>&);                                                               \
    template MaxPoolOutT<T> maxpool2<T>(const TensorT<T>&);                               \
    template TensorT<T> maxpool2_backward<T>(const std::vector<std::uint32_t>&,           \
                                             TensorShape, const TensorT<T>&);             \
    template TensorT<T> softmax_channels<T>(const TensorT<T>&);                           \
    template TensorT<T> softmax_channels_backward<T>(const TensorT<T>&,                   \
                                                     const TensorT<T>&);                  \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);

LMBIS_INSTANTIATE_KERNELS(float)
LMBIS_INSTANTIATE_KERNELS(double)

#undef LMBIS_INSTANTIATE_KERNELS

}  // namespace lmbis
