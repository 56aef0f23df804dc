#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lmbis/tensor.hpp"

namespace lmbis {

// Convolutions are cross-correlations (no kernel flip). In-network layers
// use stride 1 with zero padding (k-1)/2 so spatial size is preserved.
struct ConvSpec {
    int stride = 1;
    int padding = 0;

    static ConvSpec same(int kernel) {
        if (kernel % 2 == 0)
            throw ShapeError("same padding requires an odd kernel, got " +
                             std::to_string(kernel));
        return ConvSpec{1, (kernel - 1) / 2};
    }
};

template <typename T>
struct ConvParamsT {
    TensorT<T> weights;   // (out_channels, in_channels, k, k)
    std::vector<T> bias;  // out_channels
    ConvSpec spec{};
};

using ConvParams = ConvParamsT<float>;

template <typename T>
struct ConvGradsT {
    TensorT<T> input;
    TensorT<T> weights;
    std::vector<T> bias;
};

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights,
                  std::span<const T> bias, ConvSpec spec);

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights,
                  const std::vector<T>& bias, ConvSpec spec) {
    return conv2d(input, weights, std::span<const T>(bias), spec);
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvParamsT<T>& params) {
    return conv2d(input, params.weights, std::span<const T>(params.bias), params.spec);
}

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                              ConvSpec spec, const TensorT<T>& upstream);

// Transposed convolution, fixed 2x2 kernel with stride 2: exact x2 spatial
// upsampling, adjoint of the matching stride-2 convolution.
template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const TensorT<T>& weights,
                            std::span<const T> bias);

template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const TensorT<T>& weights,
                            const std::vector<T>& bias) {
    return conv_transpose2d(input, weights, std::span<const T>(bias));
}

template <typename T>
ConvGradsT<T> conv_transpose2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                                        const TensorT<T>& upstream);

template <typename T>
TensorT<T> relu(const TensorT<T>& input);

// Subgradient at 0 is 0: upstream is gated by (input > 0).
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& upstream);

enum class BNMode { train, infer };

// Running statistics, updated by exponential moving average in train mode.
// Not trainable; gamma/beta live with the model parameters.
template <typename T>
struct BNRunningT {
    std::vector<T> mean;
    std::vector<T> var;
    bool initialized = false;
};

using BNRunning = BNRunningT<float>;

// Per-batch statistics saved by the train-mode forward for the backward pass.
template <typename T>
struct BNBatchStatsT {
    std::vector<T> mean;
    std::vector<T> var;  // biased (population) variance
};

template <typename T>
struct BNGradsT {
    TensorT<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

inline constexpr float kBNDefaultEps = 1e-5f;
inline constexpr float kBNDefaultMomentum = 0.9f;

template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& input, std::span<const T> gamma,
                       std::span<const T> beta, BNRunningT<T>& running, BNMode mode,
                       T eps, T momentum, BNBatchStatsT<T>* saved = nullptr,
                       bool update_running = true);

template <typename T>
BNGradsT<T> batchnorm2d_backward(const TensorT<T>& input, std::span<const T> gamma,
                                 const BNBatchStatsT<T>& stats, T eps,
                                 const TensorT<T>& upstream);

// Infer-mode backward: the normalization is an affine map of the input.
template <typename T>
BNGradsT<T> batchnorm2d_backward_infer(const TensorT<T>& input, std::span<const T> gamma,
                                       const BNRunningT<T>& running, T eps,
                                       const TensorT<T>& upstream);

// Bundled form: affine parameters and running statistics in one value.
template <typename T>
struct BatchNormStateT {
    std::vector<T> gamma;
    std::vector<T> beta;
    BNRunningT<T> running;
    T eps = T(kBNDefaultEps);
    T momentum = T(kBNDefaultMomentum);
    BNMode mode = BNMode::train;
};

using BatchNormState = BatchNormStateT<float>;

template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& input, BatchNormStateT<T>& state,
                       BNBatchStatsT<T>* saved = nullptr) {
    return batchnorm2d<T>(input, std::span<const T>(state.gamma),
                          std::span<const T>(state.beta), state.running, state.mode,
                          state.eps, state.momentum, saved);
}

// 2x2 max pooling with stride 2. Indices record the in-plane winner position
// (h * W + w) per output cell; ties resolve to the first maximum in row-major
// scan order.
template <typename T>
struct MaxPoolOutT {
    TensorT<T> output;
    std::vector<std::uint32_t> indices;
};

template <typename T>
MaxPoolOutT<T> maxpool2(const TensorT<T>& input);

template <typename T>
TensorT<T> maxpool2_backward(const std::vector<std::uint32_t>& indices,
                             TensorShape input_shape, const TensorT<T>& upstream);

// Channel softmax with max-subtraction; per-position channel sums are 1.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& input);

template <typename T>
TensorT<T> softmax_channels_backward(const TensorT<T>& softmax_out,
                                     const TensorT<T>& upstream);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

}  // namespace lmbis
